"""Optimal control of the reduced model by projected gradient descent.

Controls live on a grid ``t_0 = T_c < ... < t_K = T``; value ``u_j`` holds
on ``[t_j, t_{j+1})``. The state is advanced by RK4 sub-steps inside each
interval, the cost uses the trapezoidal rule on the grid, and the total
variation is smoothed as ``sqrt(eta + x**2)``. Gradients are the exact
derivatives of this discrete cost, obtained by a backward (adjoint) sweep.
"""
import logging
import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import _kernels
from .controls import ControlSchedule, constant_schedule, uniform_grid, v, v_prime
from .reduced import DEFAULT_DT_INT, RmRunConfig, integrate, n_substeps

__all__ = [
    "OcpConfig",
    "AdjointTrajectory",
    "ForwardSolution",
    "OcpResult",
    "v",
    "v_prime",
    "quadrature_weights",
    "project",
    "smoothed_tv",
    "cost_from_trajectory",
    "forward",
    "cost",
    "adjoint_solve",
    "gradient",
    "golden_section",
    "line_search",
    "solve",
    "initial_state",
]

log = logging.getLogger(__name__)

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class OcpConfig:
    """Scalars of the regularized control problem (defaults: the reinforcement runs)."""

    n: float = 0.5
    beta0: float = 0.5
    kappa0: float = 1.0
    s_c: float = 0.9995
    i_c: float = 0.0005
    t_c: float = 1.0
    t_horizon: float = 200.0
    dt: float = 2.0 / 7.0
    dt_int: float = DEFAULT_DT_INT
    gamma: float = 1.0 / 6.0
    omega_beta: float = 0.2
    omega_kappa: float = 0.2
    omega_hosp: float = 0.6
    i_hosp: float = 0.025
    i_max: float = 0.1
    epsilon: float = 1e-2
    delta: float = 1e-7
    eta: float = 1e-6
    b_min: float = 0.1
    k_max: float = 10.0
    n_g: int = 50
    tau_g: float = 1e-4
    rho_max: float = 1.0
    rho_cap: float = 64.0
    rho_floor: float = 2.0 ** -30
    ls_rel_tol: float = 1e-3
    ls_max_evals: int = 40

    def __post_init__(self):
        self.validate()

    def violations(self):
        out = []
        if not 0 < self.b_min <= 1:
            out.append(f"b_min={self.b_min} must lie in (0, 1]")
        if not self.k_max > 1:
            out.append(f"k_max={self.k_max} must exceed 1")
        if not 0 < self.i_hosp < self.i_max <= 1:
            out.append(f"need 0 < i_hosp ({self.i_hosp}) < i_max ({self.i_max}) <= 1")
        if not self.t_c < self.t_horizon:
            out.append(f"t_c={self.t_c} must precede t_horizon={self.t_horizon}")
        for name in ("omega_beta", "omega_kappa", "omega_hosp", "delta"):
            if getattr(self, name) < 0:
                out.append(f"{name}={getattr(self, name)} must be non-negative")
        for name in ("epsilon", "eta", "dt", "dt_int", "gamma", "beta0", "kappa0", "rho_max", "rho_floor",
                     "ls_rel_tol"):
            if not getattr(self, name) > 0:
                out.append(f"{name}={getattr(self, name)} must be positive")
        if not 0 < self.n <= 1:
            out.append(f"n={self.n} must lie in (0, 1]")
        if self.n_g < 0:
            out.append("n_g must be non-negative")
        return out

    def validate(self):
        problems = self.violations()
        if problems:
            raise ValueError("invalid OcpConfig: " + "; ".join(problems))

    def grid(self):
        return uniform_grid(self.t_c, self.t_horizon, self.dt)

    def replace(self, **changes):
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return OcpConfig(**values)


@dataclass(eq=False)
class AdjointTrajectory:
    grid: np.ndarray
    p1: np.ndarray
    q1: np.ndarray
    p2: np.ndarray
    q2: np.ndarray


@dataclass(eq=False)
class ForwardSolution:
    grid: np.ndarray
    s: np.ndarray
    i: np.ndarray
    sub_states: np.ndarray
    beta_int: np.ndarray
    kappa_int: np.ndarray
    nsub: np.ndarray


@dataclass(eq=False)
class OcpResult:
    schedule: ControlSchedule
    costs: list
    rhos: list = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False


def initial_state(model, config, s0, i0):
    """Uncontrolled reduced state at ``t_c`` starting from ``(s0, i0)`` at time 0."""
    if config.t_c <= 0:
        return float(s0), float(i0)
    cfg = RmRunConfig(model=model, n=config.n, gamma=config.gamma, beta=config.beta0,
                      kappa=config.kappa0, t0=0.0, t1=config.t_c, s0=s0, i0=i0,
                      dt_int=config.dt_int)
    traj = integrate(cfg, times=np.array([0.0, config.t_c]))
    return float(traj.s[-1]), float(traj.i[-1])


def quadrature_weights(grid):
    """Trapezoidal weights on a (possibly non-uniform) grid."""
    h = np.diff(grid)
    w = np.zeros(grid.size)
    w[:-1] += h / 2.0
    w[1:] += h / 2.0
    return w


def project(b, k, config):
    return np.clip(b, config.b_min, 1.0), np.clip(k, 1.0, config.k_max)


def smoothed_tv(q, eta):
    return float(np.sum(np.sqrt(eta + np.diff(q) ** 2)))


def _smoothed_tv_grad(q, eta):
    x = np.diff(q)
    g = x / np.sqrt(eta + x * x)
    out = np.zeros(q.size)
    out[1:] += g
    out[:-1] -= g
    return out


def _penalty(i_values, config):
    hosp = np.maximum(i_values / config.i_hosp - 1.0, 0.0)
    cap = np.maximum(i_values / config.i_max - 1.0, 0.0)
    return hosp, cap


def cost_from_trajectory(grid, b, k, i_values, config):
    """``(J, J_delta)`` for given controls and infected proportions on ``grid``."""
    w = quadrature_weights(grid)
    hosp, cap = _penalty(np.asarray(i_values, dtype=float), config)
    integrand = (config.omega_beta * (1.0 - b) ** 2 + config.omega_kappa * (k - 1.0) ** 2
                 + config.omega_hosp * hosp ** 2 + cap ** 2 / config.epsilon)
    J = 0.5 * float(w @ integrand)
    J_delta = J + config.delta * (smoothed_tv(b, config.eta) + smoothed_tv(k, config.eta))
    return J, J_delta


def _effective_params(b, k, config):
    # interval j uses the value at its left end
    beta_int = config.beta0 * b[:-1] * v(k[:-1])
    kappa_int = config.kappa0 * k[:-1]
    return np.ascontiguousarray(beta_int), np.ascontiguousarray(kappa_int)


def _forward_arrays(grid, b, k, config, model):
    beta_int, kappa_int = _effective_params(b, k, config)
    nsub = n_substeps(np.diff(grid), config.dt_int)
    Y, sub, ok = _kernels.rk4_path(float(config.s_c), float(config.i_c), grid, beta_int, kappa_int,
                                   nsub, float(config.n), float(config.gamma), 0.0,
                                   *model.kernel_params(), True)
    if not ok:
        raise FloatingPointError("reduced model diverged during the controlled forward solve")
    return ForwardSolution(grid, Y[:, 0].copy(), Y[:, 1].copy(), sub, beta_int, kappa_int, nsub)


def forward(schedule, config, model):
    """Controlled reduced trajectory on the schedule grid."""
    return _forward_arrays(schedule.grid, schedule.b_values, schedule.k_values, config, model)


def cost(schedule, config, model):
    """``(J, J_delta)`` of a schedule."""
    fw = forward(schedule, config, model)
    return cost_from_trajectory(schedule.grid, schedule.b_values, schedule.k_values, fw.i, config)


def _state_cost_gradient(grid, i_values, config):
    w = quadrature_weights(grid)
    hosp, cap = _penalty(i_values, config)
    dJdY = np.zeros((grid.size, 2))
    dJdY[:, 1] = w * (config.omega_hosp * hosp / config.i_hosp + cap / (config.epsilon * config.i_max))
    return dJdY


def adjoint_solve(fw, schedule, config, model):
    """Backward sweep from ``T`` to ``T_c`` with zero terminal data.

    The two adjoint pairs share one linear system and one source, so
    ``(p1, q1)`` and ``(p2, q2)`` coincide.
    """
    dJdY = _state_cost_gradient(fw.grid, fw.i, config)
    P, C = _kernels.rk4_adjoint(fw.grid, fw.beta_int, fw.kappa_int, fw.nsub, float(config.n),
                                float(config.gamma), *model.kernel_params(), fw.sub_states, dJdY)
    if not np.all(np.isfinite(P)):
        raise FloatingPointError("non-finite adjoint state")
    adj = AdjointTrajectory(fw.grid, P[:, 0].copy(), P[:, 1].copy(), P[:, 0].copy(), P[:, 1].copy())
    return adj, C


def _gradient_arrays(grid, b, k, config, model, fw=None):
    if fw is None:
        fw = _forward_arrays(grid, b, k, config, model)
    _, C = adjoint_solve(fw, None, config, model)
    w = quadrature_weights(grid)
    g_b = w * config.omega_beta * (b - 1.0)
    g_k = w * config.omega_kappa * (k - 1.0)
    kk = k[:-1]
    g_b[:-1] += C[:, 0] * config.beta0 * v(kk)
    g_k[:-1] += C[:, 0] * config.beta0 * b[:-1] * v_prime(kk) + C[:, 1] * config.kappa0
    if config.delta:
        g_b += config.delta * _smoothed_tv_grad(b, config.eta)
        g_k += config.delta * _smoothed_tv_grad(k, config.eta)
    return g_b, g_k


def gradient(schedule, config, model):
    """Derivatives of the discrete ``J_delta`` with respect to every control value.

    Divide by :func:`quadrature_weights` for the pointwise ``L2`` density.
    """
    return _gradient_arrays(schedule.grid, schedule.b_values, schedule.k_values, config, model)


def golden_section(phi, a, b, tol, max_evals=None):
    """Minimize a unimodal ``phi`` on ``[a, b]`` until the bracket is at most ``tol``.

    Returns ``(x, phi(x), n_evals)`` for the best point evaluated.
    """
    a, b = min(a, b), max(a, b)
    width = b - a
    if width <= tol:
        x = 0.5 * (a + b)
        return x, phi(x), 1
    n = int(math.ceil(math.log(tol / width) / math.log(INV_PHI)))
    if max_evals is not None:
        n = max(1, min(n, max_evals - 1))
    c = b - INV_PHI * width
    d = a + INV_PHI * width
    fc, fd = phi(c), phi(d)
    evals = 2
    for _ in range(n - 1):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = phi(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = phi(d)
        evals += 1
    return (c, fc, evals) if fc <= fd else (d, fd, evals)


def line_search(phi, phi0, config):
    """Step along the descent direction; never accepts an increase over ``phi0``.

    The bracket ``[0, rho_max]`` is doubled (up to ``rho_cap``) while the
    minimizer sits at its right edge. When no point of it improves on
    ``phi0``, steps ``rho_max / 2**j`` are tried one at a time (down to
    ``rho_floor * rho_max``) and the search is repeated on ``[0, 2 rho]``
    around the first improving one.
    """
    def search(width):
        return golden_section(phi, 0.0, width, config.ls_rel_tol * width, config.ls_max_evals)[:2]

    rho_max = config.rho_max
    rho, val = search(rho_max)
    if not val < phi0:
        trial = rho_max / 2.0
        floor = config.rho_floor * config.rho_max
        while trial >= floor and not phi(trial) < phi0:
            trial /= 2.0
        if trial < floor:
            return 0.0, phi0
        rho_max = 2.0 * trial
        rho, val = search(rho_max)
        if not val < phi0:
            rho, val = trial, phi(trial)
        return rho, val
    while rho > rho_max * (1.0 - 2.0 * config.ls_rel_tol) and rho_max * 2 <= config.rho_cap:
        rho_max *= 2.0
        wider, wider_val = search(rho_max)
        if wider_val < val:
            rho, val = wider, wider_val
    return rho, val


def solve(config, model, initial_schedule=None, n_g=None, tau_g=None, callback=None):
    """Projected gradient descent with golden-section step search.

    Returns an :class:`OcpResult` with the final feasible schedule and the
    cost after every iteration (``costs[0]`` is the initial cost).
    ``callback(p, schedule, j_delta)`` is called after every iteration.
    """
    n_g = config.n_g if n_g is None else n_g
    tau_g = config.tau_g if tau_g is None else tau_g
    grid = config.grid()
    if initial_schedule is None:
        initial_schedule = constant_schedule(config.t_c, config.t_horizon, config.dt)
    if initial_schedule.grid.shape != grid.shape or not np.allclose(initial_schedule.grid, grid):
        raise ValueError("initial schedule grid does not match the configuration grid")
    if not initial_schedule.is_feasible(config.b_min, config.k_max):
        raise ValueError("initial schedule is not admissible")

    def j_delta(b, k):
        fw = _forward_arrays(grid, b, k, config, model)
        return cost_from_trajectory(grid, b, k, fw.i, config)[1], fw

    b = initial_schedule.b_values.copy()
    k = initial_schedule.k_values.copy()
    j_new, fw = j_delta(b, k)
    j0 = j_new
    j_old = math.inf
    g_b, g_k = _gradient_arrays(grid, b, k, config, model, fw)
    costs, rhos = [j0], []
    p = 0
    while p < n_g and (j_old - j_new) > tau_g * j0:
        def phi(rho):
            bb, kk = project(b - rho * g_b, k - rho * g_k, config)
            return j_delta(bb, kk)[0]

        rho, _ = line_search(phi, j_new, config)
        b, k = project(b - rho * g_b, k - rho * g_k, config)
        j_old = j_new
        j_new, fw = j_delta(b, k)
        g_b, g_k = _gradient_arrays(grid, b, k, config, model, fw)
        norm = math.sqrt(float(g_b @ g_b + g_k @ g_k))
        if norm > 0:
            g_b, g_k = g_b / norm, g_k / norm
        costs.append(j_new)
        rhos.append(rho)
        p += 1
        log.debug("ocp iter %d rho=%.4g J_delta=%.8g", p, rho, j_new)
        if callback is not None:
            callback(p, ControlSchedule(grid, b.copy(), k.copy()), j_new)
    converged = p < n_g
    return OcpResult(ControlSchedule(grid, b, k), costs, rhos, p, converged)
