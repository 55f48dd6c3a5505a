"""Reduced SIR model driven by a learned incidence, and derived quantities.

    S' = -F(S, I; n, beta, kappa) + mu (1 - S)
    I' =  F(S, I; n, beta, kappa) - (gamma + mu) I

with ``mu = 0`` except for the demographic variant used to justify the
threshold number.
"""
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .controls import uniform_grid

__all__ = [
    "StepFunction",
    "RmRunConfig",
    "RmTrajectory",
    "integrate",
    "demographic_rhs",
    "r0",
    "r0_mu",
    "critical_beta",
    "r_infinity",
    "critical_beta_grid",
    "r_infinity_grid",
    "n_substeps",
]

DEFAULT_DT_INT = 0.05
R_INF_HORIZON = 200.0


@dataclass(frozen=True)
class StepFunction:
    """``values[j]`` on ``[starts[j], starts[j + 1])``; ``values[0]`` before ``starts[0]``."""

    starts: tuple
    values: tuple

    def __post_init__(self):
        if len(self.starts) != len(self.values) or not self.starts:
            raise ValueError("starts and values must be non-empty and of equal length")
        if any(b <= a for a, b in zip(self.starts, self.starts[1:])):
            raise ValueError("starts must be strictly increasing")

    def __call__(self, t):
        idx = int(np.searchsorted(self.starts, t, side="right")) - 1
        return self.values[max(idx, 0)]

    def switch_times(self):
        return self.starts[1:]


def _as_step(value):
    if isinstance(value, StepFunction):
        return value
    return StepFunction((0.0,), (float(value),))


@dataclass
class RmRunConfig:
    model: object
    n: float
    gamma: float = 1.0 / 6.0
    beta: object = 0.5  # float or StepFunction
    kappa: object = 1.0  # float or StepFunction
    t0: float = 0.0
    t1: float = 200.0
    s0: float = 0.9995
    i0: float = 0.0005
    dt_int: float = DEFAULT_DT_INT
    dt_out: float = 2.0 / 7.0
    mu: float = 0.0

    def __post_init__(self):
        if not self.dt_int > 0:
            raise ValueError("dt_int must be positive")
        if not self.t1 > self.t0:
            raise ValueError("t1 must exceed t0")
        if self.s0 < 0 or self.i0 < 0 or self.s0 + self.i0 > 1 + 1e-12:
            raise ValueError("initial state must satisfy s0, i0 >= 0 and s0 + i0 <= 1")


@dataclass(eq=False)
class RmTrajectory:
    grid: np.ndarray
    s: np.ndarray
    i: np.ndarray

    @property
    def r(self):
        return 1.0 - self.s - self.i


def n_substeps(lengths, dt_int):
    return np.maximum(1, np.ceil(np.asarray(lengths) / dt_int - 1e-9)).astype(np.int64)


def integrate(config, times=None):
    """Fixed-step RK4 solution sampled at ``times`` (default: uniform ``dt_out`` grid).

    Switching times of step-function parameters are inserted into the
    step grid so that no RK4 step straddles a switch.
    """
    beta_fn, kappa_fn = _as_step(config.beta), _as_step(config.kappa)
    if times is None:
        times = uniform_grid(config.t0, config.t1, config.dt_out)
    times = np.asarray(times, dtype=float)
    if times[0] != config.t0:
        raise ValueError("output times must start at t0")
    switches = [t for t in (*beta_fn.switch_times(), *kappa_fn.switch_times())
                if config.t0 < t < times[-1]]
    knots = np.union1d(times, np.asarray(switches, dtype=float))
    starts = knots[:-1]
    beta_int = np.array([beta_fn(t) for t in starts], dtype=float)
    kappa_int = np.array([kappa_fn(t) for t in starts], dtype=float)
    nsub = n_substeps(np.diff(knots), config.dt_int)
    Y, _, ok = _kernels.rk4_path(float(config.s0), float(config.i0), knots, beta_int, kappa_int,
                                 nsub, float(config.n), float(config.gamma), float(config.mu),
                                 *config.model.kernel_params(), False)
    if not ok:
        bad = int(np.flatnonzero(~np.isfinite(Y).all(axis=1))[0])
        raise FloatingPointError(
            f"reduced model left the finite range near t={knots[bad]:.4g} "
            f"(n={config.n}, beta={beta_int[bad - 1]}, kappa={kappa_int[bad - 1]})")
    pick = np.searchsorted(knots, times)
    return RmTrajectory(times, Y[pick, 0], Y[pick, 1])


def demographic_rhs(model, s, i, n, beta, kappa, gamma, mu):
    """Right-hand side with constant birth and death rate ``mu``."""
    _, F = model.forward(s, i, n, beta, kappa)
    return -F + mu - mu * s, F - gamma * i - mu * i


def _di_f_at_dfe(model, n, beta, kappa):
    n, beta, kappa = np.broadcast_arrays(*(np.atleast_1d(np.asarray(a, dtype=float)) for a in (n, beta, kappa)))
    X = np.column_stack([np.ones(n.size), np.zeros(n.size), n.ravel(), beta.ravel(), kappa.ravel()])
    return model.partials(X)[:, 1].reshape(n.shape)


def r0(model, n, beta, kappa, gamma):
    """Threshold number ``dF/dI (1, 0; n, beta, kappa) / gamma``."""
    return r0_mu(model, n, beta, kappa, gamma, 0.0)


def r0_mu(model, n, beta, kappa, gamma, mu):
    if mu < 0:
        raise ValueError("mu must be non-negative")
    out = _di_f_at_dfe(model, n, beta, kappa) / (gamma + mu)
    return float(out[0]) if out.size == 1 and np.ndim(beta) == 0 and np.ndim(n) == 0 and np.ndim(kappa) == 0 else out


def critical_beta(model, n, kappa, gamma, beta_grid):
    """First value of the ascending ``beta_grid`` with ``R0 >= 1``, else None."""
    beta_grid = np.asarray(beta_grid, dtype=float)
    if np.any(np.diff(beta_grid) < 0):
        raise ValueError("beta_grid must be sorted ascending")
    values = np.atleast_1d(r0(model, n, beta_grid, kappa, gamma))
    hits = np.flatnonzero(values >= 1.0)
    return float(beta_grid[hits[0]]) if hits.size else None


def r_infinity(model, n, beta, kappa, s0, i0, gamma=1.0 / 6.0, horizon=R_INF_HORIZON,
               dt_int=DEFAULT_DT_INT):
    """Epidemic size ``R(horizon)`` from ``R(0) = 1 - s0 - i0``."""
    cfg = RmRunConfig(model=model, n=n, gamma=gamma, beta=beta, kappa=kappa, t0=0.0,
                      t1=horizon, s0=s0, i0=i0, dt_int=dt_int)
    traj = integrate(cfg, times=np.array([0.0, horizon]))
    return float(traj.r[-1])


def critical_beta_grid(model, n_values, kappa_values, beta_values, gamma):
    """``beta_c`` on an ``(n, kappa)`` grid; NaN where no grid beta qualifies."""
    out = np.full((len(n_values), len(kappa_values)), np.nan)
    for a, n in enumerate(n_values):
        for b, kappa in enumerate(kappa_values):
            bc = critical_beta(model, n, kappa, gamma, beta_values)
            if bc is not None:
                out[a, b] = bc
    return out


def r_infinity_grid(model, n, beta_values, kappa_values, s0, i0, gamma, horizon=R_INF_HORIZON,
                    dt_int=DEFAULT_DT_INT):
    out = np.empty((len(beta_values), len(kappa_values)))
    for a, beta in enumerate(beta_values):
        for b, kappa in enumerate(kappa_values):
            out[a, b] = r_infinity(model, n, beta, kappa, s0, i0, gamma, horizon, dt_int)
    return out

