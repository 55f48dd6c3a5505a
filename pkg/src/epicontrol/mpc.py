"""Reinforcement loop: retrain the reduced model, re-optimize, check on the IBM.

One outer iteration ``p``:

1. fit (or fine-tune) the incidence network on the dataset ``D_p``;
2. solve the control problem on the reduced model, warm-started;
3. compress the dense control into at most 8 piecewise-constant values;
4. simulate a replica batch of the IBM under that control and average it;
5. accept, or append the controlled samples to get ``D_{p+1}``.
"""
import logging
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.tree import DecisionTreeRegressor

from . import fileio, ocp
from .ocp import OcpConfig
from ._validation import check_seed, derive_seeds
from .averaging import TrajectoryBundle, align_and_average
from .controls import ControlSchedule, constant_schedule, v
from .dataset import Dataset, samples_from_trajectory
from .graph import DegreeParams
from .ibm import N_MAX, IbmParams, population_size, run_batch
from .incidence import IncidenceNet
from .reduced import RmRunConfig, StepFunction, integrate

__all__ = [
    "Scenario",
    "StoppingCriteria",
    "MpcSettings",
    "MpcState",
    "MpcResult",
    "compress_control",
    "ibm_cost",
    "l2_mismatch",
    "peak_time",
    "check_stopping",
    "effective_parameters",
    "reinforce",
    "precision_schedule",
    "reduced_under_control",
    "run_mpc",
]

log = logging.getLogger(__name__)

ZERO_BASELINE = 1e-12


@dataclass(frozen=True)
class Scenario:
    n: float
    beta0: float
    kappa0: float
    s0: float = 0.9995
    i0: float = 0.0005

    def __post_init__(self):
        if not 0 < self.n <= 1:
            raise ValueError("n must lie in (0, 1]")
        if not (self.beta0 > 0 and self.kappa0 > 0):
            raise ValueError("beta0 and kappa0 must be positive")
        if not (0 < self.i0 < 1 and 0 <= self.s0 and self.s0 + self.i0 <= 1 + 1e-12):
            raise ValueError("initial state must be a valid (s0, i0)")


@dataclass(frozen=True)
class StoppingCriteria:
    tau_rl: float = 1e-3
    tau_l2: float = 1.0
    tau_rinf: float = 1e-3
    tau_ip: float = 6.0
    max_outer_iterations: int = 50

    def __post_init__(self):
        for name in ("tau_rl", "tau_l2", "tau_rinf", "tau_ip", "max_outer_iterations"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class MpcSettings:
    """Everything besides the scenario: simulation size, training and OCP knobs."""

    ocp: OcpConfig = field(default_factory=OcpConfig)
    replicas: int = 50
    alpha: float = 10.0
    n_max: int = N_MAX
    d0_fraction: float = 0.075
    fine_tune_epochs: int = 5
    train_epochs: int = 15
    n_jobs: int = 1


@dataclass(eq=False)
class MpcState:
    iteration: int
    model: IncidenceNet
    dataset_size: int
    dense: ControlSchedule
    compressed: ControlSchedule
    c_p: float
    c_0: float
    c_p_reduced: float
    l2: float
    rinf_gap: float
    peak_delay: float
    ocp_costs: list = field(default_factory=list)
    ocp_rhos: list = field(default_factory=list)
    accepted: bool = False
    checks: dict = field(default_factory=dict)

    def metrics(self):
        return {
            "iteration": self.iteration,
            "dataset_size": self.dataset_size,
            "c_p": self.c_p,
            "c_0": self.c_0,
            "c_p_reduced": self.c_p_reduced,
            "l2_mismatch": self.l2,
            "r_inf_gap": self.rinf_gap,
            "peak_delay_days": self.peak_delay,
            "ocp_iterations": len(self.ocp_costs) - 1,
            "ocp_final_cost": self.ocp_costs[-1] if self.ocp_costs else math.nan,
            "accepted": self.accepted,
            "checks": dict(self.checks),
        }


@dataclass(eq=False)
class MpcResult:
    accepted: bool
    schedule: ControlSchedule
    history: list
    c_0: float
    failure: dict | None = None
    final_average: object = None
    final_reduced: object = None


# -- building blocks ---------------------------------------------------------


def compress_control(schedule, max_pieces=8):
    """Fit ``b`` and ``k`` separately by a depth-limited regression tree on time."""
    if max_pieces < 1:
        raise ValueError("max_pieces must be >= 1")
    depth = max(0, int(math.ceil(math.log2(max_pieces))))
    t = schedule.grid.reshape(-1, 1)
    out = []
    for values in (schedule.b_values, schedule.k_values):
        if depth == 0 or np.ptp(values) == 0:
            out.append(np.full(values.size, values.mean()))
            continue
        tree = DecisionTreeRegressor(max_depth=depth, max_leaf_nodes=max_pieces, random_state=0)
        tree.fit(t, values)
        out.append(tree.predict(t))
    return ControlSchedule(schedule.grid.copy(), out[0], out[1])


def _trapezoid_from(grid, values, t_start):
    """Trapezoid of ``values`` over ``[t_start, grid[-1]]`` (linear interpolation at ``t_start``)."""
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    if t_start <= grid[0]:
        g, y = grid, values
    else:
        j = int(np.searchsorted(grid, t_start, side="right"))
        y_start = np.interp(t_start, grid, values)
        g = np.concatenate([[t_start], grid[j:]])
        y = np.concatenate([[y_start], values[j:]])
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(g)))


def ibm_cost(grid, i_values, config):
    """Penalty part of the cost on ``[t_c, T]`` for a sampled infected curve."""
    i_values = np.asarray(i_values, dtype=float)
    hosp = np.maximum(i_values / config.i_hosp - 1.0, 0.0)
    cap = np.maximum(i_values / config.i_max - 1.0, 0.0)
    integrand = config.omega_hosp * hosp ** 2 + cap ** 2 / config.epsilon
    return _trapezoid_from(grid, integrand, config.t_c)


def l2_mismatch(grid, s_a, i_a, s_b, i_b):
    """``sqrt(sum_m dt_m (dS^2 + dI^2))`` with left-point weights."""
    grid = np.asarray(grid, dtype=float)
    w = np.append(np.diff(grid), 0.0)
    d = (np.asarray(s_a) - s_b) ** 2 + (np.asarray(i_a) - i_b) ** 2
    return float(math.sqrt(np.sum(w * d)))


def peak_time(grid, i_values):
    """Earliest time of the maximum of ``i_values``."""
    return float(np.asarray(grid)[int(np.argmax(i_values))])


def check_stopping(c_p, c_0, c_p_reduced, criteria, rm_s, rm_i, ibm_s, ibm_i, grid):
    """Acceptance decision and the individual checks.

    Returns ``(accepted, checks, metrics)``.
    """
    l2 = l2_mismatch(grid, rm_s, rm_i, ibm_s, ibm_i)
    rinf_gap = float(abs((1.0 - rm_s[-1] - rm_i[-1]) - (1.0 - ibm_s[-1] - ibm_i[-1])))
    delay = float(abs(peak_time(grid, rm_i) - peak_time(grid, ibm_i)))
    bound = criteria.tau_rl * c_0 if c_0 >= ZERO_BASELINE else ZERO_BASELINE
    checks = {
        "relative_cost": bool(c_p <= bound),
        "below_reduced_cost": bool(c_p <= c_p_reduced),
        "l2": bool(l2 <= criteria.tau_l2),
        "r_inf": bool(rinf_gap <= criteria.tau_rinf),
        "peak_delay": bool(delay <= criteria.tau_ip),
    }
    return all(checks.values()), checks, {"l2": l2, "rinf_gap": rinf_gap, "peak_delay": delay}


def effective_parameters(grid, schedule, beta0, kappa0):
    """Per-interval ``(beta, kappa)`` seen by a run under ``schedule`` on ``grid``.

    Intervals starting before the schedule use the uncontrolled values.
    """
    starts = np.asarray(grid, dtype=float)[:-1]
    beta = np.full(starts.size, float(beta0))
    kappa = np.full(starts.size, float(kappa0))
    if schedule is not None:
        active = starts >= schedule.grid[0] - 1e-12
        b, k = schedule.value_at(starts[active])
        beta[active] = beta0 * b * v(k)
        kappa[active] = kappa0 * k
    return beta, kappa


def reinforce(dataset, grid, s_mean, i_mean, schedule, n, beta0, kappa0, source=-1):
    """``dataset`` plus one guard-passing sample per grid step of the controlled average.

    The inputs carry the effective rate ``beta0 * b * v(k)`` and dispersion
    ``kappa0 * k``. Calling it twice with the same trajectory duplicates the
    samples.
    """
    beta, kappa = effective_parameters(grid, schedule, beta0, kappa0)
    extra = samples_from_trajectory(grid, s_mean, i_mean, n, beta, kappa, source=source)
    return dataset.concat(extra)


def precision_schedule(p):
    """``(n_g, tau_g)`` for outer iteration ``p``."""
    return min(50, 10 + 5 * p), max(1e-6, 1e-3 * 2.0 ** (-p))


def _step_functions(schedule, beta0, kappa0):
    pieces = schedule.pieces()
    starts = (0.0,) + tuple(p[0] for p in pieces)
    betas = (beta0,) + tuple(beta0 * p[2] * v(p[3]) for p in pieces)
    kappas = (kappa0,) + tuple(kappa0 * p[3] for p in pieces)
    if starts[1] <= 0.0:
        starts, betas, kappas = starts[1:], betas[1:], kappas[1:]
    return StepFunction(starts, betas), StepFunction(starts, kappas)


def reduced_under_control(model, scenario, schedule, grid, config):
    """Reduced trajectory from ``(s0, i0)`` at time 0 under ``schedule``, sampled on ``grid``."""
    beta_fn, kappa_fn = _step_functions(schedule, scenario.beta0, scenario.kappa0)
    cfg = RmRunConfig(model=model, n=scenario.n, gamma=config.gamma, beta=beta_fn, kappa=kappa_fn,
                      t0=0.0, t1=float(grid[-1]), s0=scenario.s0, i0=scenario.i0,
                      dt_int=config.dt_int)
    return integrate(cfg, times=grid)


def _average_batch(scenario, settings, schedule, seed):
    dp = DegreeParams(alpha=settings.alpha, kappa=scenario.kappa0,
                      n_nodes=population_size(scenario.n, settings.n_max))
    params = IbmParams(beta=scenario.beta0, gamma=settings.ocp.gamma, i0_fraction=scenario.i0,
                       horizon=settings.ocp.t_horizon, sample_dt=settings.ocp.dt)
    runs = run_batch(dp, params, schedule, settings.replicas, seed, n_jobs=settings.n_jobs)
    return runs, align_and_average(TrajectoryBundle.from_trajectories(runs))


def _clone(model):
    return IncidenceNet.from_dict(model.to_dict())


def _write_artifacts(directory, state, runs, avg, rm):
    fileio.ensure_dir(directory)
    state.model.save(os.path.join(directory, "model.json"))
    fileio.write_schedule(os.path.join(directory, "schedule_dense.csv"), state.dense)
    fileio.write_schedule(os.path.join(directory, "schedule_compressed.csv"), state.compressed)
    rows = []
    for rep, tr in enumerate(runs):
        for t, (cs, ci, cr) in zip(tr.grid, tr.counts):
            rows.append((rep, t, cs, ci, cr))
    fileio.write_csv(os.path.join(directory, "ibm_batch.csv"), ["replica", "t", "s", "i", "r"], rows)
    fileio.write_trajectory(os.path.join(directory, "ibm_average.csv"), avg.grid, avg.s_mean, avg.i_mean)
    fileio.write_trajectory(os.path.join(directory, "reduced.csv"), rm.grid, rm.s, rm.i)
    fileio.write_iteration_log(os.path.join(directory, "ocp_log.csv"), state.ocp_costs, state.ocp_rhos)
    fileio.write_json(os.path.join(directory, "metrics.json"), state.metrics())


# -- the loop ----------------------------------------------------------------


def run_mpc(scenario, criteria, master_seed, base_dataset, settings=None, out_dir=None):
    """Reinforcement loop for one scenario.

    ``base_dataset`` is the uncontrolled training data; the initial model is
    trained on a seeded ``settings.d0_fraction`` of it. The same IBM seed is
    used for every controlled batch, so successive controls are compared on
    common random numbers. Returns an :class:`MpcResult`; when the iteration
    cap is reached ``failure`` holds the last metrics and the failed checks.
    """
    settings = settings or MpcSettings()
    seed = check_seed(master_seed)
    subset_seed, train_seed, base_seed, batch_seed = derive_seeds(seed, 4)
    rm_config = settings.ocp
    _, avg0 = _average_batch(scenario, settings, None, base_seed)
    grid_ibm = avg0.grid
    c_0 = ibm_cost(grid_ibm, avg0.i_mean, rm_config)
    log.info("uncontrolled IBM cost c_0=%.6g", c_0)

    history = []
    identity = constant_schedule(rm_config.t_c, rm_config.t_horizon, rm_config.dt)
    if c_0 < ZERO_BASELINE:
        # nothing to control: (1, 1) reproduces the uncontrolled batch
        log.info("zero baseline: accepting the identity control")
        return MpcResult(True, identity, history, c_0, final_average=avg0)

    data = base_dataset.subset(settings.d0_fraction, subset_seed)
    model = IncidenceNet(epochs=settings.train_epochs, random_state=train_seed)
    dense = identity
    state = None
    for p in range(criteria.max_outer_iterations):
        if p == 0:
            model.fit(data.X, data.y)
        else:
            model.set_params(warm_start=True, epochs=settings.fine_tune_epochs)
            model.fit(data.X, data.y)
        s_c, i_c = ocp.initial_state(model, rm_config.replace(n=scenario.n, beta0=scenario.beta0,
                                                              kappa0=scenario.kappa0),
                                     scenario.s0, scenario.i0)
        n_g, tau_g = precision_schedule(p)
        cfg = rm_config.replace(n=scenario.n, beta0=scenario.beta0, kappa0=scenario.kappa0,
                                s_c=s_c, i_c=i_c, n_g=n_g, tau_g=tau_g)
        result = ocp.solve(cfg, model, initial_schedule=dense)
        dense = result.schedule
        compressed = compress_control(dense)

        runs, avg = _average_batch(scenario, settings, compressed, batch_seed)
        rm = reduced_under_control(model, scenario, compressed, avg.grid, cfg)
        c_p = ibm_cost(avg.grid, avg.i_mean, cfg)
        c_red = ibm_cost(rm.grid, rm.i, cfg)
        accepted, checks, m = check_stopping(c_p, c_0, c_red, criteria, rm.s, rm.i,
                                             avg.s_mean, avg.i_mean, avg.grid)
        state = MpcState(p, _clone(model), len(data), dense, compressed, c_p, c_0, c_red,
                         m["l2"], m["rinf_gap"], m["peak_delay"], list(result.costs),
                         list(result.rhos), accepted, dict(checks))
        history.append(state)
        log.info("mpc iter %d: c_p=%.4g c_red=%.4g l2=%.4g rinf=%.4g delay=%.3g accepted=%s",
                 p, c_p, c_red, m["l2"], m["rinf_gap"], m["peak_delay"], accepted)
        if out_dir is not None:
            _write_artifacts(os.path.join(out_dir, f"iter_{p:03d}"), state, runs, avg, rm)
        if accepted:
            return MpcResult(True, compressed, history, c_0, final_average=avg, final_reduced=rm)
        data = reinforce(data, avg.grid, avg.s_mean, avg.i_mean, compressed, scenario.n,
                         scenario.beta0, scenario.kappa0, source=-(p + 1))

    failure = {
        "reason": "max_outer_iterations reached",
        "iterations": len(history),
        "last_metrics": state.metrics() if state else None,
        "failed_checks": sorted(k for k, ok in state.checks.items() if not ok) if state else [],
        "scenario": asdict(scenario),
    }
    return MpcResult(False, state.compressed, history, c_0, failure=failure,
                     final_average=avg, final_reduced=rm)
