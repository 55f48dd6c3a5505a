"""Individual-based SIR model on contact graphs (direct Gillespie method).

Each infected node recovers at rate ``gamma``; each susceptible node is
infected at rate ``lambda_edge * d`` where ``d`` counts its infected
neighbours. By default ``lambda_edge = beta / alpha`` so that ``beta`` is the
mean transmission rate of the population.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from numba import njit

from ._validation import check_open_fraction, check_positive, check_seed, derive_seeds
from .controls import ControlSchedule, v
from .graph import DegreeParams, random_graph

__all__ = [
    "N_MAX",
    "IbmParams",
    "EpidemicTrajectory",
    "population_size",
    "size_ratio",
    "sample_grid",
    "gillespie_run",
    "run_with_policy",
    "run_batch",
]

N_MAX = 20_000

SUSCEPTIBLE, INFECTED, RECOVERED = 0, 1, 2


def population_size(n, n_max=N_MAX):
    """Node count for population size ratio ``n``."""
    if not 0 < n <= 1:
        raise ValueError(f"population size ratio must lie in (0, 1], got {n!r}")
    return max(1, int(round(n * n_max)))


def size_ratio(n_nodes, n_max=N_MAX):
    return min(1.0, n_nodes / n_max)


def sample_grid(horizon, sample_dt):
    n_points = int(math.floor(horizon / sample_dt + 1e-9)) + 1
    return sample_dt * np.arange(n_points)


@dataclass(frozen=True)
class IbmParams:
    """Rates and sampling of one IBM run.

    ``edge_rate`` selects the per-edge infection rate: ``"per_contact"``
    (``beta / alpha``) or ``"raw"`` (``beta``, for sensitivity checks).
    """

    beta: float
    gamma: float = 1.0 / 6.0
    i0_fraction: float = 5e-4
    horizon: float = 200.0
    sample_dt: float = 2.0 / 7.0
    edge_rate: str = "per_contact"

    def __post_init__(self):
        check_positive(self.beta, "beta", allow_zero=True)
        check_positive(self.gamma, "gamma")
        check_open_fraction(self.i0_fraction, "i0_fraction")
        check_positive(self.horizon, "horizon")
        check_positive(self.sample_dt, "sample_dt")
        if self.edge_rate not in ("per_contact", "raw"):
            raise ValueError("edge_rate must be 'per_contact' or 'raw'")

    def edge_rate_for(self, beta, alpha):
        if self.edge_rate == "raw":
            return beta
        if not alpha > 0:
            raise ValueError("graph has no positive nominal alpha; cannot form beta / alpha")
        return beta / alpha


@dataclass(eq=False)
class EpidemicTrajectory:
    """Compartment counts of one run sampled on a uniform grid."""

    grid: np.ndarray
    counts: np.ndarray  # (M, 3) integer counts of s, i, r
    n_nodes: int
    seed: int | None = None
    params_per_interval: list = field(default_factory=list)  # (t_start, t_end, beta, kappa)
    max_si_error: int = 0

    @property
    def s_values(self):
        return self.counts[:, 0] / self.n_nodes

    @property
    def i_values(self):
        return self.counts[:, 1] / self.n_nodes

    @property
    def r_values(self):
        return self.counts[:, 2] / self.n_nodes

    @property
    def sample_dt(self):
        return float(self.grid[1] - self.grid[0]) if self.grid.size > 1 else float("nan")


# --------------------------------------------------------------------------
# numba kernel


@njit(cache=True)
def _fenwick_add(tree, idx, delta):
    i = idx + 1
    n = tree.size - 1
    while i <= n:
        tree[i] += delta
        i += i & (-i)


@njit(cache=True)
def _fenwick_find(tree, target, top_bit):
    # smallest 0-based index whose inclusive prefix sum exceeds target
    pos = 0
    bit = top_bit
    n = tree.size - 1
    while bit > 0:
        nxt = pos + bit
        if nxt <= n and tree[nxt] <= target:
            pos = nxt
            target -= tree[nxt]
        bit >>= 1
    return pos


@njit(cache=True)
def _brute_si(indptr, indices, state):
    total = 0
    for j in range(state.size):
        if state[j] == 0:
            for e in range(indptr[j], indptr[j + 1]):
                if state[indices[e]] == 1:
                    total += 1
    return total


@njit(cache=True)
def _gillespie_segment(indptr, indices, state, t0, t1, lam, gamma, grid, counts,
                       inclusive_end, seed, check):
    """Advance ``state`` from ``t0`` to ``t1``; record counts at grid points.

    Returns ``(n_infections, n_recoveries, max_abs_si_error)``.
    """
    np.random.seed(seed)
    n = state.size
    d = np.zeros(n, dtype=np.int64)
    tree = np.zeros(n + 1, dtype=np.int64)
    inf_list = np.empty(n, dtype=np.int64)
    pos = np.full(n, -1, dtype=np.int64)
    n_inf = 0
    n_s = 0
    n_r = 0
    for j in range(n):
        if state[j] == 1:
            inf_list[n_inf] = j
            pos[j] = n_inf
            n_inf += 1
            for e in range(indptr[j], indptr[j + 1]):
                d[indices[e]] += 1
        elif state[j] == 0:
            n_s += 1
        else:
            n_r += 1
    si = 0
    for j in range(n):
        if state[j] == 0 and d[j] > 0:
            _fenwick_add(tree, j, d[j])
            si += d[j]
    top_bit = 1
    while top_bit * 2 <= n:
        top_bit *= 2

    g = 0
    while g < grid.size and grid[g] < t0:
        g += 1
    t = t0
    n_new_inf = 0
    n_new_rec = 0
    max_err = 0
    while True:
        rate_rec = gamma * n_inf
        rate_inf = lam * si
        total = rate_rec + rate_inf
        if total > 0.0:
            t_next = t - math.log(1.0 - np.random.random()) / total
        else:
            t_next = math.inf
        stop = t_next >= t1
        horizon = t1 if stop else t_next
        while g < grid.size and (grid[g] < horizon or (stop and inclusive_end and grid[g] <= t1)):
            counts[g, 0] = n_s
            counts[g, 1] = n_inf
            counts[g, 2] = n_r
            g += 1
        if stop:
            break
        t = t_next
        if np.random.random() * total < rate_rec:
            k = np.random.randint(0, n_inf)
            node = inf_list[k]
            last = inf_list[n_inf - 1]
            inf_list[k] = last
            pos[last] = k
            pos[node] = -1
            n_inf -= 1
            state[node] = 2
            n_r += 1
            for e in range(indptr[node], indptr[node + 1]):
                nb = indices[e]
                d[nb] -= 1
                if state[nb] == 0:
                    _fenwick_add(tree, nb, -1)
                    si -= 1
            n_new_rec += 1
        else:
            target = np.random.randint(0, si)
            node = _fenwick_find(tree, target, top_bit)
            _fenwick_add(tree, node, -d[node])
            si -= d[node]
            state[node] = 1
            n_s -= 1
            inf_list[n_inf] = node
            pos[node] = n_inf
            n_inf += 1
            for e in range(indptr[node], indptr[node + 1]):
                nb = indices[e]
                d[nb] += 1
                if state[nb] == 0:
                    _fenwick_add(tree, nb, 1)
                    si += 1
            n_new_inf += 1
        if check:
            err = abs(_brute_si(indptr, indices, state) - si)
            if err > max_err:
                max_err = err
            if n_s + n_inf + n_r != n:
                max_err = max(max_err, 10 ** 9)
    return n_new_inf, n_new_rec, max_err


# --------------------------------------------------------------------------


def _initial_state(n_nodes, i0_fraction, seed):
    n_inf = int(math.ceil(i0_fraction * n_nodes - 1e-9))
    if n_nodes == 0 or n_inf == 0:
        raise ValueError("initial infected fraction rounds to zero infected nodes")
    rng = np.random.default_rng(seed)
    state = np.zeros(n_nodes, dtype=np.int8)
    state[rng.choice(n_nodes, size=n_inf, replace=False)] = INFECTED
    return state


def _simulate(pieces, graph_for, params, sim_seed, check=False):
    """Run consecutive constant-parameter pieces ``(t0, t1, beta, kappa)``."""
    grid = sample_grid(params.horizon, params.sample_dt)
    counts = np.zeros((grid.size, 3), dtype=np.int64)
    init_seed, kernel_seed = derive_seeds(sim_seed, 2)
    segment_seeds = [kernel_seed] + derive_seeds(kernel_seed, max(len(pieces) - 1, 1))
    graph = graph_for(pieces[0][3])
    state = _initial_state(graph.n_nodes, params.i0_fraction, init_seed)
    max_err = 0
    for idx, (t0, t1, beta, kappa) in enumerate(pieces):
        if idx > 0 and kappa != pieces[idx - 1][3]:
            graph = graph_for(kappa)
        lam = params.edge_rate_for(beta, graph.alpha)
        _, _, err = _gillespie_segment(graph.indptr, graph.indices, state, float(t0), float(t1),
                                       float(lam), float(params.gamma), grid, counts,
                                       idx == len(pieces) - 1, segment_seeds[idx], check)
        max_err = max(max_err, int(err))
    return EpidemicTrajectory(grid=grid, counts=counts, n_nodes=graph.n_nodes, seed=sim_seed,
                              params_per_interval=[tuple(p) for p in pieces],
                              max_si_error=max_err)


def gillespie_run(graph, params, rng_seed, check=False, kappa=float("nan")):
    """Simulate the IBM on a fixed graph over ``[0, params.horizon]``.

    ``ceil(i0_fraction * N)`` initial infected nodes are chosen uniformly at
    random. With ``check=True`` the incremental S-I edge count is compared
    with a brute-force recount after every event (``max_si_error``).
    """
    seed = check_seed(rng_seed)
    pieces = [(0.0, params.horizon, params.beta, kappa)]
    return _simulate(pieces, lambda _: graph, params, seed, check=check)


def policy_pieces(beta0, kappa0, schedule, horizon):
    """Constant-parameter pieces of a run under ``schedule`` (uncontrolled before it starts)."""
    if schedule is None:
        return [(0.0, float(horizon), float(beta0), float(kappa0))]
    if not isinstance(schedule, ControlSchedule):
        raise TypeError("schedule must be a ControlSchedule")
    raw = []
    t_c = float(schedule.grid[0])
    if t_c > 0:
        raw.append((0.0, t_c, float(beta0), float(kappa0)))
    for t0, t1, b, k in schedule.pieces():
        raw.append((t0, t1, float(beta0 * b * v(k)), float(kappa0 * k)))
    if raw[-1][1] < horizon:
        t0, _, beta, kappa = raw[-1]
        raw[-1] = (t0, float(horizon), beta, kappa)
    merged = []
    for piece in raw:
        if piece[0] >= horizon:
            break
        piece = (piece[0], min(piece[1], float(horizon)), piece[2], piece[3])
        if merged and merged[-1][2] == piece[2] and merged[-1][3] == piece[3]:
            merged[-1] = (merged[-1][0], piece[1], piece[2], piece[3])
        else:
            merged.append(piece)
    return merged


def policy_seeds(rng_seed):
    """``(graph_seed, sim_seed, regraph_seed)`` used by :func:`run_with_policy`."""
    return tuple(derive_seeds(rng_seed, 3))


def run_with_policy(degree_params, params, schedule, rng_seed, check=False):
    """Simulate under a piecewise-constant policy.

    Before ``schedule.grid[0]`` the run uses ``(params.beta, degree_params.kappa)``.
    Afterwards the mean transmission rate is ``beta0 * b * v(k)``; whenever
    the dispersion ``kappa0 * k`` changes, the graph is re-sampled with the
    same ``alpha`` and node states carry over.
    """
    if not isinstance(degree_params, DegreeParams):
        raise TypeError("degree_params must be a DegreeParams")
    graph_seed, sim_seed, regraph_seed = policy_seeds(check_seed(rng_seed))
    pieces = policy_pieces(params.beta, degree_params.kappa, schedule, params.horizon)
    n_switch = sum(1 for a, b in zip(pieces, pieces[1:]) if a[3] != b[3])
    regraph = iter(derive_seeds(regraph_seed, max(n_switch, 1)))
    first = [True]

    def graph_for(kappa):
        dp = DegreeParams(degree_params.alpha, kappa, degree_params.n_nodes)
        if first[0]:
            first[0] = False
            return random_graph(dp, graph_seed)
        return random_graph(dp, next(regraph))

    return _simulate(pieces, graph_for, params, sim_seed, check=check)


def run_batch(degree_params, params, schedule, n_replicas, master_seed, n_jobs=1):
    """Independent replicas, each on its own graph, in replica order."""
    if n_replicas < 1:
        raise ValueError("n_replicas must be >= 1")
    seeds = derive_seeds(check_seed(master_seed), int(n_replicas))
    if n_jobs == 1 or n_replicas == 1:
        return [run_with_policy(degree_params, params, schedule, s) for s in seeds]
    return Parallel(n_jobs=n_jobs)(
        delayed(run_with_policy)(degree_params, params, schedule, s) for s in seeds)
