"""Training data for the incidence network, built from averaged IBM batches.

Each sample is ``(s, i, n, beta, kappa) -> target`` with target
``(S^m - S^{m+1}) / (dt S^m I^m)``, the empirical transmission rate
between consecutive grid points.
"""
import csv
import logging
import math
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from ._validation import check_seed, derive_seeds
from .averaging import TrajectoryBundle, align_and_average
from .graph import DegreeParams
from .ibm import N_MAX, IbmParams, population_size, run_batch
from .incidence import INPUT_NAMES

__all__ = [
    "GUARD",
    "ParameterRanges",
    "SimConfig",
    "Dataset",
    "sample_configs",
    "samples_from_trajectory",
    "simulate_config",
    "build_dataset",
]

log = logging.getLogger(__name__)

GUARD = 1e-8


@dataclass(frozen=True)
class ParameterRanges:
    """Sampling boxes; ``n`` and ``beta`` uniform, ``kappa`` and ``i0`` log-uniform."""

    n: tuple = (0.1, 1.0)
    beta: tuple = (0.075, 0.9)
    kappa: tuple = (0.1, 10.0)
    i0: tuple = (1e-4, 1e-3)

    def __post_init__(self):
        for name in ("n", "beta", "kappa", "i0"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValueError(f"range {name}=({lo}, {hi}) must satisfy 0 < low <= high")
        if self.n[1] > 1 or self.i0[1] >= 1:
            raise ValueError("n must lie in (0, 1] and i0 in (0, 1)")


@dataclass(frozen=True)
class SimConfig:
    n: float
    beta: float
    kappa: float
    i0: float


def sample_configs(ranges, n_configs, seed):
    rng = np.random.default_rng(check_seed(seed))
    n = rng.uniform(*ranges.n, size=n_configs)
    beta = rng.uniform(*ranges.beta, size=n_configs)
    kappa = np.exp(rng.uniform(math.log(ranges.kappa[0]), math.log(ranges.kappa[1]), size=n_configs))
    i0 = np.exp(rng.uniform(math.log(ranges.i0[0]), math.log(ranges.i0[1]), size=n_configs))
    # log/exp round-off must not leave the box
    kappa = np.clip(kappa, *ranges.kappa)
    i0 = np.clip(i0, *ranges.i0)
    return [SimConfig(*map(float, row)) for row in zip(n, beta, kappa, i0)]


@dataclass(eq=False)
class Dataset:
    """Samples ``X`` (columns s, i, n, beta, kappa), targets ``y`` and source tags."""

    X: np.ndarray
    y: np.ndarray
    source: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(-1, 5)
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.source = np.asarray(self.source, dtype=np.int64).ravel()
        if not (self.X.shape[0] == self.y.size == self.source.size):
            raise ValueError("X, y and source must have the same number of rows")

    @classmethod
    def empty(cls):
        return cls(np.empty((0, 5)), np.empty(0), np.empty(0, dtype=np.int64))

    def __len__(self):
        return self.y.size

    def concat(self, other):
        return Dataset(np.vstack([self.X, other.X]), np.concatenate([self.y, other.y]),
                       np.concatenate([self.source, other.source]))

    def subset(self, fraction, seed):
        """Seeded random subset of ``round(fraction * len)`` rows, in original order."""
        if not 0 < fraction <= 1:
            raise ValueError("fraction must lie in (0, 1]")
        rng = np.random.default_rng(check_seed(seed))
        size = max(1, int(round(fraction * len(self))))
        keep = np.sort(rng.choice(len(self), size=size, replace=False))
        return Dataset(self.X[keep], self.y[keep], self.source[keep])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([*INPUT_NAMES, "target", "source"])
            for row, target, src in zip(self.X, self.y, self.source):
                w.writerow([*(repr(float(x)) for x in row), repr(float(target)), int(src)])

    @classmethod
    def read_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != [*INPUT_NAMES, "target", "source"]:
                raise ValueError(f"unexpected dataset header {header}")
            rows = [r for r in reader if r]
        if not rows:
            return cls.empty()
        arr = np.array([[float(x) for x in r[:6]] for r in rows])
        return cls(arr[:, :5], arr[:, 5], np.array([int(r[6]) for r in rows]))


def samples_from_trajectory(grid, s, i, n, beta, kappa, source=0, guard=GUARD):
    """One sample per consecutive grid pair passing ``S^m I^m >= guard``.

    ``beta`` and ``kappa`` are scalars or per-interval arrays of length ``M - 1``.
    """
    grid = np.asarray(grid, dtype=float)
    s = np.asarray(s, dtype=float)
    i = np.asarray(i, dtype=float)
    m = grid.size - 1
    dt = np.diff(grid)
    beta = np.broadcast_to(np.asarray(beta, dtype=float), (m,))
    kappa = np.broadcast_to(np.asarray(kappa, dtype=float), (m,))
    si = s[:-1] * i[:-1]
    ok = si >= guard
    target = (s[:-1][ok] - s[1:][ok]) / (dt[ok] * si[ok])
    X = np.column_stack([s[:-1][ok], i[:-1][ok], np.full(ok.sum(), float(n)), beta[ok], kappa[ok]])
    return Dataset(X, target, np.full(ok.sum(), source, dtype=np.int64))


def simulate_config(cfg, replicas=50, seed=0, alpha=10.0, gamma=1.0 / 6.0, horizon=200.0,
                    sample_dt=2.0 / 7.0, n_max=N_MAX, schedule=None, n_jobs=1):
    """Averaged IBM trajectory for one uncontrolled (or scheduled) configuration."""
    dp = DegreeParams(alpha=alpha, kappa=cfg.kappa, n_nodes=population_size(cfg.n, n_max))
    params = IbmParams(beta=cfg.beta, gamma=gamma, i0_fraction=cfg.i0, horizon=horizon,
                       sample_dt=sample_dt)
    runs = run_batch(dp, params, schedule, replicas, seed, n_jobs=n_jobs)
    avg = align_and_average(TrajectoryBundle.from_trajectories(runs))
    avg.metadata.update(n=cfg.n, beta=cfg.beta, kappa=cfg.kappa, i0=cfg.i0, seed=int(seed),
                        replicas=int(replicas), n_nodes=dp.n_nodes)
    return avg


def _config_samples(index, cfg, seed, replicas, alpha, gamma, horizon, sample_dt, n_max):
    avg = simulate_config(cfg, replicas, seed, alpha, gamma, horizon, sample_dt, n_max)
    data = samples_from_trajectory(avg.grid, avg.s_mean, avg.i_mean, cfg.n, cfg.beta, cfg.kappa,
                                   source=index)
    return data


def build_dataset(ranges, n_configs, replicas_per_config=50, master_seed=0, alpha=10.0,
                  gamma=1.0 / 6.0, horizon=200.0, sample_dt=2.0 / 7.0, n_max=N_MAX, n_jobs=1):
    """Sample configurations, simulate and average each, and collect rate samples.

    Returns ``(dataset, configs)``; ``dataset.source`` indexes ``configs``.
    """
    if n_configs < 1:
        raise ValueError("n_configs must be >= 1")
    config_seed, sim_seed = derive_seeds(check_seed(master_seed), 2)
    configs = sample_configs(ranges, n_configs, config_seed)
    seeds = derive_seeds(sim_seed, n_configs)
    args = [(idx, cfg, seeds[idx], replicas_per_config, alpha, gamma, horizon, sample_dt, n_max)
            for idx, cfg in enumerate(configs)]
    if n_jobs == 1:
        parts = [_config_samples(*a) for a in args]
    else:
        parts = Parallel(n_jobs=n_jobs)(delayed(_config_samples)(*a) for a in args)
    out = Dataset.empty()
    for idx, part in enumerate(parts):
        if len(part) == 0:
            log.warning("config %d %s contributed no samples (S*I below guard everywhere)", idx, configs[idx])
        out = out.concat(part)
    return out, configs
