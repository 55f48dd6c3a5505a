"""Averaging replica bundles after removing extinctions and aligning onsets.

Grid indices are 0-based: ``m = 0`` is the initial time and ``M - 1`` the
last sample.
"""
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

__all__ = [
    "OUTLIER_FRACTION",
    "ONSET_THRESHOLD",
    "TrajectoryBundle",
    "AveragedTrajectory",
    "filter_outliers",
    "onset_index",
    "onset_time",
    "shift_series",
    "align_and_average",
    "ReplicaAverager",
]

OUTLIER_FRACTION = 0.8
ONSET_THRESHOLD = 1e-3


@dataclass(eq=False)
class TrajectoryBundle:
    """``P`` replicas of (S, I) sampled on a shared uniform grid."""

    grid: np.ndarray
    s: np.ndarray  # (P, M)
    i: np.ndarray  # (P, M)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.s = np.atleast_2d(np.asarray(self.s, dtype=float))
        self.i = np.atleast_2d(np.asarray(self.i, dtype=float))
        if self.s.shape != self.i.shape or self.s.shape[1] != self.grid.size:
            raise ValueError("replica arrays must share the grid length")
        if self.s.shape[0] == 0:
            raise ValueError("bundle is empty")
        if self.grid.size < 2:
            raise ValueError("grid needs at least two points")

    @classmethod
    def from_trajectories(cls, trajectories):
        trajectories = list(trajectories)
        if not trajectories:
            raise ValueError("bundle is empty")
        grid = trajectories[0].grid
        for tr in trajectories[1:]:
            if tr.grid.shape != grid.shape or not np.allclose(tr.grid, grid):
                raise ValueError("replicas do not share a grid")
        return cls(grid, np.array([t.s_values for t in trajectories]),
                   np.array([t.i_values for t in trajectories]))

    @property
    def r(self):
        return 1.0 - self.s - self.i

    @property
    def dt(self):
        return float(self.grid[1] - self.grid[0])

    def __len__(self):
        return self.s.shape[0]


@dataclass(eq=False)
class AveragedTrajectory:
    grid: np.ndarray
    s_mean: np.ndarray
    i_mean: np.ndarray
    retained: np.ndarray
    mean_onset: float
    shifts: np.ndarray
    degenerate: bool = False
    metadata: dict = field(default_factory=dict)

    @property
    def r_mean(self):
        return 1.0 - self.s_mean - self.i_mean

    @property
    def retained_count(self):
        return int(self.retained.size)


def filter_outliers(bundle, fraction=OUTLIER_FRACTION):
    """Indices of replicas whose recovered growth exceeds ``fraction * R_max``.

    Returns ``(retained, degenerate)``. When every replica is an outlier
    (e.g. all went extinct) all replicas are kept and ``degenerate`` is True.
    """
    r = bundle.r
    r_max = r[:, -1].max()
    outlier = r[:, -1] - r[:, 0] <= fraction * r_max
    if outlier.all():
        return np.arange(len(bundle)), True
    return np.flatnonzero(~outlier), False


def onset_index(i_values, threshold=ONSET_THRESHOLD):
    """First grid index ``m >= 1`` with ``I[m] - I[0] > threshold``; 0 if none."""
    i_values = np.asarray(i_values, dtype=float)
    hits = np.flatnonzero(i_values[1:] - i_values[0] > threshold)
    return int(hits[0] + 1) if hits.size else 0


def onset_time(i_values, dt, threshold=ONSET_THRESHOLD):
    return onset_index(i_values, threshold) * dt


def shift_series(x, d):
    """Translate ``x`` by ``d`` steps, padding with the boundary value.

    ``d > 0`` advances the series (``out[m] = x[m + d]``, end padded with
    ``x[-1]``); ``d < 0`` delays it (``out[m] = x[m - |d|]``, start padded
    with ``x[0]``).
    """
    x = np.asarray(x)
    m = x.size
    if d == 0:
        return x.copy()
    out = np.empty_like(x)
    if d > 0:
        d = min(d, m)
        out[:m - d] = x[d:]
        out[m - d:] = x[-1]
    else:
        d = min(-d, m)
        out[:d] = x[0]
        out[d:] = x[:m - d]
    return out


def _aligned_mean(bundle, retained, threshold):
    onset_steps = np.array([onset_index(bundle.i[p], threshold) for p in retained], dtype=np.int64)
    total = int(onset_steps.sum())
    count = len(retained)
    # floor((tau_p - tau_bar) / dt) in exact integer arithmetic
    shifts = (count * onset_steps - total) // count
    s_tilde = np.array([shift_series(bundle.s[p], d) for p, d in zip(retained, shifts)])
    i_tilde = np.array([shift_series(bundle.i[p], d) for p, d in zip(retained, shifts)])
    return s_tilde.mean(axis=0), i_tilde.mean(axis=0), total / count * bundle.dt, shifts


def align_and_average(bundle, fraction=OUTLIER_FRACTION, threshold=ONSET_THRESHOLD):
    """Filter outliers, align first onsets on their mean and average pointwise.

    The mean onset is taken over retained replicas only. Degenerate bundles
    (everything filtered) fall back to the naive mean with zero shifts.
    """
    retained, degenerate = filter_outliers(bundle, fraction)
    if degenerate:
        s_mean = bundle.s.mean(axis=0)
        i_mean = bundle.i.mean(axis=0)
        return AveragedTrajectory(bundle.grid.copy(), s_mean, i_mean, retained, 0.0,
                                  np.zeros(retained.size, dtype=np.int64), degenerate=True)
    s_mean, i_mean, tau_bar, shifts = _aligned_mean(bundle, retained, threshold)
    return AveragedTrajectory(bundle.grid.copy(), s_mean, i_mean, retained, tau_bar, shifts)


class ReplicaAverager(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`align_and_average`.

    ``fit`` learns which replicas are kept and how far each is shifted;
    ``transform`` applies those shifts to a bundle with the same replicas
    and returns the averaged ``(M, 2)`` array of (S, I).
    """

    def __init__(self, outlier_fraction=OUTLIER_FRACTION, onset_threshold=ONSET_THRESHOLD):
        self.outlier_fraction = outlier_fraction
        self.onset_threshold = onset_threshold

    def fit(self, bundle, y=None):
        if not 0 < self.outlier_fraction <= 1:
            raise ValueError("outlier_fraction must lie in (0, 1]")
        avg = align_and_average(bundle, self.outlier_fraction, self.onset_threshold)
        self.retained_ = avg.retained
        self.shifts_ = avg.shifts
        self.mean_onset_ = avg.mean_onset
        self.degenerate_ = avg.degenerate
        self.n_replicas_ = len(bundle)
        return self

    def transform(self, bundle):
        check_is_fitted(self, "shifts_")
        if len(bundle) != self.n_replicas_:
            raise ValueError(f"expected {self.n_replicas_} replicas, got {len(bundle)}")
        s = np.array([shift_series(bundle.s[p], d) for p, d in zip(self.retained_, self.shifts_)])
        i = np.array([shift_series(bundle.i[p], d) for p, d in zip(self.retained_, self.shifts_)])
        return np.column_stack([s.mean(axis=0), i.mean(axis=0)])
