"""Relative health-policy controls ``(b, k)`` and the coupling ``v(k)``."""
import math
from dataclasses import dataclass

import numpy as np

__all__ = ["ControlSchedule", "v", "v_prime", "constant_schedule", "uniform_grid"]

_LN10 = math.log(10.0)


def v(k):
    """Coupling of a dispersion policy onto the transmission rate.

    ``v(k) = 1 / (1 + log10(k))`` for ``k >= 1``.
    """
    k_arr = np.asarray(k, dtype=float)
    if np.any(k_arr < 1.0):
        raise ValueError("v(k) is defined for k >= 1 only")
    out = 1.0 / (1.0 + np.log10(k_arr))
    return float(out) if out.ndim == 0 else out


def v_prime(k):
    k_arr = np.asarray(k, dtype=float)
    if np.any(k_arr < 1.0):
        raise ValueError("v'(k) is defined for k >= 1 only")
    out = -1.0 / (k_arr * _LN10 * (1.0 + np.log10(k_arr)) ** 2)
    return float(out) if out.ndim == 0 else out


def uniform_grid(t_start, t_end, dt):
    """Points ``t_start + m * dt`` up to ``t_end``; ``t_end`` is always the last point.

    When ``dt`` does not divide the interval, the final step is shorter.
    """
    if not t_end > t_start:
        raise ValueError("t_end must exceed t_start")
    if dt <= 0:
        raise ValueError("dt must be positive")
    n_steps = int(math.floor((t_end - t_start) / dt + 1e-9))
    grid = t_start + dt * np.arange(n_steps + 1)
    if t_end - grid[-1] > 1e-9 * max(1.0, abs(t_end)):
        grid = np.append(grid, t_end)
    grid[-1] = t_end
    return grid


@dataclass(eq=False)
class ControlSchedule:
    """Control values on a time grid; each value holds until the next grid point."""

    grid: np.ndarray
    b_values: np.ndarray
    k_values: np.ndarray

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.b_values = np.asarray(self.b_values, dtype=float)
        self.k_values = np.asarray(self.k_values, dtype=float)
        if self.grid.ndim != 1 or self.grid.size < 2:
            raise ValueError("schedule grid needs at least two points")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("schedule grid must be strictly increasing")
        if self.b_values.shape != self.grid.shape or self.k_values.shape != self.grid.shape:
            raise ValueError("b_values and k_values must match the grid")

    def is_feasible(self, b_min, k_max, atol=0.0):
        b, k = self.b_values, self.k_values
        return bool(np.all(b >= b_min - atol) and np.all(b <= 1 + atol)
                    and np.all(k >= 1 - atol) and np.all(k <= k_max + atol))

    def value_at(self, t):
        """Piecewise-constant (left-continuous index) lookup of ``(b, k)``."""
        idx = np.clip(np.searchsorted(self.grid, t, side="right") - 1, 0, self.grid.size - 1)
        return self.b_values[idx], self.k_values[idx]

    def pieces(self):
        """Maximal constant runs as ``(t_start, t_end, b, k)``; the last run ends at ``grid[-1]``."""
        out = []
        start = 0
        n = self.grid.size
        for m in range(1, n + 1):
            if m == n or self.b_values[m] != self.b_values[start] or self.k_values[m] != self.k_values[start]:
                t_end = self.grid[m] if m < n else self.grid[-1]
                if t_end > self.grid[start] or m == n:
                    out.append((float(self.grid[start]), float(t_end),
                                float(self.b_values[start]), float(self.k_values[start])))
                start = m
        return [p for p in out if p[1] > p[0]]

    def n_distinct(self):
        return len(np.unique(self.b_values)), len(np.unique(self.k_values))

    def copy(self):
        return ControlSchedule(self.grid.copy(), self.b_values.copy(), self.k_values.copy())


def constant_schedule(t_start, t_end, dt, b=1.0, k=1.0):
    grid = uniform_grid(t_start, t_end, dt)
    return ControlSchedule(grid, np.full(grid.size, float(b)), np.full(grid.size, float(k)))
