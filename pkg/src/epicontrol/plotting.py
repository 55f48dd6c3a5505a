"""Minimal deterministic SVG line charts (no plotting library, stable bytes)."""
from xml.sax.saxutils import escape

import numpy as np

__all__ = ["emit_plot", "Series"]

WIDTH, HEIGHT = 720, 420
LEFT, RIGHT, TOP, BOTTOM = 70, 70, 40, 50
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
N_TICKS = 5


class Series:
    """A named curve; ``axis`` is ``"left"`` or ``"right"``; ``step`` draws a step function."""

    def __init__(self, label, x, y, axis="left", step=False):
        self.label = str(label)
        self.x = np.asarray(x, dtype=float).ravel()
        self.y = np.asarray(y, dtype=float).ravel()
        if self.x.size != self.y.size:
            raise ValueError(f"series {label!r}: x and y lengths differ")
        if axis not in ("left", "right"):
            raise ValueError("axis must be 'left' or 'right'")
        self.axis = axis
        self.step = step


def _num(v):
    return f"{v:.2f}"


def _label(v):
    return f"{v:.4g}"


def _range(values):
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi - lo < 1e-12 * max(1.0, abs(hi)):
        pad = 0.5 if lo == 0 else 0.1 * abs(lo)
        return lo - pad, hi + pad
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _points(s, sx, sy):
    xs, ys = s.x, s.y
    if s.step and xs.size > 1:
        # hold each value until the next abscissa
        xs = np.repeat(xs, 2)[1:]
        ys = np.repeat(ys, 2)[:-1]
    return " ".join(f"{_num(sx(x))},{_num(sy(y))}" for x, y in zip(xs, ys))


def emit_plot(series, kind="trajectory", title="", x_label="t (days)", left_label="", right_label=""):
    """SVG document for ``series``.

    ``kind="trajectory"`` draws lines on one axis; ``kind="control"`` draws
    step functions, the first series on the left axis and the rest on the
    right axis. Raises ``ValueError`` on empty input.
    """
    if kind not in ("trajectory", "control"):
        raise ValueError("kind must be 'trajectory' or 'control'")
    series = list(series)
    if not series or any(s.x.size == 0 for s in series):
        raise ValueError("nothing to plot: empty series")
    if kind == "control":
        series = [Series(s.label, s.x, s.y, "left" if j == 0 else "right", True)
                  for j, s in enumerate(series)]
    for s in series:
        if not (np.all(np.isfinite(s.x)) and np.all(np.isfinite(s.y))):
            raise ValueError(f"series {s.label!r} contains non-finite values")

    xs = np.concatenate([s.x for s in series])
    x0, x1 = (xs.min(), xs.max()) if np.ptp(xs) > 0 else _range(xs)
    ranges = {}
    for side in ("left", "right"):
        vals = [s.y for s in series if s.axis == side]
        if vals:
            ranges[side] = _range(np.concatenate(vals))

    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def sx(x):
        return LEFT + (x - x0) / (x1 - x0) * pw

    def scale_y(side):
        lo, hi = ranges[side]
        return lambda y: TOP + (hi - y) / (hi - lo) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    if title:
        out.append(f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>')
    for j in range(N_TICKS + 1):
        xv = x0 + (x1 - x0) * j / N_TICKS
        px = sx(xv)
        out.append(f'<line x1="{_num(px)}" y1="{TOP + ph}" x2="{_num(px)}" y2="{TOP + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{_num(px)}" y="{TOP + ph + 18}" text-anchor="middle">{_label(xv)}</text>')
    for side in ranges:
        lo, hi = ranges[side]
        sy = scale_y(side)
        edge = LEFT if side == "left" else LEFT + pw
        sign = -1 if side == "left" else 1
        anchor = "end" if side == "left" else "start"
        for j in range(N_TICKS + 1):
            yv = lo + (hi - lo) * j / N_TICKS
            py = sy(yv)
            out.append(f'<line x1="{edge}" y1="{_num(py)}" x2="{edge + 5 * sign}" y2="{_num(py)}" stroke="black"/>')
            out.append(f'<text x="{edge + 8 * sign}" y="{_num(py + 4)}" text-anchor="{anchor}">{_label(yv)}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle">{escape(x_label)}</text>')
    if left_label:
        out.append(f'<text x="16" y="{TOP + ph / 2:.1f}" text-anchor="middle" '
                   f'transform="rotate(-90 16 {TOP + ph / 2:.1f})">{escape(left_label)}</text>')
    if right_label and "right" in ranges:
        xr = WIDTH - 14
        out.append(f'<text x="{xr}" y="{TOP + ph / 2:.1f}" text-anchor="middle" '
                   f'transform="rotate(90 {xr} {TOP + ph / 2:.1f})">{escape(right_label)}</text>')
    for j, s in enumerate(series):
        color = COLORS[j % len(COLORS)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                   f'points="{_points(s, sx, scale_y(s.axis))}"/>')
        ly = TOP + 14 + 16 * j
        out.append(f'<line x1="{LEFT + 10}" y1="{ly}" x2="{LEFT + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        suffix = " (right axis)" if s.axis == "right" and "left" in ranges else ""
        out.append(f'<text x="{LEFT + 35}" y="{ly + 4}">{escape(s.label + suffix)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
