"""Exact one-dimensional optimal transport by quantile matching.

For the quadratic cost the optimal map on the line is the monotone
rearrangement F_y^{-1}(F_x(x)). Both empirical quantile functions use the
plotting positions (k - 1/2) / n and linear interpolation between order
statistics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DataError


@dataclass(frozen=True, eq=False)
class MonotoneMap:
    """Piecewise-linear nondecreasing map through (knots_x, knots_y).

    Outside the knot range the end segments are extended with their slope
    clamped to be nonnegative (``extrapolate=True``) or the end values are held.
    """

    knots_x: np.ndarray
    knots_y: np.ndarray
    extrapolate: bool = True

    def __post_init__(self):
        kx = np.array(self.knots_x, dtype=np.float64).reshape(-1)
        ky = np.array(self.knots_y, dtype=np.float64).reshape(-1)
        if kx.size == 0 or kx.shape != ky.shape:
            raise DataError("knots must be nonempty and of equal length")
        if not (np.all(np.isfinite(kx)) and np.all(np.isfinite(ky))):
            raise DataError("knots must be finite")
        if np.any(np.diff(kx) <= 0):
            raise DataError("knots_x must be strictly increasing")
        if np.any(np.diff(ky) < 0):
            raise DataError("knots_y must be nondecreasing")
        kx.flags.writeable = False
        ky.flags.writeable = False
        object.__setattr__(self, "knots_x", kx)
        object.__setattr__(self, "knots_y", ky)

    def __call__(self, x):
        return apply_monotone(self, x)

    def end_slopes(self) -> tuple[float, float]:
        kx, ky = self.knots_x, self.knots_y
        if kx.size < 2:
            return 0.0, 0.0
        with np.errstate(over="ignore"):
            lo = (ky[1] - ky[0]) / (kx[1] - kx[0])
            hi = (ky[-1] - ky[-2]) / (kx[-1] - kx[-2])
        big = np.finfo(np.float64).max
        return float(min(max(lo, 0.0), big)), float(min(max(hi, 0.0), big))

    def inverse(self) -> "MonotoneMap":
        """Swap the roles of the knots (only valid when knots_y is strictly increasing)."""
        return MonotoneMap(self.knots_y, self.knots_x, self.extrapolate)


def empirical_quantile(sorted_values: np.ndarray, levels) -> np.ndarray:
    """Linear interpolation of the order statistics placed at (j - 1/2) / m.

    Levels below the first or above the last position return the end values.
    """
    m = sorted_values.shape[0]
    pos = (np.arange(m) + 0.5) / m
    return np.interp(np.asarray(levels, dtype=np.float64), pos, sorted_values)


def quantile_map(xs, ys) -> MonotoneMap:
    xs = np.asarray(xs, dtype=np.float64).reshape(-1)
    ys = np.asarray(ys, dtype=np.float64).reshape(-1)
    if xs.size == 0 or ys.size == 0:
        raise DataError("quantile_map needs nonempty samples")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise DataError("samples must be finite")
    n = xs.size
    sx = np.sort(xs, kind="stable")
    sy = np.sort(ys, kind="stable")
    if n == sy.size:
        matched = sy  # same positions on both sides: exact order-statistic matching
    else:
        matched = empirical_quantile(sy, (np.arange(n) + 0.5) / n)
    # tied sources collapse to one knot carrying the mean of their matches
    knots, start = np.unique(sx, return_index=True)
    counts = np.diff(np.append(start, n))
    values = np.add.reduceat(matched, start) / counts
    return MonotoneMap(knots, np.maximum.accumulate(values))


def _interp(x: np.ndarray, kx: np.ndarray, ky: np.ndarray) -> np.ndarray:
    """Piecewise-linear interpolation that stays monotone in floating point.

    np.interp forms a slope per segment, which overflows or overshoots the
    next knot when two knots are a few subnormals apart. Here the position
    within a segment is a fraction in [0, 1] and the result is clamped to the
    segment's end values.
    """
    if kx.size == 1:
        return np.full(x.shape, ky[0])
    i = np.clip(np.searchsorted(kx, x, side="right") - 1, 0, kx.size - 2)
    x0, x1, y0, y1 = kx[i], kx[i + 1], ky[i], ky[i + 1]
    with np.errstate(over="ignore", invalid="ignore"):
        t = np.clip((x - x0) / (x1 - x0), 0.0, 1.0)
        out = np.where(t == 1.0, y1, y0 + t * (y1 - y0))
    return np.clip(out, y0, y1)


def apply_monotone(tmap: MonotoneMap, x):
    x_arr = np.asarray(x, dtype=np.float64)
    kx, ky = tmap.knots_x, tmap.knots_y
    out = _interp(x_arr, kx, ky)
    if tmap.extrapolate:
        lo, hi = tmap.end_slopes()
        big = np.finfo(np.float64).max
        with np.errstate(over="ignore", invalid="ignore"):
            below = np.clip(ky[0] + lo * (x_arr - kx[0]), -big, ky[0])
            above = np.clip(ky[-1] + hi * (x_arr - kx[-1]), ky[-1], big)
        out = np.where(x_arr < kx[0], below, out)
        out = np.where(x_arr > kx[-1], above, out)
    return float(out) if np.ndim(x) == 0 else out


def push_forward_sorted(tmap: MonotoneMap, xs) -> np.ndarray:
    """Sorted images of ``xs``; equals the sorted target when n = m and xs has no ties."""
    return np.sort(apply_monotone(tmap, np.asarray(xs, dtype=np.float64).reshape(-1)), kind="stable")
