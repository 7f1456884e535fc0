"""Log-log least-squares rate fits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NUMERICAL_FLOOR = 1e-13


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r2: float
    used: np.ndarray
    excluded: np.ndarray

    def predict(self, x):
        return np.exp(self.intercept) * np.asarray(x, dtype=float) ** self.slope


def fit_loglog_slope(xs, ys, floor: float = NUMERICAL_FLOOR) -> SlopeFit:
    """Fit ``log y = slope * log x + intercept``.

    Points with ``y < floor`` or non-positive ``x`` are excluded and reported.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    ok = (ys >= floor) & (xs > 0)
    if ok.sum() < 3:
        raise ValueError(f"need at least 3 usable points, got {int(ok.sum())}")
    lx, ly = np.log(xs[ok]), np.log(ys[ok])
    (slope, intercept), *_ = np.linalg.lstsq(np.stack([lx, np.ones_like(lx)], 1), ly, rcond=None)
    resid = ly - (slope * lx + intercept)
    tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - float(np.sum(resid**2) / tot) if tot > 0 else 1.0
    return SlopeFit(float(slope), float(intercept), r2, np.flatnonzero(ok), np.flatnonzero(~ok))
