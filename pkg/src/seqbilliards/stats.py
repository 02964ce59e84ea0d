"""Regression and Monte Carlo helpers shared by the experiments."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class LogLinearFit:
    """Fit of ``log y = log C + n log theta``."""

    rate: float
    prefactor: float
    slope: float
    slope_se: float
    r2: float
    ci: tuple[float, float]  # 95% interval for the rate
    n_points: int

    def slope_negative(self, level: float = 0.95) -> bool:
        """One-sided test that the slope is negative at the given confidence."""
        if self.n_points < 3 or not math.isfinite(self.slope_se):
            return False
        t = stats.t.ppf(level, self.n_points - 2)
        return self.slope + t * self.slope_se < 0


def loglinear_fit(n, y, level: float = 0.95) -> LogLinearFit:
    n = np.asarray(n, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = np.isfinite(y) & (y > 0)
    n, ly = n[keep], np.log(y[keep])
    if n.size < 2:
        return LogLinearFit(math.nan, math.nan, math.nan, math.nan, math.nan, (math.nan, math.nan), n.size)
    res = stats.linregress(n, ly)
    if n.size > 2:
        t = stats.t.ppf(0.5 + level / 2, n.size - 2)
        lo, hi = res.slope - t * res.stderr, res.slope + t * res.stderr
        se = float(res.stderr)
    else:
        lo = hi = res.slope
        se = math.inf
    return LogLinearFit(math.exp(res.slope), math.exp(res.intercept), float(res.slope), se,
                        float(res.rvalue ** 2), (math.exp(lo), math.exp(hi)), int(n.size))


def mean_and_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.inf


def zscore(estimate: float, target: float, se: float) -> float:
    return (estimate - target) / se if se > 0 else (0.0 if estimate == target else math.inf)
