"""Monte Carlo evaluation metrics over ``B`` replications."""
from __future__ import annotations

from typing import Sequence

import numpy as np


class MetricError(ValueError):
    pass


def metric_bias(estimates: Sequence[float], theta: float, relative: bool = False) -> float:
    """Mean of ``estimate - theta``; with ``relative`` the mean of
    ``100 * (estimate - theta) / theta``."""
    est = np.asarray(estimates, dtype=float)
    if est.size == 0:
        raise MetricError("no estimates")
    if relative:
        if theta == 0:
            raise MetricError("relative bias is undefined for theta = 0")
        return float(100.0 * np.mean((est - theta) / theta))
    return float(np.mean(est - theta))


def monte_carlo_variance(estimates: Sequence[float]) -> float:
    est = np.asarray(estimates, dtype=float)
    if est.size < 2:
        raise MetricError("Monte Carlo variance needs B >= 2")
    return float(est.var(ddof=1))


def metric_rab(var_estimates: Sequence[float], point_estimates: Sequence[float]) -> float:
    """Ratio bias in percent: mean variance estimate over the Monte Carlo
    variance of the point estimates.  100 means unbiased."""
    v_mc = monte_carlo_variance(point_estimates)
    if v_mc == 0.0:
        raise MetricError("Monte Carlo variance is zero")
    v = np.asarray(var_estimates, dtype=float)
    if v.size == 0:
        raise MetricError("no variance estimates")
    return float(100.0 * v.mean() / v_mc)


def metric_coverage(cis: Sequence[tuple[float, float]], theta: float) -> float:
    """Percentage of closed intervals ``[lo, hi]`` containing ``theta``."""
    arr = np.asarray(cis, dtype=float).reshape(-1, 2)
    if arr.shape[0] == 0:
        raise MetricError("no intervals")
    hit = (arr[:, 0] <= theta) & (theta <= arr[:, 1])
    return float(100.0 * hit.mean())


def rank_inversions(values: Sequence[float], increasing: bool = False) -> int:
    """Adjacent pairs that break a nonincreasing (or nondecreasing) order."""
    v = np.asarray(values, dtype=float)
    d = np.diff(v)
    return int(np.sum(d < 0) if increasing else np.sum(d > 0))
