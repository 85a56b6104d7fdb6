"""Pool estimates from ``m`` synthetic copies into one inference.

With ``q_i, u_i`` the per-copy estimate and variance estimate::

    q_bar = mean(q_i)          u_bar = mean(u_i)       b_m = var(q_i, ddof=1)

    Tp    = u_bar + b_m / m    with t quantiles, df = (m-1) (1 + 1/r)^2,
                               r = b_m / (m u_bar)
    Ts    = u_bar (1 + 1/m)    normal quantiles
    TsPPD = u_bar (1 + 2/m)    normal quantiles
    naive = u_bar              normal quantiles

These functions never touch a privacy ledger: everything here is
post-processing of released synthetic data.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .estimators import EstimateResult
from .randkit import quantile_normal, quantile_t


class CombineError(ValueError):
    pass


class VarianceRule(enum.Enum):
    TP = "tp"
    TS = "ts"
    TSPPD = "tsppd"
    NAIVE = "naive"

    @classmethod
    def parse(cls, text) -> "VarianceRule":
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower().replace("_", "").replace("(", "").replace(")", "")
        aliases = {"tp": cls.TP, "ts": cls.TS, "tsppd": cls.TSPPD, "naive": cls.NAIVE,
                   "ubar": cls.NAIVE, "naiveubar": cls.NAIVE}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown variance rule {text!r}; expected tp, ts, tsppd or naive") from None

    @property
    def min_m(self) -> int:
        return 2 if self is VarianceRule.TP else 1


@dataclass(frozen=True)
class CombinedInference:
    q_bar: float
    u_bar: float
    b_m: float  # 0.0 when m == 1: no between-copy information
    m: int
    rule: VarianceRule
    variance: float
    df: float  # math.inf when normal quantiles apply
    level: float
    ci: tuple[float, float]

    def to_json(self, estimand: str | None = None) -> dict:
        out = {} if estimand is None else {"estimand": estimand}
        out.update({
            "m": self.m,
            "rule": self.rule.value,
            "q_bar": self.q_bar,
            "u_bar": self.u_bar,
            "b_m": self.b_m,
            "variance": self.variance,
            "df": "inf" if math.isinf(self.df) else self.df,
            "level": self.level,
            "ci": [self.ci[0], self.ci[1]],
        })
        return out


def combine_point(q: Sequence[float]) -> float:
    q = np.asarray(q, dtype=float)
    if q.size == 0:
        raise CombineError("no estimates to combine")
    if not np.all(np.isfinite(q)):
        raise CombineError("point estimates must be finite")
    return float(q.mean())


def within_variance(u: Sequence[float]) -> float:
    u = np.asarray(u, dtype=float)
    if u.size == 0:
        raise CombineError("no variance estimates to combine")
    if np.any(u < 0) or not np.all(np.isfinite(u)):
        raise CombineError("variance estimates must be finite and nonnegative")
    return float(u.mean())


def between_variance(q: Sequence[float]) -> float:
    q = np.asarray(q, dtype=float)
    if q.size < 2:
        raise CombineError(f"between-copy variance needs m >= 2, got m={q.size}")
    return float(q.var(ddof=1))


def _check_m(m: int, rule: VarianceRule) -> None:
    if m < rule.min_m:
        raise CombineError(f"rule {rule.value} requires m >= {rule.min_m}, got m={m}")


def pooled_variance(u_bar: float, b_m: float, m: int, rule) -> float:
    rule = VarianceRule.parse(rule)
    _check_m(m, rule)
    if u_bar < 0 or b_m < 0:
        raise CombineError("variance components must be nonnegative")
    if rule is VarianceRule.TP:
        return b_m / m + u_bar
    if rule is VarianceRule.TS:
        return u_bar * (1.0 + 1.0 / m)
    if rule is VarianceRule.TSPPD:
        return u_bar * (1.0 + 2.0 / m)
    return u_bar


def degrees_freedom(u_bar: float, b_m: float, m: int, rule) -> float:
    """``inf`` signals normal quantiles.

    For Tp, ``b_m = 0`` gives ``r = 0`` and the normal limit; ``u_bar = 0``
    with ``b_m > 0`` gives ``r = inf`` and ``df = m - 1``.
    """
    rule = VarianceRule.parse(rule)
    _check_m(m, rule)
    if rule is not VarianceRule.TP:
        return math.inf
    if u_bar == 0.0 and b_m == 0.0:
        raise CombineError("degrees of freedom undefined when u_bar and b_m are both zero")
    if b_m == 0.0:
        return math.inf
    if u_bar == 0.0:
        return float(m - 1)
    # (m-1)(1 + 1/r)^2 with 1/r = m u_bar / b_m; tiny b_m saturates to inf,
    # which is the normal limit
    s = 1.0 + (m * u_bar) / b_m
    return (m - 1) * s * s


def confidence_interval(q_bar: float, variance: float, df: float, level: float) -> tuple[float, float]:
    if not 0.0 < level < 1.0:
        raise CombineError(f"confidence level must lie in (0, 1), got {level}")
    if variance < 0:
        raise CombineError("variance must be nonnegative")
    if variance == 0.0:
        return (q_bar, q_bar)
    p = 0.5 * (1.0 + level)
    crit = quantile_normal(p) if math.isinf(df) else quantile_t(p, df)
    half = crit * math.sqrt(variance)
    return (q_bar - half, q_bar + half)


def combine(results: Sequence[EstimateResult], rule, level: float = 0.95) -> CombinedInference:
    rule = VarianceRule.parse(rule)
    m = len(results)
    if m == 0:
        raise CombineError("no results to combine")
    _check_m(m, rule)
    q =[r.q for r in results]
    q_bar = combine_point(q)
    u_bar = within_variance([r.u for r in results])
    b_m = between_variance(q) if m >= 2 else 0.0
    variance = pooled_variance(u_bar, b_m, m, rule)
    df = degrees_freedom(u_bar, b_m, m, rule)
    ci = confidence_interval(q_bar, variance, df, level)
    return CombinedInference(q_bar, u_bar, b_m, m, rule, variance, df, level, ci)
