"""Point estimates and their variance estimates on a single dataset.

Estimands are parsed from short strings::

    mean:y1              sample mean of y1
    prop:y1=1            share of rows where y1 equals level "1"
    ols:y1~y2+y3#y2      least-squares coefficient on y2 (intercept implied)
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.linalg import solve_triangular

from .tabular import Categorical, Continuous, Dataset, Schema


class EstimationError(ValueError):
    """Estimator preconditions failed (too few rows, rank deficiency, ...)."""


@dataclass(frozen=True)
class EstimateResult:
    q: float
    u: float
    n_used: int

    def __post_init__(self):
        if not (math.isfinite(self.q) and math.isfinite(self.u)) or self.u < 0:
            raise EstimationError(f"invalid estimate (q={self.q}, u={self.u})")


@dataclass(frozen=True)
class Mean:
    column: str

    @property
    def label(self) -> str:
        return f"mean:{self.column}"


@dataclass(frozen=True)
class Proportion:
    column: str
    level: str

    @property
    def label(self) -> str:
        return f"prop:{self.column}={self.level}"


@dataclass(frozen=True)
class OLS:
    response: str
    regressors: tuple[str, ...]
    coef: str  # regressor name, or "intercept"

    @property
    def coef_index(self) -> int:
        if self.coef == INTERCEPT:
            return 0
        return 1 + self.regressors.index(self.coef)

    @property
    def label(self) -> str:
        return f"ols:{self.response}~{'+'.join(self.regressors)}#{self.coef}"


Estimand = Union[Mean, Proportion, OLS]
INTERCEPT = "intercept"


def parse_estimand(text: str) -> Estimand:
    kind, sep, body = text.strip().partition(":")
    if not sep or not body:
        raise ValueError(f"cannot parse estimand {text!r}")
    kind = kind.lower()
    if kind == "mean":
        return Mean(body.strip())
    if kind in ("prop", "proportion"):
        col, eq, level = body.partition("=")
        if not eq or not col.strip() or not level.strip():
            raise ValueError(f"proportion needs column=level, got {text!r}")
        return Proportion(col.strip(), level.strip())
    if kind == "ols":
        model, hash_, coef = body.partition("#")
        response, tilde, rhs = model.partition("~")
        regressors = tuple(r.strip() for r in rhs.split("+") if r.strip())
        if not tilde or not response.strip() or not regressors:
            raise ValueError(f"ols needs response~x1+x2, got {text!r}")
        coef = coef.strip() if hash_ else regressors[0]
        if coef.lower() in ("intercept", "(intercept)", "0"):
            coef = INTERCEPT
        elif coef.isdigit():
            idx = int(coef)
            if idx > len(regressors):
                raise ValueError(f"coefficient index {idx} out of range in {text!r}")
            coef = regressors[idx - 1]
        elif coef not in regressors:
            raise ValueError(f"coefficient {coef!r} is not a regressor in {text!r}")
        return OLS(response.strip(), regressors, coef)
    raise ValueError(f"unknown estimand kind {kind!r} in {text!r}")


def check_estimand(schema: Schema, est: Estimand) -> None:
    """Raise if the estimand references missing or incompatible columns."""
    if isinstance(est, Mean):
        _numeric(schema, est.column)
    elif isinstance(est, Proportion):
        _level_value(schema, est.column, est.level)
    else:
        for name in (est.response, *est.regressors):
            _numeric(schema, name)


def _numeric(schema: Schema, name: str) -> None:
    kind = schema.kind(name)
    if isinstance(kind, Categorical):
        raise EstimationError(f"column {name!r} is categorical, a numeric column is required")


def _level_value(schema: Schema, name: str, level: str) -> float:
    kind = schema.kind(name)
    if isinstance(kind, Continuous):
        raise EstimationError(f"column {name!r} is continuous; proportions need a discrete column")
    levels = kind.levels
    if level not in levels:
        raise EstimationError(f"level {level!r} not in levels {list(levels)} of column {name!r}")
    return float(levels.index(level))


def estimate_mean(ds: Dataset, column: str) -> EstimateResult:
    _numeric(ds.schema, column)
    x = ds.column(column)
    n = x.size
    if n < 2:
        raise EstimationError("mean needs at least 2 rows")
    return EstimateResult(float(x.mean()), float(x.var(ddof=1)) / n, n)


def estimate_proportion(ds: Dataset, column: str, level) -> EstimateResult:
    """Sample share and its Wald variance ``p(1-p)/n``."""
    value = _level_value(ds.schema, column, str(level))
    x = ds.column(column)
    n = x.size
    p = float(np.count_nonzero(x == value)) / n
    return EstimateResult(p, p * (1.0 - p) / n, n)


def ols_fit(X: np.ndarray, y: np.ndarray, rank_tol: float = 1e-10):
    """Least squares through a Householder QR.

    Returns ``(beta, cov)`` where ``cov = sigma2 * inv(X'X)`` and
    ``sigma2 = RSS / (n - p)``.
    """
    n, p = X.shape
    if n <= p:
        raise EstimationError(f"OLS needs more rows than parameters (n={n}, p={p})")
    Q, R = np.linalg.qr(X)
    diag = np.abs(np.diag(R))
    if diag.min() <= rank_tol * max(diag.max(), 1.0) * math.sqrt(n):
        raise EstimationError("design matrix is rank deficient")
    beta = solve_triangular(R, Q.T @ y)
    resid = y - X @ beta
    sigma2 = float(resid @ resid) / (n - p)
    r_inv = solve_triangular(R, np.eye(p))
    cov = sigma2 * (r_inv @ r_inv.T)
    return beta, cov


def estimate_ols(ds: Dataset, response: str, regressors, coef_index: int) -> EstimateResult:
    regressors = tuple(regressors)
    for name in (response, *regressors):
        _numeric(ds.schema, name)
    if not 0 <= coef_index <= len(regressors):
        raise EstimationError(f"coefficient index {coef_index} out of range")
    X = np.column_stack([np.ones(ds.n)] + [ds.column(r) for r in regressors])
    beta, cov = ols_fit(X, ds.column(response))
    return EstimateResult(float(beta[coef_index]), max(float(cov[coef_index, coef_index]), 0.0), ds.n)


def estimate(ds: Dataset, est: Estimand) -> EstimateResult:
    if isinstance(est, Mean):
        return estimate_mean(ds, est.column)
    if isinstance(est, Proportion):
        return estimate_proportion(ds, est.column, est.level)
    if isinstance(est, OLS):
        return estimate_ols(ds, est.response, est.regressors, est.coef_index)
    raise TypeError(f"not an estimand: {est!r}")
