"""Data-generating models for the three simulation settings.

* sim1: trivariate normal, unit variances, covariances 0.8 / 0.6 / 0.25
* sim2: Y2 ~ N(0,1), Y3 ~ Exp(1) via a Gaussian copula with latent
  correlation 0.25, Y1 = 1 + Y2 + 3 Y3 + N(0,1)
* sim3: three Bernoulli(0.6) columns with binary correlations 0.6 / 0.6 / 0.2,
  produced by thresholding latent normals
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.special import log_ndtr

from ..estimators import OLS, INTERCEPT, Estimand, Mean, Proportion
from ..randkit import RngStream, latent_corr_for_binary, nearest_correlation, quantile_normal, sample_mvn
from ..tabular import Binary, Column, Continuous, Dataset, Schema, from_array

SIM1_MEAN = np.zeros(3)
SIM1_COV = np.array([[1.0, 0.8, 0.6],
                     [0.8, 1.0, 0.25],
                     [0.6, 0.25, 1.0]])
SIM2_LATENT_COV = 0.25
SIM3_P = 0.6
SIM3_CORR = (0.6, 0.6, 0.2)  # (y1,y2), (y1,y3), (y2,y3)

NAMES = ("y1", "y2", "y3")

# declared public ranges; draws beyond them are clamped (probability < 1e-8 per cell)
SIM1_SCHEMA = Schema(tuple(Column(c, Continuous(-6.0, 6.0)) for c in NAMES))
SIM2_SCHEMA = Schema((Column("y1", Continuous(-15.0, 80.0)),
                      Column("y2", Continuous(-6.0, 6.0)),
                      Column("y3", Continuous(0.0, 20.0))))
SIM3_SCHEMA = Schema(tuple(Column(c, Binary()) for c in NAMES))


@dataclass
class Truths:
    """Population values of the estimands a generator supports."""

    means: dict = field(default_factory=dict)
    proportions: dict = field(default_factory=dict)  # (column, level) -> p
    mvn: Optional[tuple[np.ndarray, np.ndarray]] = None  # joint normal (mean, cov)
    ols: dict = field(default_factory=dict)  # (response, regressors) -> {coef: value}
    latent_adjusted: bool = False

    def value(self, est: Estimand) -> Optional[float]:
        """Analytic truth, or ``None`` when the model gives no closed form."""
        if isinstance(est, Mean):
            return self.means.get(est.column)
        if isinstance(est, Proportion):
            return self.proportions.get((est.column, est.level))
        if isinstance(est, OLS):
            coefs = self.ols.get((est.response, est.regressors))
            if coefs is None and self.mvn is not None:
                coefs = mvn_regression(self.mvn[0], self.mvn[1], est.response, est.regressors)
            return None if coefs is None else coefs.get(est.coef)
        return None


def mvn_regression(mean, cov, response: str, regressors) -> Optional[dict]:
    """Population least-squares coefficients of one normal column on others."""
    try:
        y = NAMES.index(response)
        xs = [NAMES.index(r) for r in regressors]
    except ValueError:
        return None
    sxx = cov[np.ix_(xs, xs)]
    sxy = cov[xs, y]
    beta = np.linalg.solve(sxx, sxy)
    coefs = {r: float(b) for r, b in zip(regressors, beta)}
    coefs[INTERCEPT] = float(mean[y] - beta @ mean[xs])
    return coefs


def gen_sim1(rng: RngStream, n: int) -> tuple[Dataset, Truths]:
    _check_n(n)
    rows = sample_mvn(rng, SIM1_MEAN, SIM1_COV, n)
    truths = Truths(means=dict(zip(NAMES, SIM1_MEAN.tolist())), mvn=(SIM1_MEAN, SIM1_COV))
    return from_array(SIM1_SCHEMA, rows, clamp=True), truths


def gen_sim2(rng: RngStream, n: int, noise: bool = True) -> tuple[Dataset, Truths]:
    _check_n(n)
    latent = sample_mvn(rng, np.zeros(2), [[1.0, SIM2_LATENT_COV], [SIM2_LATENT_COV, 1.0]], n)
    y2 = latent[:, 0]
    # Exp(1) inverse CDF applied to Phi(U3): -log(1 - Phi(u)) = -log Phi(-u)
    y3 = -log_ndtr(-latent[:, 1])
    gamma = rng.gen.standard_normal(n) if noise else np.zeros(n)
    y1 = 1.0 + y2 + 3.0 * y3 + gamma
    truths = Truths(means={"y1": 4.0, "y2": 0.0, "y3": 1.0},
                    ols={("y1", ("y2", "y3")): {INTERCEPT: 1.0, "y2": 1.0, "y3": 3.0}})
    return from_array(SIM2_SCHEMA, np.column_stack([y1, y2, y3]), clamp=True), truths


@lru_cache(maxsize=32)
def sim3_latent_correlation(p: float, corr: tuple[float, float, float]) -> tuple[np.ndarray, bool]:
    """Latent correlation matrix for the binary generator and whether it had
    to be projected to the nearest positive-definite matrix."""
    r12, r13, r23 = (latent_corr_for_binary(p, p, r) for r in corr)
    c = np.array([[1.0, r12, r13], [r12, 1.0, r23], [r13, r23, 1.0]])
    fixed, adjusted = nearest_correlation(c)
    fixed.setflags(write=False)
    return fixed, adjusted


def gen_sim3(rng: RngStream, n: int, p: float = SIM3_P,
             corr: tuple[float, float, float] = SIM3_CORR) -> tuple[Dataset, Truths]:
    _check_n(n)
    latent_cov, adjusted = sim3_latent_correlation(float(p), tuple(float(c) for c in corr))
    z = sample_mvn(rng, np.zeros(3), latent_cov, n)
    threshold = quantile_normal(1.0 - p)
    rows = (z > threshold).astype(float)
    props = {}
    for c in NAMES:
        props[(c, "1")] = p
        props[(c, "0")] = 1.0 - p
    truths = Truths(means={c: p for c in NAMES}, proportions=props, latent_adjusted=adjusted)
    return from_array(SIM3_SCHEMA, rows), truths


def _check_n(n: int) -> None:
    if n < 10:
        raise ValueError(f"simulation sample size must be >= 10, got {n}")


GENERATORS = {"sim1": gen_sim1, "sim2": gen_sim2, "sim3": gen_sim3}
SCHEMAS = {"sim1": SIM1_SCHEMA, "sim2": SIM2_SCHEMA, "sim3": SIM3_SCHEMA}

DEFAULT_ESTIMANDS = {
    "sim1": ["mean:y1", "mean:y2", "mean:y3", "ols:y1~y2+y3#y2", "ols:y1~y2+y3#y3"],
    "sim2": ["mean:y2", "mean:y3", "ols:y1~y2+y3#y2", "ols:y1~y2+y3#y3"],
    "sim3": ["prop:y1=1", "prop:y2=1", "prop:y3=1"],
}


def skewness(x) -> float:
    x = np.asarray(x, dtype=float)
    d = x - x.mean()
    return float(np.mean(d**3) / np.mean(d**2) ** 1.5)


def sim1_slopes() -> dict:
    return mvn_regression(SIM1_MEAN, SIM1_COV, "y1", ("y2", "y3"))


__all__ = [
    "GENERATORS", "SCHEMAS", "DEFAULT_ESTIMANDS", "Truths", "gen_sim1", "gen_sim2", "gen_sim3",
    "sim3_latent_correlation", "mvn_regression", "sim1_slopes", "skewness",
]
