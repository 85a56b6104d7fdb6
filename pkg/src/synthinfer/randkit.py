"""Seeded random streams and the special functions the simulations need.

Every random draw in the package flows from an :class:`RngStream`.  A stream
is addressed by ``(seed, stream_id)``; child streams are derived by hashing
keys into a new ``stream_id`` so that replication ``b``, method ``s`` and
copy ``i`` each own an independent generator regardless of scheduling.
"""
from __future__ import annotations

import hashlib
import json
import math
from functools import lru_cache

import numpy as np

_MASK64 = (1 << 64) - 1
_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)


class CovarianceError(ValueError):
    """Matrix is not symmetric positive definite."""


class InfeasibleCorrelation(ValueError):
    """Requested binary correlation is outside the range the marginals allow."""


def derive_stream_id(parent: int, *keys) -> int:
    payload = json.dumps([int(parent), *keys], separators=(",", ":"), default=str)
    digest = hashlib.blake2b(payload.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class RngStream:
    """A reproducible random stream.

    Two streams built from the same ``(seed, stream_id)`` yield identical
    sequences.  Draws advance the stream's own generator; use :meth:`spawn`
    to hand independent streams to sub-tasks.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self._gen = None

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def __getstate__(self):
        return {"seed": self.seed, "stream_id": self.stream_id, "gen": self._gen}

    def __setstate__(self, state):
        self.seed = state["seed"]
        self.stream_id = state["stream_id"]
        self._gen = state["gen"]

    @property
    def gen(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence([self.seed, self.stream_id])
            self._gen = np.random.Generator(np.random.PCG64(ss))
        return self._gen

    def spawn(self, *keys) -> "RngStream":
        """Child stream keyed by ``keys`` (ints, strings or floats)."""
        return RngStream(self.seed, derive_stream_id(self.stream_id, *keys))

    def fresh(self) -> "RngStream":
        """Same address, rewound to the start of the sequence."""
        return RngStream(self.seed, self.stream_id)

    # thin samplers; everything else goes through ``gen`` directly
    def normal(self, size=None, loc=0.0, scale=1.0):
        return self.gen.normal(loc, scale, size)

    def uniform(self, size=None, low=0.0, high=1.0):
        return self.gen.uniform(low, high, size)

    def exponential(self, size=None, scale=1.0):
        return self.gen.exponential(scale, size)

    def laplace(self, size=None, scale=1.0):
        if not scale > 0:
            raise ValueError(f"Laplace scale must be positive, got {scale}")
        return self.gen.laplace(0.0, scale, size)


# ---------------------------------------------------------------------------
# multivariate normal


def cholesky(c) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == c``."""
    c = np.asarray(c, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise CovarianceError(f"covariance must be square, got shape {c.shape}")
    if not np.allclose(c, c.T, rtol=0.0, atol=1e-12):
        raise CovarianceError("covariance is not symmetric")
    try:
        return np.linalg.cholesky(c)
    except np.linalg.LinAlgError:
        raise CovarianceError("covariance is not positive definite") from None


def sample_mvn(rng: RngStream, mean, cov, n: int) -> np.ndarray:
    mean = np.asarray(mean, dtype=float)
    L = cholesky(cov)
    if mean.shape != (L.shape[0],):
        raise ValueError("mean and covariance dimensions differ")
    if n < 1:
        raise ValueError("n must be >= 1")
    z = rng.gen.standard_normal((n, L.shape[0]))
    return mean + z @ L.T


def laplace(rng: RngStream, scale: float) -> float:
    """One draw from the Laplace density ``exp(-|x|/scale) / (2 scale)``."""
    return float(rng.laplace(scale=scale))


def nearest_correlation(c, floor: float = 1e-8) -> tuple[np.ndarray, bool]:
    """Clip eigenvalues at ``floor`` and rescale to unit diagonal.

    Returns the matrix and whether it had to be changed.
    """
    c = np.asarray(c, dtype=float)
    w, v = np.linalg.eigh(c)
    if w.min() > floor:
        return c, False
    fixed = (v * np.maximum(w, floor)) @ v.T
    d = np.sqrt(np.diag(fixed))
    fixed = fixed / np.outer(d, d)
    return (fixed + fixed.T) / 2.0, True


# ---------------------------------------------------------------------------
# normal distribution

_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


def normal_pdf(x: float) -> float:
    return math.exp(-0.5 * x * x) / _SQRT2PI


def quantile_normal(prob: float) -> float:
    """Inverse standard normal CDF.

    Acklam's rational approximation followed by one Halley step against
    ``erfc``; the result is accurate to a few ulps.
    """
    if not 0.0 < prob < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {prob}")
    if prob > 0.5:
        return -_lower_normal_quantile(1.0 - prob)
    return _lower_normal_quantile(prob)


def _lower_normal_quantile(p: float) -> float:
    if p < 0.02425:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        x /= (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
    else:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
        x /= ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
    e = 0.5 * math.erfc(-x / _SQRT2) - p
    u = e * _SQRT2PI * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


# ---------------------------------------------------------------------------
# Student t via the regularized incomplete beta function


def _betacf(a: float, b: float, x: float, max_iter: int = 20000) -> float:
    # modified Lentz evaluation of the incomplete-beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def log_betainc(a: float, b: float, x: float, y: float | None = None) -> float:
    """``log I_x(a, b)``; pass ``y = 1 - x`` when it is known more precisely."""
    if y is None:
        y = 1.0 - x
    if x <= 0.0:
        return -math.inf
    if y <= 0.0:
        return 0.0
    lbt = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
           + a * math.log(x) + b * math.log(y))
    if x < (a + 1.0) / (a + b + 2.0):
        return lbt + math.log(_betacf(a, b, x)) - math.log(a)
    return math.log1p(-math.exp(lbt + math.log(_betacf(b, a, y)) - math.log(b)))


def betainc(a: float, b: float, x: float) -> float:
    return math.exp(log_betainc(a, b, x))


def _t_log_lower(t: float, df: float) -> float:
    # log P(T <= t) for t <= 0
    t2 = t * t
    return math.log(0.5) + log_betainc(0.5 * df, 0.5, df / (df + t2), t2 / (df + t2))


def t_cdf(t: float, df: float) -> float:
    if not df > 0:
        raise ValueError(f"degrees of freedom must be positive, got {df}")
    if t <= 0:
        return math.exp(_t_log_lower(t, df))
    return -math.expm1(_t_log_lower(-t, df))


def _t_log_pdf(t: float, df: float) -> float:
    return (math.lgamma(0.5 * (df + 1.0)) - math.lgamma(0.5 * df)
            - 0.5 * math.log(df * math.pi) - 0.5 * (df + 1.0) * math.log1p(t * t / df))


def t_pdf(t: float, df: float) -> float:
    return math.exp(_t_log_pdf(t, df))


_LARGE_DF = 1e5


def _t_quantile_expansion(z: float, df: float) -> float:
    # Cornish-Fisher type expansion around the normal quantile
    z2 = z * z
    g1 = (z2 + 1.0) * z / 4.0
    g2 = ((5.0 * z2 + 16.0) * z2 + 3.0) * z / 96.0
    g3 = (((3.0 * z2 + 19.0) * z2 + 17.0) * z2 - 15.0) * z / 384.0
    g4 = ((((79.0 * z2 + 776.0) * z2 + 1482.0) * z2 - 1920.0) * z2 - 945.0) * z / 92160.0
    # powers of 1/df rather than of df, so huge df cannot overflow
    w = 1.0 / df
    return z + w * (g1 + w * (g2 + w * (g3 + w * g4)))


def quantile_t(prob: float, df: float) -> float:
    """Inverse Student-t CDF for real ``df > 0``.

    Solves ``log P(T <= t) = log p`` in the lower tail with Newton steps
    safeguarded by a bracket; upper-tail probabilities use the symmetry.
    Very large ``df`` use a four-term expansion around the normal quantile.
    """
    if not 0.0 < prob < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {prob}")
    if not (df > 0):
        raise ValueError(f"degrees of freedom must be positive, got {df}")
    if prob == 0.5:
        return 0.0
    if math.isinf(df):
        return quantile_normal(prob)
    if prob > 0.5:
        return -_lower_t_quantile(1.0 - prob, df)
    return _lower_t_quantile(prob, df)


def _lower_t_quantile(q: float, df: float) -> float:
    z = quantile_normal(q)
    if df > _LARGE_DF:
        return _t_quantile_expansion(z, df)
    if df == 1.0:
        return -1.0 / math.tan(math.pi * q)
    if df == 2.0:
        return (2.0 * q - 1.0) / math.sqrt(2.0 * q * (1.0 - q))

    log_q = math.log(q)
    hi = 0.0
    lo = min(_t_quantile_expansion(z, df) if df > 4 else z, -1.0)
    while _t_log_lower(lo, df) > log_q:
        hi = lo
        lo *= 2.0
        if not math.isfinite(lo):
            raise ArithmeticError(f"t quantile out of range (p={q}, df={df})")
    t = lo
    for _ in range(600):
        f = _t_log_lower(t, df) - log_q
        if f > 0:
            hi = t
        else:
            lo = t
        # d/dt log G = pdf / G
        slope = math.exp(_t_log_pdf(t, df) - _t_log_lower(t, df))
        new = t - f / slope
        if not lo < new < hi:
            new = 0.5 * (lo + hi)
        if abs(new - t) <= 1e-14 * max(1.0, abs(t)):
            return new
        t = new
    return t


# ---------------------------------------------------------------------------
# bivariate normal


@lru_cache(maxsize=None)
def _gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    # nodes on [0, 2]
    return 1.0 + x, w


def bvn_cdf(x: float, y: float, rho: float) -> float:
    """``P(X <= x, Y <= y)`` for standard normals with correlation ``rho``.

    Drezner-Wesolowsky style Gauss-Legendre quadrature in Genz's
    formulation (6/12/20 nodes by ``|rho|``), accurate to about 1e-15.
    """
    if not -1.0 <= rho <= 1.0 or math.isnan(rho):
        raise ValueError(f"correlation must lie in [-1, 1], got {rho}")
    return _bvn_upper(-x, -y, rho)


def _bvn_upper(h: float, k: float, r: float) -> float:
    # P(X > h, Y > k)
    if h == math.inf or k == math.inf:
        return 0.0
    if h == -math.inf:
        return 1.0 if k == -math.inf else normal_cdf(-k)
    if k == -math.inf:
        return normal_cdf(-h)
    if r == 0.0:
        return normal_cdf(-h) * normal_cdf(-k)

    two_pi = 2.0 * math.pi
    ar = abs(r)
    nodes, weights = _gauss_legendre(6 if ar < 0.3 else 12 if ar < 0.75 else 20)
    hk = h * k
    if ar < 0.925:
        hs = 0.5 * (h * h + k * k)
        asr = 0.5 * math.asin(r)
        sn = np.sin(asr * nodes)
        bvn = float(np.dot(np.exp((sn * hk - hs) / (1.0 - sn * sn)), weights))
        bvn = bvn * asr / two_pi + normal_cdf(-h) * normal_cdf(-k)
        return min(1.0, max(0.0, bvn))

    if r < 0:
        k = -k
        hk = -hk
    bvn = 0.0
    if ar < 1.0:
        a2 = (1.0 - r) * (1.0 + r)
        a = math.sqrt(a2)
        bs = (h - k) ** 2
        asr = -0.5 * (bs / a2 + hk)
        c = (4.0 - hk) / 8.0
        d = (12.0 - hk) / 80.0
        if asr > -100.0:
            bvn = a * math.exp(asr) * (1.0 - c * (bs - a2) * (1.0 - d * bs) / 3.0 + c * d * a2 * a2)
        if hk > -100.0:
            b = math.sqrt(bs)
            sp = _SQRT2PI * normal_cdf(-b / a)
            bvn -= math.exp(-0.5 * hk) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0)
        a *= 0.5
        xs = (a * nodes) ** 2
        asr = -0.5 * (bs / xs + hk)
        keep = asr > -100.0
        xs, asr, w = xs[keep], asr[keep], weights[keep]
        sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs)
        rs = np.sqrt(1.0 - xs)
        ep = np.exp(-0.5 * hk * xs / (1.0 + rs) ** 2) / rs
        bvn = (a * float(np.dot(np.exp(asr) * (sp - ep), w)) - bvn) / two_pi
    if r > 0:
        bvn += normal_cdf(-max(h, k))
    elif h >= k:
        bvn = -bvn
    else:
        span = normal_cdf(k) - normal_cdf(h) if h < 0 else normal_cdf(-h) - normal_cdf(-k)
        bvn = span - bvn
    return min(1.0, max(0.0, bvn))


# ---------------------------------------------------------------------------
# correlated binary variables by thresholding latent normals


def binary_corr_from_latent(p1: float, p2: float, rho_latent: float) -> float:
    """Pearson correlation of ``1{Z1 > c1}``, ``1{Z2 > c2}`` with
    ``P(Zi > ci) = pi`` and ``corr(Z1, Z2) = rho_latent``."""
    p11 = bvn_cdf(quantile_normal(p1), quantile_normal(p2), rho_latent)
    return (p11 - p1 * p2) / math.sqrt(p1 * (1 - p1) * p2 * (1 - p2))


def latent_corr_for_binary(p1: float, p2: float, rho_b: float, tol: float = 1e-12) -> float:
    """Latent normal correlation that yields binary correlation ``rho_b``.

    Bisection on ``[-1, 1]``; the binary correlation is increasing in the
    latent one.  Raises :class:`InfeasibleCorrelation` when ``rho_b`` is
    outside what the two marginals allow.
    """
    for p in (p1, p2):
        if not 0.0 < p < 1.0:
            raise ValueError(f"marginal probability must lie in (0, 1), got {p}")
    if rho_b == 0.0:
        return 0.0
    lo, hi = -1.0, 1.0
    f_lo = binary_corr_from_latent(p1, p2, lo) - rho_b
    f_hi = binary_corr_from_latent(p1, p2, hi) - rho_b
    if f_lo > tol or f_hi < -tol:
        raise InfeasibleCorrelation(
            f"binary correlation {rho_b} infeasible for marginals ({p1}, {p2}); "
            f"feasible range [{f_lo + rho_b:.6f}, {f_hi + rho_b:.6f}]"
        )
    if abs(f_lo) <= tol:
        return lo
    if abs(f_hi) <= tol:
        return hi
    mid = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f = binary_corr_from_latent(p1, p2, mid) - rho_b
        if abs(f) < tol or hi - lo < 1e-15:
            break
        if f > 0:
            hi = mid
        else:
            lo = mid
    return mid
