"""Private generative models and m-copy synthetic bundles.

Three model families:

* perturbed histogram: Laplace noise on the full joint contingency table
* chain Bayes net: parents picked among earlier columns with the exponential
  mechanism, then noisy conditional tables (budget split half/half)
* parametric Gaussian: non-private plug-in or posterior-predictive baseline

Continuous columns are discretized into equal-width bins over the schema
range; synthetic continuous values are drawn uniformly inside their bin.
Every copy in a bundle refits its model from scratch at ``epsilon / m``.
"""
from __future__ import annotations

import enum
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import stats

from .dp import (
    NON_PRIVATE,
    BudgetError,
    BudgetLedger,
    BudgetLike,
    NeighborSemantics,
    PrivacyBudget,
    as_budget,
    encode_eps,
    exponential_mechanism,
    laplace_mechanism,
    split_budget,
)
from .randkit import CovarianceError, RngStream, cholesky
from .tabular import Continuous, Dataset, Schema, from_array, save_csv

MAX_CELLS = 10**6


class SynthesisError(ValueError):
    """A model could not be fitted or sampled."""


class Method(enum.Enum):
    HISTOGRAM = "histogram"
    BAYESNET = "bayesnet"
    GAUSSIAN = "gaussian"
    GAUSSIAN_PPD = "gaussian_ppd"

    @classmethod
    def parse(cls, text) -> "Method":
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower().replace("-", "_")
        aliases = {
            "histogram": cls.HISTOGRAM, "perturbedhistogram": cls.HISTOGRAM,
            "perturbed_histogram": cls.HISTOGRAM,
            "bayesnet": cls.BAYESNET, "chainbayesnet": cls.BAYESNET, "chain_bayesnet": cls.BAYESNET,
            "gaussian": cls.GAUSSIAN, "parametricgaussian": cls.GAUSSIAN,
            "parametric_gaussian": cls.GAUSSIAN,
            "gaussian_ppd": cls.GAUSSIAN_PPD, "parametricgaussianppd": cls.GAUSSIAN_PPD,
            "parametric_gaussian_ppd": cls.GAUSSIAN_PPD,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown synthesis method {text!r}; expected one of "
                             f"{[m.value for m in cls]}") from None

    @property
    def private(self) -> bool:
        return self in (Method.HISTOGRAM, Method.BAYESNET)


@dataclass(frozen=True)
class SynthesisRequest:
    method: Method
    total_budget: PrivacyBudget
    m: int
    bins_per_continuous: int = 20
    bn_degree: int = 1
    out_n: Optional[int] = None
    neighbors: NeighborSemantics = NeighborSemantics.REPLACEMENT
    fixed_chain: bool = False
    mi_sensitivity: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "method", Method.parse(self.method))
        object.__setattr__(self, "total_budget", as_budget(self.total_budget))
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if self.bins_per_continuous < 2:
            raise ValueError("need at least 2 bins per continuous column")
        if self.bn_degree < 0:
            raise ValueError("bn_degree must be >= 0")
        if self.out_n is not None and self.out_n < 1:
            raise ValueError("out_n must be >= 1")


# ---------------------------------------------------------------------------
# discretization


@dataclass(frozen=True)
class Discretizer:
    schema: Schema
    bins: int

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return tuple(self.bins if isinstance(c.kind, Continuous) else c.kind.cardinality
                     for c in self.schema.columns)

    def encode(self, ds: Dataset) -> np.ndarray:
        codes = np.empty(ds.rows.shape, dtype=np.int64)
        for j, col in enumerate(self.schema.columns):
            x = ds.rows[:, j]
            if isinstance(col.kind, Continuous):
                lo, hi = col.kind.lo, col.kind.hi
                idx = np.floor((x - lo) / (hi - lo) * self.bins).astype(np.int64)
                codes[:, j] = np.clip(idx, 0, self.bins - 1)
            else:
                codes[:, j] = x.astype(np.int64)
        return codes

    def decode(self, codes: np.ndarray, rng: RngStream) -> Dataset:
        rows = codes.astype(float)
        for j, col in enumerate(self.schema.columns):
            if isinstance(col.kind, Continuous):
                lo, hi = col.kind.lo, col.kind.hi
                width = (hi - lo) / self.bins
                u = rng.gen.random(codes.shape[0])
                rows[:, j] = np.clip(lo + (codes[:, j] + u) * width, lo, hi)
        return Dataset(self.schema, rows)


def _clamp_normalize(table: np.ndarray) -> np.ndarray:
    """Clamp negatives to zero and normalize the last axis; all-zero slices
    become uniform."""
    t = np.maximum(table, 0.0)
    s = t.sum(axis=-1, keepdims=True)
    uniform = np.full_like(t, 1.0 / t.shape[-1])
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(s > 0, t / np.where(s > 0, s, 1.0), uniform)
    return out


def _sample_rows(prob_rows: np.ndarray, row_index: np.ndarray, rng: RngStream) -> np.ndarray:
    # inverse-CDF draw of one category per requested row of a stochastic matrix
    cum = np.cumsum(prob_rows, axis=-1)
    u = rng.gen.random(row_index.shape[0])
    picks = (u[:, None] >= cum[row_index]).sum(axis=1)
    return np.minimum(picks, prob_rows.shape[-1] - 1)


class SynthModel:
    """A fitted, privatized model.  Holds no raw data rows."""

    method: Method
    schema: Schema
    budget: PrivacyBudget

    def sample(self, rng: RngStream, n: int) -> Dataset:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# perturbed histogram


@dataclass
class HistogramModel(SynthModel):
    schema: Schema
    discretizer: Discretizer
    probs: np.ndarray  # joint table, shape = cardinalities
    noisy_counts: np.ndarray  # released table before clamping
    budget: PrivacyBudget
    method: Method = Method.HISTOGRAM

    def sample(self, rng: RngStream, n: int) -> Dataset:
        flat = self.probs.ravel()
        cells = rng.gen.choice(flat.size, size=n, p=flat)
        codes = np.column_stack(np.unravel_index(cells, self.probs.shape))
        return self.discretizer.decode(codes, rng)


def _cell_guard(shape) -> int:
    cells = math.prod(shape)
    if cells > MAX_CELLS:
        raise SynthesisError(f"contingency table has {cells} cells, limit is {MAX_CELLS}")
    return cells


def fit_perturbed_histogram(ds: Dataset, eps: BudgetLike, bins: int, rng: RngStream,
                            ledger: BudgetLedger,
                            neighbors: NeighborSemantics = NeighborSemantics.REPLACEMENT,
                            label: str = "histogram") -> HistogramModel:
    eps = as_budget(eps)
    disc = Discretizer(ds.schema, bins)
    shape = disc.cardinalities
    _cell_guard(shape)
    ledger.charge(label, eps)
    codes = disc.encode(ds)
    counts = np.bincount(np.ravel_multi_index(codes.T, shape), minlength=math.prod(shape))
    noisy = laplace_mechanism(rng, counts.astype(float), neighbors.histogram_sensitivity,
                              eps.epsilon)
    probs = _clamp_normalize(noisy).reshape(shape)
    return HistogramModel(ds.schema, disc, probs, noisy.reshape(shape), eps)


# ---------------------------------------------------------------------------
# chain Bayes net


def default_mi_sensitivity(n: int) -> float:
    return 2.0 * math.log2(n) / n + 2.0 / n


def mutual_information(child: np.ndarray, parents: np.ndarray, child_card: int,
                       parent_cards: tuple[int, ...]) -> float:
    """Empirical mutual information in bits between a column and a parent set."""
    if parents.shape[1] == 0:
        return 0.0
    cfg = np.ravel_multi_index(parents.T, parent_cards)
    n_cfg = math.prod(parent_cards)
    joint = np.bincount(cfg * child_card + child, minlength=n_cfg * child_card)
    joint = joint.reshape(n_cfg, child_card) / child.shape[0]
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log2(joint[nz] / (px @ py)[nz])))


@dataclass
class BayesNetModel(SynthModel):
    schema: Schema
    discretizer: Discretizer
    parents: list  # parents[j] = tuple of earlier column indices
    conditionals: list  # conditionals[j]: (n_parent_configs, card_j) stochastic matrix
    budget: PrivacyBudget
    method: Method = Method.BAYESNET

    def sample(self, rng: RngStream, n: int) -> Dataset:
        cards = self.discretizer.cardinalities
        codes = np.zeros((n, len(cards)), dtype=np.int64)
        for j, (pa, table) in enumerate(zip(self.parents, self.conditionals)):
            if pa:
                cfg = np.ravel_multi_index(codes[:, list(pa)].T, tuple(cards[k] for k in pa))
            else:
                cfg = np.zeros(n, dtype=np.int64)
            codes[:, j] = _sample_rows(table, cfg, rng)
        return self.discretizer.decode(codes, rng)


def fit_chain_bayesnet(ds: Dataset, eps: BudgetLike, degree: int, rng: RngStream,
                       ledger: BudgetLedger, bins: int = 20,
                       neighbors: NeighborSemantics = NeighborSemantics.REPLACEMENT,
                       fixed_chain: bool = False, mi_sensitivity: Optional[float] = None,
                       label: str = "bayesnet") -> BayesNetModel:
    """Fit a degree-bounded Bayes net over the schema order.

    Each column picks up to ``degree`` parents among the columns before it.
    Half the budget goes to those picks (exponential mechanism on mutual
    information), half to the noisy conditional tables.  ``degree = 0`` or
    ``fixed_chain`` skip the selection and spend everything on the tables.
    """
    eps = as_budget(eps)
    if degree < 0:
        raise ValueError("degree must be >= 0")
    disc = Discretizer(ds.schema, bins)
    cards = disc.cardinalities
    p = len(cards)
    codes = disc.encode(ds)

    select = degree > 0 and not fixed_chain and p > 1
    if select:
        eps_struct = PrivacyBudget(eps.epsilon / 2, eps.delta / 2)
        eps_param = PrivacyBudget(eps.epsilon / 2, eps.delta / 2)
    else:
        eps_struct, eps_param = None, eps

    parents: list[tuple[int, ...]] = []
    if select:
        ledger.charge(f"{label}/structure", eps_struct)
        sens = mi_sensitivity if mi_sensitivity is not None else default_mi_sensitivity(ds.n)
        per_pick = eps_struct.epsilon / (p - 1)
        srng = rng.spawn("structure")
        parents.append(())
        for j in range(1, p):
            cands = list(itertools.combinations(range(j), min(degree, j)))
            scores = [mutual_information(codes[:, j], codes[:, list(c)], cards[j],
                                         tuple(cards[k] for k in c)) for c in cands]
            parents.append(exponential_mechanism(srng, cands, scores, sens, per_pick))
    else:
        parents = [tuple(range(max(0, j - degree), j)) for j in range(p)]

    ledger.charge(f"{label}/parameters", eps_param)
    per_table = eps_param.epsilon / p
    prng = rng.spawn("parameters")
    conditionals = []
    for j, pa in enumerate(parents):
        pcards = tuple(cards[k] for k in pa)
        n_cfg = math.prod(pcards)
        _cell_guard((n_cfg, cards[j]))
        cfg = np.ravel_multi_index(codes[:, list(pa)].T, pcards) if pa else np.zeros(ds.n, dtype=np.int64)
        counts = np.bincount(cfg * cards[j] + codes[:, j], minlength=n_cfg * cards[j]).astype(float)
        noisy = laplace_mechanism(prng, counts, neighbors.histogram_sensitivity, per_table)
        conditionals.append(_clamp_normalize(noisy.reshape(n_cfg, cards[j])))
    return BayesNetModel(ds.schema, disc, parents, conditionals, eps)


# ---------------------------------------------------------------------------
# parametric Gaussian (non-private baselines)


@dataclass
class GaussianModel(SynthModel):
    schema: Schema
    mean: np.ndarray
    cov: np.ndarray
    n_fit: int
    ppd: bool
    budget: PrivacyBudget = field(default=NON_PRIVATE)

    @property
    def method(self) -> Method:
        return Method.GAUSSIAN_PPD if self.ppd else Method.GAUSSIAN

    def draw_parameters(self, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
        """Posterior draw under the flat/Jeffreys prior:
        ``Sigma ~ InvWishart(n-1, (n-1) S)``, ``mu | Sigma ~ N(xbar, Sigma/n)``."""
        n = self.n_fit
        sigma = stats.invwishart.rvs(df=n - 1, scale=(n - 1) * self.cov, random_state=rng.gen)
        sigma = np.atleast_2d(sigma)
        mu = self.mean + rng.gen.standard_normal(self.mean.size) @ cholesky(sigma / n).T
        return mu, sigma

    def sample(self, rng: RngStream, n: int) -> Dataset:
        if self.ppd:
            mu, sigma = self.draw_parameters(rng)
        else:
            mu, sigma = self.mean, self.cov
        L = cholesky(sigma)
        rows = mu + rng.gen.standard_normal((n, mu.size)) @ L.T
        return from_array(self.schema, rows, clamp=True)


def fit_parametric_gaussian(ds: Dataset, ppd: bool, rng: Optional[RngStream] = None) -> GaussianModel:
    """Sample mean and covariance; no privacy.

    ``rng`` is accepted for interface symmetry; fitting is deterministic and
    the posterior draw for ``ppd`` happens per sampled copy.
    """
    if not all(isinstance(c.kind, Continuous) for c in ds.schema.columns):
        raise SynthesisError("parametric Gaussian needs all columns continuous")
    p = ds.schema.p
    if ds.n <= p + 2:
        raise SynthesisError(f"parametric Gaussian needs n > p + 2 (n={ds.n}, p={p})")
    mean = ds.rows.mean(axis=0)
    cov = np.atleast_2d(np.cov(ds.rows, rowvar=False))
    try:
        cholesky(cov)
    except CovarianceError:
        raise SynthesisError("sample covariance is singular") from None
    return GaussianModel(ds.schema, mean, cov, ds.n, bool(ppd))


# ---------------------------------------------------------------------------
# bundles


def fit_model(ds: Dataset, req: SynthesisRequest, budget: PrivacyBudget, rng: RngStream,
              ledger: BudgetLedger, label: str) -> SynthModel:
    method = req.method
    if method is Method.HISTOGRAM:
        return fit_perturbed_histogram(ds, budget, req.bins_per_continuous, rng, ledger,
                                       req.neighbors, label=f"{label}/histogram")
    if method is Method.BAYESNET:
        return fit_chain_bayesnet(ds, budget, req.bn_degree, rng, ledger,
                                  bins=req.bins_per_continuous, neighbors=req.neighbors,
                                  fixed_chain=req.fixed_chain, mi_sensitivity=req.mi_sensitivity,
                                  label=f"{label}/bayesnet")
    ledger.charge(f"{label}/{method.value}", NON_PRIVATE)
    return fit_parametric_gaussian(ds, method is Method.GAUSSIAN_PPD, rng)


def generate_m_datasets(ds: Dataset, req: SynthesisRequest, rng: RngStream,
                        ledger: BudgetLedger) -> list[Dataset]:
    """Fit ``m`` independent models at ``total / m`` each and sample one
    synthetic dataset from each."""
    if not req.method.private and req.total_budget.is_private:
        raise SynthesisError(f"method {req.method.value} is not differentially private; "
                             f"use epsilon=inf")
    if req.total_budget.epsilon > ledger.remaining().epsilon * (1 + 1e-12) or \
            req.total_budget.delta > ledger.remaining().delta * (1 + 1e-12):
        raise BudgetError(f"over budget: request needs epsilon={req.total_budget.epsilon} but "
                          f"the ledger has epsilon={ledger.remaining().epsilon} left")
    per_copy = split_budget(req.total_budget, req.m)
    out_n = req.out_n or ds.n
    copies = []
    for i in range(req.m):
        crng = rng.spawn("copy", i)
        model = fit_model(ds, req, per_copy, crng.spawn("fit"), ledger, label=f"copy{i + 1}")
        copies.append(model.sample(crng.spawn("sample"), out_n))
    return copies


def write_bundle(copies: list[Dataset], out_dir, req: SynthesisRequest, ledger: BudgetLedger,
                 seed: int) -> Path:
    """Write ``syn_1.csv .. syn_m.csv`` and ``manifest.json``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for i, ds in enumerate(copies, start=1):
        name = f"syn_{i}.csv"
        save_csv(ds, out / name)
        files.append(name)
    per_copy = split_budget(req.total_budget, req.m)
    manifest = {
        "method": req.method.value,
        "m": req.m,
        "total_epsilon": encode_eps(req.total_budget.epsilon),
        "per_copy_epsilon": encode_eps(per_copy.epsilon),
        "delta": req.total_budget.delta,
        "neighbors": req.neighbors.value,
        "bins_per_continuous": req.bins_per_continuous,
        "bn_degree": req.bn_degree,
        "seed": seed,
        "files": files,
        "schema": copies[0].schema.to_json() if copies else None,
        "ledger": ledger.to_json(),
    }
    path = out / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path
