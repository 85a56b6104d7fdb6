"""Replication loop: original data -> m synthetic copies per (method, eps)
-> per-copy estimates -> combined inference under each variance rule.

Every replication draws from its own stream ``RngStream(seed).spawn("replication", b)``,
so results do not depend on how replications are scheduled across workers.
"""
from __future__ import annotations

import inspect
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..combine import CombineError, VarianceRule, combine, confidence_interval
from ..dp import BudgetError, BudgetLedger, NeighborSemantics, PrivacyBudget, encode_eps, parse_eps
from ..estimators import EstimateResult, EstimationError, check_estimand, estimate, parse_estimand
from ..randkit import CovarianceError, RngStream
from ..synthesizers import Method, SynthesisError, SynthesisRequest, generate_m_datasets
from ..tabular import Continuous
from .generators import DEFAULT_ESTIMANDS, GENERATORS, SCHEMAS
from .metrics import metric_bias, metric_coverage, monte_carlo_variance

log = logging.getLogger(__name__)

DEFAULT_GRID = (0.005, 0.05, 0.5, 2.5, 5.0, 8.0, 10.0, 50.0, math.inf)
DEFAULT_RULES = ("tp", "ts", "tsppd", "naive")
MAX_FAIL_FRACTION = 0.10
_CELL_ERRORS = (SynthesisError, EstimationError, CovarianceError, CombineError, BudgetError,
                np.linalg.LinAlgError)


class ConfigError(ValueError):
    """Invalid experiment configuration; ``keys`` names the offending entries."""

    def __init__(self, problems: dict):
        self.keys = sorted(problems)
        detail = "; ".join(f"{k}: {problems[k]}" for k in self.keys)
        super().__init__(f"invalid config keys {self.keys}: {detail}")


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    simulation: str = "sim1"
    n: int = 2000
    B: int = 500
    m: int = 5
    epsilon_grid: tuple = DEFAULT_GRID
    methods: tuple = ()
    estimands: tuple = ()
    rules: tuple = DEFAULT_RULES
    level: float = 0.95
    seed: int = 0
    out_dir: Optional[str] = None
    bins: int = 20
    bn_degree: int = 1
    neighbors: str = "replacement"
    truth: str = "analytic"  # or "monte_carlo": mean of original-data estimates
    archive: bool = False
    sim_options: dict = field(default_factory=dict)

    def __post_init__(self):
        problems = {}
        sim = str(self.simulation).lower()
        object.__setattr__(self, "simulation", sim)
        if sim not in GENERATORS:
            problems["simulation"] = f"expected one of {sorted(GENERATORS)}, got {self.simulation!r}"
        for key, lo in (("n", 10), ("B", 2), ("m", 1), ("bins", 2), ("bn_degree", 0)):
            v = getattr(self, key)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < lo:
                problems[key] = f"must be an integer >= {lo}, got {v!r}"
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            problems["seed"] = f"must be an integer in [0, 2^64), got {self.seed!r}"
        if not (isinstance(self.level, (int, float)) and 0.0 < self.level < 1.0):
            problems["level"] = f"must lie in (0, 1), got {self.level!r}"

        try:
            grid = tuple(parse_eps(e) for e in self.epsilon_grid)
            if not grid or any(e <= 0 for e in grid):
                raise ValueError("values must be > 0 or inf")
            if len(set(grid)) != len(grid):
                raise ValueError("duplicate values")
            object.__setattr__(self, "epsilon_grid", grid)
        except (TypeError, ValueError) as exc:
            problems["epsilon_grid"] = str(exc)

        methods = self.methods or _default_methods(sim)
        try:
            parsed = tuple(Method.parse(x).value for x in methods)
            object.__setattr__(self, "methods", parsed)
            if sim in SCHEMAS:
                schema = SCHEMAS[sim]
                all_cont = all(isinstance(c.kind, Continuous) for c in schema.columns)
                bad = [x for x in parsed if not Method(x).private and not all_cont]
                if bad:
                    problems["methods"] = f"{bad} need all-continuous data, {sim} is not"
        except ValueError as exc:
            problems["methods"] = str(exc)

        ests = self.estimands or tuple(DEFAULT_ESTIMANDS.get(sim, ()))
        try:
            parsed_e = tuple(parse_estimand(e).label for e in ests)
            if sim in SCHEMAS:
                for e in parsed_e:
                    check_estimand(SCHEMAS[sim], parse_estimand(e))
            object.__setattr__(self, "estimands", parsed_e)
        except (ValueError, KeyError) as exc:
            problems["estimands"] = str(exc)

        try:
            rules = tuple(VarianceRule.parse(r).value for r in self.rules)
            if not rules:
                raise ValueError("at least one rule is required")
            object.__setattr__(self, "rules", rules)
            if isinstance(self.m, int) and any(VarianceRule(r).min_m > self.m for r in rules):
                problems["rules"] = f"tp requires m >= 2, got m={self.m}"
        except ValueError as exc:
            problems["rules"] = str(exc)

        try:
            object.__setattr__(self, "neighbors", NeighborSemantics(str(self.neighbors).lower()).value)
        except ValueError:
            problems["neighbors"] = f"expected replacement or add_remove, got {self.neighbors!r}"
        if self.truth not in ("analytic", "monte_carlo"):
            problems["truth"] = f"expected analytic or monte_carlo, got {self.truth!r}"
        if sim in GENERATORS:
            params = inspect.signature(GENERATORS[sim]).parameters
            extra = [k for k in self.sim_options if k not in params or k in ("rng", "n")]
            if extra:
                problems["sim_options"] = f"unknown options {extra} for {sim}"
            elif "corr" in self.sim_options:
                self.sim_options["corr"] = tuple(float(c) for c in self.sim_options["corr"])
        if problems:
            raise ConfigError(problems)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(inspect.signature(cls).parameters)
        unknown = sorted(k for k in data if k not in known)
        if unknown:
            raise ConfigError({k: "unknown key" for k in unknown})
        kwargs = dict(data)
        for key in ("epsilon_grid", "methods", "estimands", "rules"):
            if key in kwargs:
                if isinstance(kwargs[key], (str, bytes)) or not hasattr(kwargs[key], "__iter__"):
                    raise ConfigError({key: "must be a list"})
                kwargs[key] = tuple(kwargs[key])
        if "sim_options" in kwargs:
            kwargs["sim_options"] = dict(kwargs["sim_options"])
        return cls(**kwargs)

    def to_json(self) -> dict:
        return {
            "simulation": self.simulation, "n": self.n, "B": self.B, "m": self.m,
            "epsilon_grid": [encode_eps(e) for e in self.epsilon_grid],
            "methods": list(self.methods), "estimands": list(self.estimands),
            "rules": list(self.rules), "level": self.level, "seed": self.seed,
            "bins": self.bins, "bn_degree": self.bn_degree, "neighbors": self.neighbors,
            "truth": self.truth, "archive": self.archive,
            "sim_options": {k: list(v) if isinstance(v, tuple) else v
                            for k, v in sorted(self.sim_options.items())},
        }


def _default_methods(sim: str) -> tuple:
    if sim == "sim3":
        return ("histogram", "bayesnet")
    return ("histogram", "bayesnet", "gaussian", "gaussian_ppd")


def read_config(path) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:  # python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError({"<file>": f"TOML parse error: {exc}"}) from None


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(read_config(path))


def cell_applicable(method: str, eps: float) -> bool:
    """Non-private methods only run in the eps = inf column."""
    return Method(method).private or math.isinf(eps)


def eps_key(eps: float) -> str:
    return "inf" if math.isinf(eps) else repr(float(eps))


# ---------------------------------------------------------------------------
# one replication


def run_replication(cfg: ExperimentConfig, b: int) -> dict:
    root = RngStream(cfg.seed).spawn("replication", b)
    ds, truths = GENERATORS[cfg.simulation](root.spawn("data"), cfg.n, **cfg.sim_options)
    estimands = [parse_estimand(e) for e in cfg.estimands]

    original = {}
    for est in estimands:
        try:
            r = estimate(ds, est)
            original[est.label] = {"q": r.q, "u": r.u}
        except EstimationError as exc:
            original[est.label] = {"failed": str(exc)}

    cells = {}
    ledgers = {}
    for method in cfg.methods:
        for eps in cfg.epsilon_grid:
            if not cell_applicable(method, eps):
                continue
            key = (method, eps_key(eps))
            ledger = BudgetLedger(PrivacyBudget(eps))
            req = SynthesisRequest(Method(method), PrivacyBudget(eps), cfg.m,
                                   bins_per_continuous=cfg.bins, bn_degree=cfg.bn_degree,
                                   neighbors=NeighborSemantics(cfg.neighbors))
            try:
                # epsilon arms share synthesis streams (common random numbers)
                copies = generate_m_datasets(ds, req, root.spawn("synth", method), ledger)
            except _CELL_ERRORS as exc:
                for est in estimands:
                    cells[key + (est.label,)] = {"failed": f"synthesis: {exc}"}
                ledgers[key] = {"spent": ledger.spent().epsilon, "failed": True}
                continue
            ledgers[key] = {"spent": ledger.spent().epsilon,
                            "ledger": ledger.to_json() if b == 0 else None}
            for est in estimands:
                cells[key + (est.label,)] = _combine_cell(copies, est, cfg)

    return {
        "b": b,
        "original": original,
        "cells": cells,
        "ledgers": ledgers,
        "truths": {e.label: truths.value(e) for e in estimands},
    }


def _combine_cell(copies, est, cfg: ExperimentConfig) -> dict:
    try:
        results: list[EstimateResult] = [estimate(c, est) for c in copies]
    except EstimationError as exc:
        return {"failed": f"estimation: {exc}"}
    cell = {"rules": {}}
    for rule in cfg.rules:
        try:
            ci = combine(results, rule, cfg.level)
        except CombineError as exc:
            cell["rules"][rule] = {"failed": str(exc)}
            continue
        cell["q_bar"], cell["u_bar"], cell["b_m"] = ci.q_bar, ci.u_bar, ci.b_m
        cell["rules"][rule] = {"variance": ci.variance, "df": encode_eps(ci.df),
                               "ci": [ci.ci[0], ci.ci[1]]}
    if "q_bar" not in cell:
        # every rule failed; the copy-level summaries are still well defined
        q = np.array([r.q for r in results])
        cell["q_bar"] = float(q.mean())
        cell["u_bar"] = float(np.mean([r.u for r in results]))
        cell["b_m"] = float(q.var(ddof=1)) if q.size > 1 else 0.0
    return cell


# ---------------------------------------------------------------------------
# aggregation


@dataclass
class MetricsTable:
    config: dict
    cells: list  # one dict per (estimand, method, epsilon)
    original: list  # one dict per estimand
    ledger_audit: list  # one dict per (method, epsilon)
    truths: dict  # estimand -> {"value", "source"}
    archive: Optional[list] = None

    def to_json(self) -> dict:
        return {
            "config": self.config,
            "truths": self.truths,
            "original": self.original,
            "cells": self.cells,
            "ledger_audit": self.ledger_audit,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MetricsTable":
        try:
            return cls(obj["config"], obj["cells"], obj["original"], obj["ledger_audit"], obj["truths"])
        except (KeyError, TypeError) as exc:
            raise ValueError(f"not a metrics table: missing {exc}") from None


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> MetricsTable:
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    if jobs == 1:
        reps = [run_replication(cfg, b) for b in range(cfg.B)]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reps = list(pool.map(run_replication, [cfg] * cfg.B, range(cfg.B),
                                 chunksize=max(1, cfg.B // (4 * jobs))))
    return aggregate(cfg, reps)


def _resolve_truths(cfg: ExperimentConfig, reps: list) -> dict:
    out = {}
    for label in cfg.estimands:
        analytic = reps[0]["truths"][label]
        is_slope = label.startswith("ols:")
        if analytic is not None and not (cfg.truth == "monte_carlo" and is_slope):
            out[label] = {"value": analytic, "source": "analytic"}
            continue
        qs = [r["original"][label]["q"] for r in reps if "q" in r["original"][label]]
        if not qs:
            raise ExperimentError(f"no truth available for {label}")
        out[label] = {"value": float(np.mean(qs)), "source": "monte_carlo"}
    return out


def _summaries(q, variances: dict, cis: dict, theta: float) -> dict:
    """Bias, V_MC and per-rule RaB/coverage for one cell."""
    q = np.asarray(q, dtype=float)
    out = {"bias": metric_bias(q, theta),
           "relative_bias_pct": metric_bias(q, theta, relative=True) if theta != 0 else None}
    v_mc = monte_carlo_variance(q) if q.size >= 2 else None
    out["V_MC"] = v_mc
    rab, cov = {}, {}
    for rule in variances:
        v = variances[rule]
        rab[rule] = (100.0 * float(np.mean(v)) / v_mc) if (v and v_mc) else None
        cov[rule] = metric_coverage(cis[rule], theta) if cis[rule] else None
    out["RaB_pct"] = rab
    out["coverage_pct"] = cov
    return out


def aggregate(cfg: ExperimentConfig, reps: list) -> MetricsTable:
    reps = sorted(reps, key=lambda r: r["b"])
    truths = _resolve_truths(cfg, reps)

    original = []
    for label in cfg.estimands:
        theta = truths[label]["value"]
        ok = [r["original"][label] for r in reps if "q" in r["original"][label]]
        if len(ok) < 2:
            raise ExperimentError(f"original-data estimates failed for {label}")
        q = [o["q"] for o in ok]
        u = [o["u"] for o in ok]
        cis = [confidence_interval(o["q"], o["u"], math.inf, cfg.level) for o in ok]
        s = _summaries(q, {"naive": u}, {"naive": cis}, theta)
        original.append({"estimand": label, "theta": theta, "n_used": len(ok),
                         "n_failed": len(reps) - len(ok), "bias": s["bias"],
                         "relative_bias_pct": s["relative_bias_pct"], "V_MC": s["V_MC"],
                         "RaB_pct": s["RaB_pct"]["naive"], "coverage_pct": s["coverage_pct"]["naive"],
                         "mean_u": float(np.mean(u))})

    cells, audit = [], []
    for method in cfg.methods:
        for eps in cfg.epsilon_grid:
            if not cell_applicable(method, eps):
                continue
            ek = eps_key(eps)
            failed_cells = 0
            for label in cfg.estimands:
                theta = truths[label]["value"]
                entries = [r["cells"][(method, ek, label)] for r in reps]
                ok = [c for c in entries if "q_bar" in c]
                failed_cells += len(entries) - len(ok)
                cell = {"estimand": label, "method": method, "epsilon": encode_eps(eps),
                        "theta": theta, "n_used": len(ok), "n_failed": len(entries) - len(ok)}
                if not ok:
                    cell.update({"bias": None, "relative_bias_pct": None, "V_MC": None,
                                 "RaB_pct": {r: None for r in cfg.rules},
                                 "coverage_pct": {r: None for r in cfg.rules},
                                 "rule_failures": {r: 0 for r in cfg.rules},
                                 "mean_u_bar": None, "mean_b_over_m": None, "T_p": None})
                    cells.append(cell)
                    continue
                variances, cis, rule_fail = {}, {}, {}
                for rule in cfg.rules:
                    good = [c["rules"][rule] for c in ok if "variance" in c["rules"][rule]]
                    variances[rule] = [g["variance"] for g in good]
                    cis[rule] = [tuple(g["ci"]) for g in good]
                    rule_fail[rule] = len(ok) - len(good)
                cell.update(_summaries([c["q_bar"] for c in ok], variances, cis, theta))
                u_bar = float(np.mean([c["u_bar"] for c in ok]))
                b_over_m = float(np.mean([c["b_m"] / cfg.m for c in ok]))
                cell["rule_failures"] = rule_fail
                cell["mean_u_bar"] = u_bar
                cell["mean_b_over_m"] = b_over_m
                cell["T_p"] = u_bar + b_over_m
                cells.append(cell)
            total_cells = len(reps) * len(cfg.estimands)
            if total_cells and failed_cells > MAX_FAIL_FRACTION * total_cells:
                raise ExperimentError(
                    f"{failed_cells} of {total_cells} cells failed for method={method}, "
                    f"epsilon={ek}; first error: {_first_error(reps, method, ek)}")
            spent = [r["ledgers"][(method, ek)]["spent"] for r in reps]
            audit.append({
                "method": method, "epsilon": encode_eps(eps),
                "spent_min": min(spent), "spent_max": max(spent),
                "within_budget": all(s <= eps * (1 + 1e-12) for s in spent),
                "synthesis_failures": sum(1 for r in reps if r["ledgers"][(method, ek)].get("failed")),
                "ledger_replication_0": reps[0]["ledgers"][(method, ek)].get("ledger"),
            })

    archive = [_archive_row(r) for r in reps] if cfg.archive else None
    return MetricsTable(cfg.to_json(), cells, original, audit, truths, archive)


def _first_error(reps, method, ek) -> str:
    for r in reps:
        for key, c in r["cells"].items():
            if key[:2] == (method, ek) and "failed" in c:
                return c["failed"]
    return "unknown"


def _archive_row(rep: dict) -> dict:
    return {
        "b": rep["b"],
        "original": rep["original"],
        "cells": [{"method": k[0], "epsilon": k[1], "estimand": k[2], **v}
                  for k, v in rep["cells"].items()],
        "spent": {f"{k[0]}@{k[1]}": v["spent"] for k, v in rep["ledgers"].items()},
    }
