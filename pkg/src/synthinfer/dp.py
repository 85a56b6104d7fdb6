"""Privacy budgets, pure-DP mechanisms and a composition ledger.

``epsilon = inf`` is the non-private sentinel: mechanisms return their input
untouched and the ledger books zero spend for it, which is only allowed on
a ledger whose own total is infinite.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .randkit import RngStream

# relative slack for float round-off when comparing spend to the total
_BUDGET_RTOL = 1e-12


class BudgetError(ValueError):
    """Raised when a charge would exceed the ledger total."""


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        eps, delta = float(self.epsilon), float(self.delta)
        if math.isnan(eps) or eps < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if not 0.0 <= delta < 1.0:
            raise ValueError(f"delta must lie in [0, 1), got {self.delta}")
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "delta", delta)

    @property
    def is_private(self) -> bool:
        return math.isfinite(self.epsilon)

    def to_json(self) -> dict:
        return {"epsilon": encode_eps(self.epsilon), "delta": self.delta}


NON_PRIVATE = PrivacyBudget(math.inf)
DEFAULT_DELTA = 1e-6  # used only when modelling approximate-DP budgets

BudgetLike = Union[PrivacyBudget, float, int, str]


def as_budget(b: BudgetLike) -> PrivacyBudget:
    if isinstance(b, PrivacyBudget):
        return b
    return PrivacyBudget(parse_eps(b))


def parse_eps(value) -> float:
    """Accept a number or ``"inf"`` (any case)."""
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "infinity", "+inf"):
            return math.inf
        value = float(value)
    eps = float(value)
    if math.isnan(eps):
        raise ValueError("epsilon is NaN")
    return eps


def encode_eps(eps: float):
    return "inf" if math.isinf(eps) else eps


class NeighborSemantics(enum.Enum):
    REPLACEMENT = "replacement"
    ADD_REMOVE = "add_remove"

    @property
    def histogram_sensitivity(self) -> float:
        # one record moves between two cells, or appears in/leaves one cell
        return 2.0 if self is NeighborSemantics.REPLACEMENT else 1.0


def _eps_value(eps) -> float:
    return eps.epsilon if isinstance(eps, PrivacyBudget) else parse_eps(eps)


def laplace_mechanism(rng: RngStream, true_values, l1_sensitivity: float, eps) -> np.ndarray:
    """Add i.i.d. Laplace(``l1_sensitivity / eps``) noise to each coordinate."""
    eps = _eps_value(eps)
    values = np.array(true_values, dtype=float, copy=True)
    if not l1_sensitivity > 0:
        raise ValueError(f"sensitivity must be positive, got {l1_sensitivity}")
    if not eps > 0:
        raise ValueError(f"epsilon must be positive, got {eps}")
    if math.isinf(eps):
        return values
    return values + rng.laplace(size=values.shape, scale=l1_sensitivity / eps)


def exponential_mechanism(rng: RngStream, candidates: Sequence, scores, score_sensitivity: float, eps):
    """Pick a candidate with probability proportional to
    ``exp(eps * score / (2 * score_sensitivity))``.

    With ``eps = inf`` the highest score wins, ties going to the lowest index.
    """
    eps = _eps_value(eps)
    if len(candidates) == 0:
        raise ValueError("no candidates")
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (len(candidates),):
        raise ValueError("one score per candidate required")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if not score_sensitivity > 0:
        raise ValueError(f"score sensitivity must be positive, got {score_sensitivity}")
    if not eps > 0:
        raise ValueError(f"epsilon must be positive, got {eps}")
    if math.isinf(eps):
        return candidates[int(np.argmax(scores))]
    logits = eps * scores / (2.0 * score_sensitivity)
    weights = np.exp(logits - logits.max())
    idx = rng.gen.choice(len(candidates), p=weights / weights.sum())
    return candidates[int(idx)]


def selection_probabilities(scores, score_sensitivity: float, eps: float) -> np.ndarray:
    """Closed-form selection probabilities of :func:`exponential_mechanism`."""
    logits = eps * np.asarray(scores, dtype=float) / (2.0 * score_sensitivity)
    w = np.exp(logits - logits.max())
    return w / w.sum()


SEQUENTIAL = "sequential"


def parallel(group: str) -> str:
    """Composition tag for charges on disjoint parts of the data."""
    return f"parallel:{group}"


@dataclass
class LedgerEntry:
    label: str
    epsilon: float
    delta: float
    composition: str
    running_epsilon: float
    running_delta: float
    non_private: bool = False

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "epsilon": encode_eps(self.epsilon),
            "delta": self.delta,
            "composition": self.composition,
            "non_private": self.non_private,
            "running_total": {"epsilon": self.running_epsilon, "delta": self.running_delta},
        }


@dataclass
class BudgetLedger:
    """Composition accountant.

    Sequential entries add up; entries sharing a parallel group contribute
    their maximum.  Single writer: each experiment owns its ledger.
    """

    total: PrivacyBudget
    entries: list = field(default_factory=list)

    def __post_init__(self):
        self.total = as_budget(self.total)

    def _spent_with(self, extra=()) -> tuple[float, float]:
        seq_e, seq_d = [], []
        groups: dict[str, list[tuple[float, float]]] = {}
        for comp, e, d in [(x.composition, x.epsilon, x.delta) for x in self.entries] + list(extra):
            if comp == SEQUENTIAL:
                seq_e.append(e)
                seq_d.append(d)
            else:
                groups.setdefault(comp, []).append((e, d))
        for members in groups.values():
            seq_e.append(max(e for e, _ in members))
            seq_d.append(max(d for _, d in members))
        return math.fsum(seq_e), math.fsum(seq_d)

    def spent(self) -> PrivacyBudget:
        e, d = self._spent_with()
        return PrivacyBudget(e, d)

    def remaining(self) -> PrivacyBudget:
        e, d = self._spent_with()
        return PrivacyBudget(max(self.total.epsilon - e, 0.0), max(self.total.delta - d, 0.0))

    @property
    def non_private(self) -> bool:
        return math.isinf(self.total.epsilon)

    def charge(self, label: str, spend: BudgetLike, composition: str = SEQUENTIAL) -> "BudgetLedger":
        spend = as_budget(spend)
        if composition != SEQUENTIAL and not composition.startswith("parallel:"):
            raise ValueError(f"unknown composition mode {composition!r}")
        non_private = not spend.is_private
        if non_private:
            if self.total.is_private:
                raise BudgetError(f"over budget: {label!r} is non-private but the ledger total is "
                                  f"epsilon={self.total.epsilon}")
            eps, delta = 0.0, 0.0
        else:
            eps, delta = spend.epsilon, spend.delta
        if eps == 0.0 and delta == 0.0 and not non_private:
            return self
        new_e, new_d = self._spent_with([(composition, eps, delta)])
        if _exceeds(new_e, self.total.epsilon) or _exceeds(new_d, self.total.delta):
            raise BudgetError(
                f"over budget: charging {label!r} (epsilon={spend.epsilon}, delta={spend.delta}) "
                f"would bring spend to epsilon={new_e}, delta={new_d} "
                f"against a total of epsilon={self.total.epsilon}, delta={self.total.delta}"
            )
        self.entries.append(LedgerEntry(label, eps, delta, composition, new_e, new_d, non_private))
        return self

    def to_json(self) -> dict:
        spent = self.spent()
        return {
            "total": self.total.to_json(),
            "spent": {"epsilon": spent.epsilon, "delta": spent.delta},
            "entries": [e.to_json() for e in self.entries],
        }


def _exceeds(value: float, limit: float) -> bool:
    return value > limit + _BUDGET_RTOL * max(limit, 0.0)


def ledger_charge(ledger: BudgetLedger, label: str, spend: BudgetLike,
                  composition: str = SEQUENTIAL) -> BudgetLedger:
    return ledger.charge(label, spend, composition)


def split_budget(total: BudgetLike, m: int) -> PrivacyBudget:
    """Per-copy budget so that ``m`` sequential copies use exactly ``total``."""
    total = as_budget(total)
    if m < 1:
        raise ValueError(f"copy count must be >= 1, got {m}")
    return PrivacyBudget(total.epsilon / m, total.delta / m)
