"""Shared value types and regret/query accounting.

Payoffs live in [0, 1] and are read as per-step probabilities of avoiding
catastrophe, so the product of payoffs over a run is the overall survival
probability. Multiplicative regret is accumulated in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

PAYOFF_SLACK = 1e-12


class InvariantViolation(ValueError):
    """A value broke a model invariant (e.g. a non-positive mentor payoff)."""


class _QueryAction:
    """Singleton marker for the 'ask the mentor' pseudo-action."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "QUERY"

    def __reduce__(self):
        return (_QueryAction, ())


QUERY = _QueryAction()

Decision = Union[int, _QueryAction]


@dataclass(frozen=True, order=False)
class ExtendedReal:
    """A finite real or +inf.

    ``value`` is ``None`` for +inf. Arithmetic with +inf absorbs.
    """

    value: Optional[float]

    @classmethod
    def inf(cls) -> "ExtendedReal":
        return cls(None)

    @classmethod
    def of(cls, x: float) -> "ExtendedReal":
        if math.isinf(x) and x > 0:
            return cls(None)
        if not math.isfinite(x):
            raise ValueError(f"cannot represent {x!r} as an extended real")
        return cls(float(x))

    @property
    def is_inf(self) -> bool:
        return self.value is None

    def __float__(self) -> float:
        return math.inf if self.value is None else self.value

    def __add__(self, other):
        if isinstance(other, ExtendedReal):
            if self.is_inf or other.is_inf:
                return ExtendedReal.inf()
            return ExtendedReal(self.value + other.value)
        if self.is_inf:
            return self
        return ExtendedReal.of(self.value + float(other))

    __radd__ = __add__

    def _cmp_key(self, other):
        return float(self), float(other)

    def __lt__(self, other):
        a, b = self._cmp_key(other)
        return a < b

    def __le__(self, other):
        a, b = self._cmp_key(other)
        return a <= b

    def __gt__(self, other):
        a, b = self._cmp_key(other)
        return a > b

    def __ge__(self, other):
        a, b = self._cmp_key(other)
        return a >= b

    def __str__(self) -> str:
        return "inf" if self.value is None else repr(self.value)

    @classmethod
    def parse(cls, text: str) -> "ExtendedReal":
        text = text.strip()
        if text == "inf":
            return cls.inf()
        return cls.of(float(text))


@dataclass(frozen=True)
class StepRecord:
    t: int
    x: np.ndarray
    decision: Decision
    queried: bool
    mentor_action: Optional[int]
    payoff: float
    mentor_payoff: float

    def __post_init__(self):
        if self.queried != (self.mentor_action is not None):
            raise InvariantViolation("mentor_action must be present iff the step queried")
        if self.decision is QUERY and self.payoff != self.mentor_payoff:
            raise InvariantViolation("a query step must be scored with the mentor payoff")


def clean_payoffs(values: Sequence[float], name: str = "payoffs") -> np.ndarray:
    """Validate a payoff series, clamping values within ``PAYOFF_SLACK`` of [0, 1]."""
    arr = np.asarray(values, dtype=float).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contain non-finite values")
    if arr.size and (arr.min() < -PAYOFF_SLACK or arr.max() > 1.0 + PAYOFF_SLACK):
        raise ValueError(f"{name} must lie in [0, 1]; got range [{arr.min()}, {arr.max()}]")
    return np.clip(arr, 0.0, 1.0)


def _pair(mentor_payoffs, agent_payoffs):
    m = clean_payoffs(mentor_payoffs, "mentor payoffs")
    a = clean_payoffs(agent_payoffs, "agent payoffs")
    if m.shape != a.shape:
        raise ValueError(f"length mismatch: {m.size} mentor vs {a.size} agent payoffs")
    if m.size == 0:
        raise ValueError("payoff series must be nonempty")
    return m, a


def regret_additive(mentor_payoffs, agent_payoffs) -> float:
    m, a = _pair(mentor_payoffs, agent_payoffs)
    return math.fsum(m) - math.fsum(a)


def regret_multiplicative(mentor_payoffs, agent_payoffs) -> ExtendedReal:
    """Log of the mentor's payoff product minus log of the agent's; +inf on any zero agent payoff."""
    m, a = _pair(mentor_payoffs, agent_payoffs)
    if np.any(m <= 0.0):
        raise InvariantViolation("mentor payoffs must be strictly positive")
    if np.any(a == 0.0):
        return ExtendedReal.inf()
    return ExtendedReal.of(math.fsum(np.log(m) - np.log(a)))


@dataclass(frozen=True)
class ProdVsAdd:
    """Outcome of the two sandwich inequalities; ``None`` means the hypothesis failed."""

    additive_le_mul: Optional[bool]
    mul_le_scaled_additive: Optional[bool]


def check_prod_vs_add(mentor_payoffs, agent_payoffs, tol: float = 1e-9) -> ProdVsAdd:
    """Check R+ <= Rmul (mentor dominates) and Rmul <= R+ / min agent payoff.

    The upper inequality is only claimed when the mentor dominates pointwise
    and every agent payoff is positive: the scaling step multiplies each
    per-step term by a factor >= 1, which needs those terms to be nonnegative.
    """
    m, a = _pair(mentor_payoffs, agent_payoffs)
    add = regret_additive(m, a)
    mul = regret_multiplicative(m, a)
    dominated = bool(np.all(m >= a))
    first = (add <= float(mul) + tol) if dominated else None
    if dominated and np.all(a > 0):
        second = float(mul) <= add / float(a.min()) + tol
    else:
        second = None
    return ProdVsAdd(first, second)


@dataclass(frozen=True)
class RegretReport:
    additive: float
    multiplicative: ExtendedReal
    query_count: int
    T: int
    cumulative_additive: np.ndarray = field(repr=False)
    cumulative_queries: np.ndarray = field(repr=False)

    @classmethod
    def from_series(cls, mentor_payoffs, agent_payoffs, queried) -> "RegretReport":
        m, a = _pair(mentor_payoffs, agent_payoffs)
        q = np.asarray(queried, dtype=bool).reshape(-1)
        if q.shape != m.shape:
            raise ValueError("query flags must match the payoff series length")
        cum_q = np.cumsum(q, dtype=np.int64)
        cum_add = np.cumsum(m - a)
        additive = regret_additive(m, a)
        # the last prefix must agree exactly with the headline number
        cum_add[-1] = additive
        return cls(
            additive=additive,
            multiplicative=regret_multiplicative(m, a),
            query_count=int(cum_q[-1]),
            T=int(m.size),
            cumulative_additive=cum_add,
            cumulative_queries=cum_q,
        )


def diameter(points) -> float:
    """Largest pairwise Euclidean distance among ``points`` (rows)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if len(pts) < 2:
        return 0.0
    if pts.shape[1] == 1:
        return float(pts.max() - pts.min())
    # exact for small sets; the harness only calls this on realized sequences
    best = 0.0
    for i in range(len(pts) - 1):
        d = np.sqrt(((pts[i + 1 :] - pts[i]) ** 2).sum(axis=1)).max()
        best = max(best, float(d))
    return best
