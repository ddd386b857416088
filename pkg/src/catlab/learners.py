"""Learners that act on inputs and may ask the mentor for help.

Learners see inputs and mentor answers only. Every learner exposes
``step(t, x, mentor, rng) -> Outcome``. ``mentor`` is a :class:`MentorOracle`
that enforces at most one call per step and an optional query budget; when
the budget is spent ``mentor.available`` is False and learners fall back to
their own best guess.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from catlab.core import QUERY, Decision
from catlab.hedge import HedgeState, hedge_init, hedge_propose, hedge_update
from catlab.policies import Cover, PolicyClass, build_adversarial_cover, build_smooth_cover, one_vs_rest, ClassKind


class MentorFailure(RuntimeError):
    pass


class MentorOracle:
    """Answers ``pi_m(x)``; counts calls and enforces one call per step."""

    def __init__(self, policy: Callable[[np.ndarray], int], budget: Optional[int] = None):
        self._policy = policy
        self.budget = budget
        self.calls = 0
        self._step_calls = 0

    def begin_step(self) -> None:
        self._step_calls = 0

    @property
    def available(self) -> bool:
        return self.budget is None or self.calls < self.budget

    def __call__(self, x) -> int:
        if self._step_calls:
            raise MentorFailure("mentor queried twice in one step")
        if not self.available:
            raise MentorFailure("query budget exhausted")
        self._step_calls += 1
        self.calls += 1
        try:
            return int(self._policy(x))
        except Exception as exc:  # surfaced to the harness with context
            raise MentorFailure(f"mentor oracle failed on input {x!r}: {exc}") from exc


@dataclass
class Outcome:
    decision: Decision
    mentor_action: Optional[int] = None
    #: a distance r such that the action is backed by a mentor label at
    #: most r away (None when no such guarantee exists)
    support_radius: Optional[float] = None

    @property
    def queried(self) -> bool:
        return self.mentor_action is not None


class Learner:
    name = "learner"

    def step(self, t: int, x: np.ndarray, mentor: MentorOracle, rng: np.random.Generator) -> Outcome:
        raise NotImplementedError

    def boundaries(self) -> list[float]:
        """Decision boundaries of the current leading policy (1-D learners only)."""
        return []


# ---------------------------------------------------------------------------
# memory of queried inputs


class MemorySet:
    """Queried (input, mentor action) pairs with per-action nearest-neighbor distance."""

    def __init__(self, n: int):
        self.n = n
        self.entries: list[tuple[np.ndarray, int]] = []
        self._sorted: dict[int, list[float]] = {}
        self._points: dict[int, list[np.ndarray]] = {}
        self._arrays: dict[int, np.ndarray] = {}
        self._all_x: list[float] = []
        self._all_labels: list[int] = []

    def __len__(self) -> int:
        return len(self.entries)

    def add(self, x, action: int) -> None:
        xv = np.asarray(x, dtype=float).reshape(-1).copy()
        self.entries.append((xv, int(action)))
        if self.n == 1:
            bisect.insort(self._sorted.setdefault(int(action), []), float(xv[0]))
            i = bisect.bisect_right(self._all_x, float(xv[0]))
            self._all_x.insert(i, float(xv[0]))
            self._all_labels.insert(i, int(action))
        else:
            self._points.setdefault(int(action), []).append(xv)
            self._arrays.pop(int(action), None)

    def nearest_distance(self, x, action: int) -> float:
        """Distance to the closest stored input labeled ``action``; inf when there is none."""
        if self.n == 1:
            pts = self._sorted.get(int(action))
            if not pts:
                return math.inf
            xv = float(np.asarray(x).reshape(-1)[0])
            i = bisect.bisect_left(pts, xv)
            best = math.inf
            if i < len(pts):
                best = pts[i] - xv
            if i > 0:
                best = min(best, xv - pts[i - 1])
            return best
        pts = self._points.get(int(action))
        if not pts:
            return math.inf
        arr = self._arrays.get(int(action))
        if arr is None:
            arr = self._arrays[int(action)] = np.stack(pts)
        xv = np.asarray(x, dtype=float).reshape(1, -1)
        return float(np.sqrt(((arr - xv) ** 2).sum(axis=1).min()))

    def nearest_label(self, x) -> Optional[int]:
        """Label of the nearest stored input of any action."""
        if self.n == 1:
            if not self._all_x:
                return None
            xv = float(np.asarray(x).reshape(-1)[0])
            i = bisect.bisect_left(self._all_x, xv)
            if i == len(self._all_x) or (i > 0 and xv - self._all_x[i - 1] <= self._all_x[i] - xv):
                i -= 1
            return self._all_labels[i]
        best, label = math.inf, None
        for a in set(e[1] for e in self.entries):
            d = self.nearest_distance(x, a)
            if d < best:
                best, label = d, a
        return label


# ---------------------------------------------------------------------------
# Hedge with out-of-distribution queries


@dataclass
class _Pending:
    index: Optional[int]
    hedge_query: bool
    action: Optional[int]
    wants_query: bool


class OodHedge(Learner):
    """Hedge over a cover, plus a query whenever the proposed action is unfamiliar.

    An action is unfamiliar at ``x`` when no remembered input with that same
    mentor action lies within ``epsilon ** (1/n)``. Memory grows only on
    those out-of-distribution queries, not on Hedge's own random queries.
    """

    name = "ood-hedge"

    def __init__(self, cover: Cover, T: int, epsilon: float, n: int = 1):
        self.cover = cover
        self.hedge: HedgeState = hedge_init(cover, T, epsilon)
        self.memory = MemorySet(n)
        self.epsilon = epsilon
        self.n = n
        self.ood_radius = epsilon ** (1.0 / n)
        if not self.ood_radius > 0:
            raise ValueError("OOD radius must be positive")

    def propose(self, x, rng) -> _Pending:
        idx, hq = hedge_propose(self.hedge, rng)
        if hq:
            return _Pending(None, True, None, True)
        action = int(self.cover.members[idx](x)) if self.cover.dim == 1 and not self.cover.members[0].is_explicit \
            else int(self.cover.actions_at(x)[idx])
        ood = self.memory.nearest_distance(x, action) > self.ood_radius
        return _Pending(idx, False, action, ood)

    def finish(self, pending: _Pending, x, label: int) -> int:
        """Consume a mentor label for a pending step; returns the Hedge action."""
        if pending.hedge_query:
            acts = self.cover.actions_at(x)
            pending.index = hedge_update(self.hedge, (acts != label).astype(float))
            pending.action = int(acts[pending.index])
            if self.memory.nearest_distance(x, pending.action) > self.ood_radius:
                self.memory.add(x, label)
        else:
            self.memory.add(x, label)
        return pending.action

    def fallback(self, pending: _Pending, x, rng) -> int:
        """Action when a query is wanted but the mentor is unavailable."""
        if pending.action is None:
            pending.index = self.hedge.sample_policy(rng)
            pending.action = int(self.cover.actions_at(x)[pending.index])
        return pending.action

    def step(self, t, x, mentor, rng):
        pending = self.propose(x, rng)
        if not pending.wants_query:
            return Outcome(pending.action, None, self.ood_radius)
        if not mentor.available:
            return Outcome(self.fallback(pending, x, rng))
        label = mentor(x)
        self.finish(pending, x, label)
        return Outcome(QUERY, label, 0.0)

    def boundaries(self):
        leader = self.cover.members[self.hedge.leader()]
        if leader.is_explicit and leader.dim != 1:
            return []
        return list(leader.segments()[0])


def default_epsilon(T: int, n: int = 1) -> float:
    return T ** (-2.0 * n / (2 * n + 1))


def build_cover_for(cls: PolicyClass, epsilon: float, max_size: int = 250_000) -> Cover:
    if cls.kind is ClassKind.FINITE_EXPLICIT:
        return build_adversarial_cover(cls)
    if cls.kind is ClassKind.KSEGMENTS:
        grid = int(cls.max_segments / epsilon) + 2
        approx = math.comb(grid + cls.max_segments - 2, cls.max_segments - 1) * cls.n_actions ** cls.max_segments
        if approx > max_size:
            raise ValueError(f"K-segment cover would have ~{approx} members; raise epsilon or use dbwrq")
    cover = build_smooth_cover(cls, epsilon)
    if len(cover) > max_size:
        raise ValueError(f"cover has {len(cover)} members (limit {max_size})")
    return cover


# ---------------------------------------------------------------------------
# Dynamic bucketing with routine querying (1-D)


@dataclass
class Bucket:
    lo: float
    hi: float
    depth: int
    index: int
    visits: int = 0
    sample: Optional[tuple] = None  # (x, mentor action), first queried input inside

    @property
    def length(self) -> float:
        return self.hi - self.lo


class Dbwrq(Learner):
    """Query once per bucket; split a bucket in half after ``T/g`` visits.

    Buckets are half-open ``[lo, hi)`` cells of a dyadic refinement of the
    width-``1/g`` grid; a bucket at depth ``d`` has length ``1/(g 2^d)``.
    """

    name = "dbwrq"

    def __init__(self, T: int, g: int):
        if g < 1:
            raise ValueError("g must be >= 1")
        self.T = T
        self.g = int(g)
        self.split_threshold = T / self.g
        self.active: dict[tuple[int, int], Bucket] = {}
        self.split: set[tuple[int, int]] = set()
        self.buckets_created = 0
        self.queried: list[tuple[float, int]] = []
        self.last_bucket: Optional[Bucket] = None

    def _make(self, depth: int, index: int, sample) -> Bucket:
        width = 1.0 / (self.g * 2 ** depth)
        b = Bucket(index * width, (index + 1) * width, depth, index, 0, sample)
        self.active[(depth, index)] = b
        self.buckets_created += 1
        return b

    def _locate(self, scaled: float) -> Bucket:
        depth, index = 0, math.floor(scaled)
        while True:
            key = (depth, index)
            b = self.active.get(key)
            if b is not None:
                return b
            if key in self.split:
                depth += 1
                index = math.floor(scaled * 2 ** depth)
                continue
            return self._make(depth, index, None)

    def _split(self, b: Bucket) -> None:
        del self.active[(b.depth, b.index)]
        self.split.add((b.depth, b.index))
        d = b.depth + 1
        inherited = None
        if b.sample is not None:
            inherited = math.floor(b.sample[0] * self.g * 2 ** d)
        for idx in (2 * b.index, 2 * b.index + 1):
            self._make(d, idx, b.sample if idx == inherited else None)

    def step(self, t, x, mentor, rng):
        xv = float(np.asarray(x, dtype=float).reshape(-1)[0])
        if not math.isfinite(xv):
            raise ValueError(f"non-finite input {xv}")
        scaled = xv * self.g
        while True:
            b = self._locate(scaled)
            if b.sample is None:
                self.last_bucket = b
                if not mentor.available:
                    b.visits += 1
                    return Outcome(self.guess(xv))
                label = mentor(x)
                b.sample = (xv, label)
                self.queried.append((xv, label))
                b.visits += 1
                return Outcome(QUERY, label, 0.0)
            if b.visits < self.split_threshold:
                b.visits += 1
                self.last_bucket = b
                return Outcome(b.sample[1], None, b.length)
            self._split(b)

    def guess(self, xv: float) -> int:
        if not self.queried:
            return 0
        return min(self.queried, key=lambda e: abs(e[0] - xv))[1]


def dbwrq_query_ceiling(diam: float, g: int) -> int:
    if diam < 0:
        raise ValueError("diameter must be nonnegative")
    return math.ceil((diam + 4) * g)


def default_g(T: int, exponent: float = 0.75) -> int:
    return max(1, math.ceil(T ** exponent))


# ---------------------------------------------------------------------------
# many actions via one-vs-rest copies


class MultiAction(Learner):
    """One binary :class:`OodHedge` per action over the one-vs-rest classes.

    A single mentor query is issued if any copy asks; only the asking copies
    receive the binary label ``1(pi_m(x) == y)``.
    """

    name = "multi"

    def __init__(self, cls: PolicyClass, T: int, epsilon: float, n: int = 1):
        self.n_actions = cls.n_actions
        self.copies = [
            OodHedge(build_adversarial_cover(one_vs_rest(cls, y)), T, epsilon, n)
            for y in range(self.n_actions)
        ]
        self.last_votes: list[Optional[int]] = []

    def step(self, t, x, mentor, rng):
        pend = [c.propose(x, rng) for c in self.copies]
        asking = [i for i, p in enumerate(pend) if p.wants_query]
        if asking and mentor.available:
            label = mentor(x)
            for i in asking:
                self.copies[i].finish(pend[i], x, int(label == i))
            self.last_votes = [None if p.wants_query else p.action for p in pend]
            return Outcome(QUERY, label, 0.0)
        for i in asking:
            self.copies[i].fallback(pend[i], x, rng)
        votes = [p.action for p in pend]
        self.last_votes = votes
        # the 0 fallback has no remembered label behind it
        radius = self.copies[0].ood_radius if not asking and 1 in votes else None
        return Outcome(combine_votes(votes), None, radius)


def combine_votes(votes) -> int:
    """Lowest action whose copy says 1; action 0 when none does."""
    for y, b in enumerate(votes):
        if b == 1:
            return y
    return 0


# ---------------------------------------------------------------------------
# diagnostic baselines


class NeverQueryRandom(Learner):
    name = "never-random"

    def __init__(self, n_actions: int = 2):
        self.n_actions = n_actions

    def step(self, t, x, mentor, rng):
        return Outcome(int(rng.integers(self.n_actions)))


class NeverQueryMajority(Learner):
    """Replays the most frequent mentor action it has seen; never asks (action 0 before any label)."""

    name = "never-majority"

    def __init__(self, n_actions: int = 2):
        self.counts = np.zeros(n_actions, dtype=np.int64)

    def observe(self, label: int) -> None:
        self.counts[label] += 1

    def step(self, t, x, mentor, rng):
        return Outcome(int(np.argmax(self.counts)))


class AlwaysQuery(Learner):
    """Queries every step; once the budget is gone, copies the nearest queried input's label."""

    name = "always"

    def __init__(self, n: int = 1):
        self.memory = MemorySet(n)

    def step(self, t, x, mentor, rng):
        if mentor.available:
            label = mentor(x)
            self.memory.add(x, label)
            return Outcome(QUERY, label, 0.0)
        guess = self.memory.nearest_label(x)
        return Outcome(0 if guess is None else guess)


class BudgetCapped(Learner):
    """Wraps a learner and stops its queries after ``budget`` mentor calls."""

    def __init__(self, inner: Learner, budget: int):
        if budget < 0:
            raise ValueError("budget must be >= 0")
        self.inner = inner
        self.budget = budget
        self.name = f"budget:{budget}"

    def step(self, t, x, mentor, rng):
        if mentor.budget is None or mentor.budget > self.budget:
            mentor.budget = self.budget
        return self.inner.step(t, x, mentor, rng)

    def boundaries(self):
        return self.inner.boundaries()
