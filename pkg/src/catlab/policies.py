"""Policy descriptors, policy classes, and finite approximating covers.

One-dimensional analytic policies (thresholds, intervals, K-segment maps)
are all reduced to a common piecewise-constant form on the real line:
sorted boundaries plus one label per piece, with the left-closed convention
``label = labels[#boundaries <= x]``. Exact disagreement measures on [0, 1]
are computed from that form.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np


class UnsupportedClass(ValueError):
    pass


class PolicyKind(str, Enum):
    THRESHOLD = "threshold"
    INTERVAL = "interval"
    KSEGMENT = "ksegment"
    EXPLICIT = "explicit"


@dataclass(frozen=True, eq=False)
class Policy:
    """A total map from inputs to action ids.

    Build instances with :func:`threshold`, :func:`interval`, :func:`ksegment`
    or :func:`explicit` rather than calling the constructor directly.
    """

    kind: PolicyKind
    boundaries: tuple = ()
    labels: tuple = ()
    # explicit policies only
    grid: Optional[np.ndarray] = field(default=None, repr=False)
    table: Optional[np.ndarray] = field(default=None, repr=False)
    params: tuple = ()

    def __post_init__(self):
        if self.kind is PolicyKind.EXPLICIT:
            return
        b = self.boundaries
        if len(self.labels) != len(b) + 1:
            raise ValueError("labels must have exactly one more entry than boundaries")
        if any(b[i] > b[i + 1] for i in range(len(b) - 1)):
            raise ValueError("boundaries must be sorted")
        if self.kind is PolicyKind.KSEGMENT and any(
            b[i] >= b[i + 1] for i in range(len(b) - 1)
        ):
            raise ValueError("K-segment boundaries must be strictly increasing")

    @property
    def is_explicit(self) -> bool:
        return self.kind is PolicyKind.EXPLICIT

    @property
    def dim(self) -> int:
        return self.grid.shape[1] if self.is_explicit else 1

    def __call__(self, x) -> int:
        if self.is_explicit:
            return int(self.table[self.nearest_grid_index(x)])
        xv = float(np.asarray(x, dtype=float).reshape(-1)[0])
        # bisect_right without importing bisect on tuples of floats
        idx = 0
        for b in self.boundaries:
            if xv >= b:
                idx += 1
            else:
                break
        return int(self.labels[idx])

    def nearest_grid_index(self, x) -> int:
        xv = np.asarray(x, dtype=float).reshape(1, -1)
        d = ((self.grid - xv) ** 2).sum(axis=1)
        return int(np.argmin(d))

    def segments(self) -> tuple[tuple, tuple]:
        """Canonical (boundaries, labels) with adjacent equal labels merged."""
        if self.is_explicit:
            if self.dim != 1:
                raise UnsupportedClass("segment form only exists for 1-D policies")
            order = np.argsort(self.grid[:, 0], kind="stable")
            pts = self.grid[order, 0]
            labs = self.table[order]
            bounds = tuple(float(v) for v in (pts[1:] + pts[:-1]) / 2.0)
            return _canonical(bounds, tuple(int(v) for v in labs))
        return _canonical(self.boundaries, self.labels)

    def segment_count(self) -> int:
        """Number of maximal constant pieces on [0, 1]."""
        b, lab = self.segments()
        inner_b = []
        inner_l = [lab[0]]
        for bound, nxt in zip(b, lab[1:]):
            if bound <= 0.0:
                inner_l[-1] = nxt
            elif bound >= 1.0:
                break
            else:
                inner_b.append(bound)
                inner_l.append(nxt)
        _, merged = _canonical(tuple(inner_b), tuple(inner_l))
        return len(merged)

    def describe(self) -> str:
        if self.kind is PolicyKind.THRESHOLD:
            theta, orient = self.params
            return f"Threshold({theta:g},{'+' if orient > 0 else '-'})"
        if self.kind is PolicyKind.INTERVAL:
            return "Interval({:g},{:g})".format(*self.params)
        if self.kind is PolicyKind.KSEGMENT:
            return f"KSegment({list(self.boundaries)},{list(self.labels)})"
        return f"Explicit({len(self.table)} points)"


def _canonical(bounds: tuple, labels: tuple) -> tuple[tuple, tuple]:
    out_b: list[float] = []
    out_l: list[int] = [int(labels[0])]
    for bnd, lab in zip(bounds, labels[1:]):
        if out_b and bnd == out_b[-1]:
            # zero-length piece: the later label wins from this point on
            out_l[-1] = int(lab)
            if len(out_l) >= 2 and out_l[-1] == out_l[-2]:
                out_l.pop()
                out_b.pop()
            continue
        if lab == out_l[-1]:
            continue
        out_b.append(float(bnd))
        out_l.append(int(lab))
    return tuple(out_b), tuple(out_l)


def threshold(theta: float, orientation: int = 1) -> Policy:
    """``1(x >= theta)`` (orientation +1) or its complement (orientation -1)."""
    labels = (0, 1) if orientation > 0 else (1, 0)
    return Policy(PolicyKind.THRESHOLD, (float(theta),), labels, params=(float(theta), orientation))


def interval(a: float, b: float) -> Policy:
    if a > b:
        raise ValueError(f"interval endpoints out of order: {a} > {b}")
    return Policy(PolicyKind.INTERVAL, (float(a), float(b)), (0, 1, 0), params=(float(a), float(b)))


def ksegment(boundaries: Sequence[float], labels: Sequence[int]) -> Policy:
    return Policy(
        PolicyKind.KSEGMENT,
        tuple(float(b) for b in boundaries),
        tuple(int(v) for v in labels),
    )


def explicit(grid, table) -> Policy:
    g = np.asarray(grid, dtype=float)
    if g.ndim == 1:
        g = g[:, None]
    t = np.asarray(table, dtype=np.int64).reshape(-1)
    if len(g) != len(t) or len(t) == 0:
        raise ValueError("explicit policy needs one label per grid point")
    g.setflags(write=False)
    t.setflags(write=False)
    return Policy(PolicyKind.EXPLICIT, grid=g, table=t)


class ClassKind(str, Enum):
    THRESHOLDS = "thresholds"
    INTERVALS = "intervals"
    KSEGMENTS = "ksegments"
    FINITE_EXPLICIT = "finite-explicit"


@dataclass(frozen=True, eq=False)
class PolicyClass:
    kind: ClassKind
    vc_dim: Optional[int] = None
    littlestone_dim: Optional[int] = None
    max_segments: Optional[int] = None
    members: tuple = ()
    n_actions: int = 2

    def __post_init__(self):
        if self.kind is ClassKind.FINITE_EXPLICIT:
            if not self.members:
                raise ValueError("a finite explicit class needs at least one policy")
            ceiling = math.ceil(math.log2(len(self.members))) if len(self.members) > 1 else 0
            if self.littlestone_dim is not None and self.littlestone_dim > ceiling:
                raise ValueError("Littlestone dimension cannot exceed ceil(log2 |class|)")

    @property
    def dim(self) -> int:
        """The complexity parameter used in cover-size ceilings."""
        if self.vc_dim is not None:
            return self.vc_dim
        if self.littlestone_dim is not None:
            return self.littlestone_dim
        raise ValueError(f"{self.kind.value} class declares no dimension")

    @classmethod
    def thresholds(cls) -> "PolicyClass":
        return cls(ClassKind.THRESHOLDS, vc_dim=1, max_segments=2)

    @classmethod
    def intervals(cls) -> "PolicyClass":
        return cls(ClassKind.INTERVALS, vc_dim=2, max_segments=3)

    @classmethod
    def ksegments(cls, K: int) -> "PolicyClass":
        if K < 1:
            raise ValueError("K must be >= 1")
        # any labeling of K ordered points needs at most K pieces, and K+1 alternating points need K+1
        return cls(ClassKind.KSEGMENTS, vc_dim=K, max_segments=K)

    @classmethod
    def finite(cls, policies: Sequence[Policy], n_actions: Optional[int] = None) -> "PolicyClass":
        policies = tuple(policies)
        if not policies:
            raise ValueError("a finite explicit class needs at least one policy")
        if n_actions is None:
            n_actions = 1 + max(int(np.max(p.table)) if p.is_explicit else max(p.labels) for p in policies)
        ls = math.ceil(math.log2(len(policies))) if len(policies) > 1 else 0
        return cls(ClassKind.FINITE_EXPLICIT, littlestone_dim=ls, members=policies, n_actions=max(n_actions, 2))


class CoverKind(str, Enum):
    SMOOTH = "smooth"
    ADVERSARIAL = "adversarial"


class Cover:
    """A finite list of policies with a vectorized evaluator.

    ``actions_at(x)`` returns every member's action at ``x`` as one array.
    """

    def __init__(self, members: Sequence[Policy], kind: CoverKind, source: PolicyClass,
                 epsilon: Optional[float] = None):
        members = tuple(members)
        if not members:
            raise ValueError("cover must be nonempty")
        if kind is CoverKind.SMOOTH and not (epsilon and epsilon > 0):
            raise ValueError("a smooth cover needs epsilon > 0")
        self.members = members
        self.kind = kind
        self.source = source
        self.epsilon = epsilon
        self._build_evaluator()

    def __len__(self) -> int:
        return len(self.members)

    def _build_evaluator(self) -> None:
        if all(p.is_explicit for p in self.members):
            grid = self.members[0].grid
            if any(p.grid.shape != grid.shape or not np.array_equal(p.grid, grid) for p in self.members):
                raise ValueError("explicit cover members must share one grid")
            self._grid = grid
            self._table = np.stack([p.table for p in self.members])
            self._bounds = None
            self.dim = grid.shape[1]
            return
        if any(p.is_explicit for p in self.members):
            raise ValueError("cannot mix explicit and analytic policies in one cover")
        width = max(len(p.boundaries) for p in self.members)
        bounds = np.full((len(self.members), width), np.inf)
        labels = np.zeros((len(self.members), width + 1), dtype=np.int64)
        for i, p in enumerate(self.members):
            k = len(p.boundaries)
            bounds[i, :k] = p.boundaries
            labels[i, : k + 1] = p.labels
            labels[i, k + 1 :] = p.labels[-1]
        self._bounds = bounds
        self._labels = labels
        self._rows = np.arange(len(self.members))
        self.dim = 1
        self._single_threshold = width == 1

    def actions_at(self, x) -> np.ndarray:
        if self._bounds is None:
            xv = np.asarray(x, dtype=float).reshape(1, -1)
            idx = int(np.argmin(((self._grid - xv) ** 2).sum(axis=1)))
            return self._table[:, idx]
        xv = float(np.asarray(x, dtype=float).reshape(-1)[0])
        if self._single_threshold:
            return self._labels[self._rows, (xv >= self._bounds[:, 0]).astype(np.int64)]
        idx = (xv >= self._bounds).sum(axis=1)
        return self._labels[self._rows, idx]

    def action_of(self, index: int, x) -> int:
        return self.members[index](x)


def _unit_grid(step: float) -> np.ndarray:
    n = int(math.floor(1.0 / step + 1e-9))
    pts = np.round(np.arange(n + 1) * step, 12)
    if pts[-1] < 1.0:
        pts = np.append(pts, 1.0)
    return pts


def _check_eps(epsilon: float) -> None:
    if not (epsilon > 0 and epsilon <= 1):
        raise ValueError(f"epsilon must lie in (0, 1]; got {epsilon}")


def cover_size_ceiling(epsilon: float, d: int) -> float:
    return (41.0 / epsilon) ** d


def build_smooth_cover(cls: PolicyClass, epsilon: float) -> Cover:
    _check_eps(epsilon)
    if cls.kind is ClassKind.THRESHOLDS:
        members = [threshold(t) for t in _unit_grid(epsilon)]
    elif cls.kind is ClassKind.INTERVALS:
        pts = _unit_grid(epsilon / 2.0)
        members = [interval(a, b) for i, a in enumerate(pts) for b in pts[i:]]
    elif cls.kind is ClassKind.KSEGMENTS:
        members = _ksegment_cover(cls.max_segments, epsilon, cls.n_actions)
    elif cls.kind is ClassKind.FINITE_EXPLICIT:
        members = list(cls.members)
    else:
        raise UnsupportedClass(f"no smooth cover construction for {cls.kind}")
    return Cover(members, CoverKind.SMOOTH, cls, epsilon)


def _ksegment_cover(K: int, epsilon: float, n_actions: int) -> list[Policy]:
    pts = _unit_grid(epsilon / K)
    seen = set()
    members = []
    for bounds in itertools.combinations_with_replacement(pts, K - 1):
        for labels in itertools.product(range(n_actions), repeat=K):
            b, lab = _canonical(tuple(bounds), labels)
            # pieces wholly outside (0, 1) do not matter on the unit interval
            while b and b[0] <= 0.0:
                b, lab = b[1:], lab[1:]
            while b and b[-1] >= 1.0:
                b, lab = b[:-1], lab[:-1]
            key = (b, lab)
            if key in seen:
                continue
            seen.add(key)
            members.append(ksegment(b, lab))
    return members


def build_adversarial_cover(cls: PolicyClass) -> Cover:
    if cls.kind is not ClassKind.FINITE_EXPLICIT:
        raise UnsupportedClass(
            f"adversarial covers are built only for finite explicit classes; "
            f"use build_smooth_cover for {cls.kind.value}"
        )
    return Cover(cls.members, CoverKind.ADVERSARIAL, cls)


def _eval_segments(bounds: np.ndarray, labels: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Row-wise evaluation: bounds (M, B), labels (M, B+1), xs (M, P) -> (M, P)."""
    idx = (xs[:, :, None] >= bounds[:, None, :]).sum(axis=2)
    return np.take_along_axis(labels, idx, axis=1)


def _padded(policies: Sequence[Policy]) -> tuple[np.ndarray, np.ndarray]:
    segs = [p.segments() for p in policies]
    width = max(1, max(len(b) for b, _ in segs))
    bounds = np.full((len(segs), width), np.inf)
    labels = np.zeros((len(segs), width + 1), dtype=np.int64)
    for i, (b, lab) in enumerate(segs):
        bounds[i, : len(b)] = b
        labels[i, : len(lab)] = lab
        labels[i, len(lab) :] = lab[-1]
    return bounds, labels


def disagreement_many(probe: Policy, members: Sequence[Policy], _cache=None) -> np.ndarray:
    """Uniform-measure disagreement on [0, 1] between ``probe`` and each member."""
    # a cache means the caller already built analytic segment tables
    if probe.is_explicit or (_cache is None and any(m.is_explicit for m in members)):
        if not (probe.is_explicit and all(m.is_explicit for m in members)):
            raise ValueError("cannot compare explicit and analytic policies")
        for m in members:
            if m.grid.shape != probe.grid.shape or not np.array_equal(m.grid, probe.grid):
                raise ValueError("explicit policies must share a grid to be compared")
        table = np.stack([m.table for m in members])
        return (table != probe.table[None, :]).mean(axis=1)
    mb, ml = _cache if _cache is not None else _padded(members)
    pb, pl = _padded([probe])
    # total overlap of segment pairs with different labels; no sorting needed
    M = len(mb)
    ones, zeros = np.ones((M, 1)), np.zeros((M, 1))
    m_edges = np.clip(np.concatenate([zeros, mb, ones], axis=1), 0.0, 1.0)
    p_edges = np.clip(np.concatenate([[0.0], pb[0], [1.0]]), 0.0, 1.0)
    lo = np.maximum(m_edges[:, :-1, None], p_edges[None, None, :-1])
    hi = np.minimum(m_edges[:, 1:, None], p_edges[None, None, 1:])
    differ = ml[:, :, None] != pl[0][None, None, :]
    return (np.clip(hi - lo, 0.0, None) * differ).sum(axis=(1, 2))


def disagreement_uniform(p1: Policy, p2: Policy) -> float:
    return float(disagreement_many(p1, [p2])[0])


def disagreement_mc(p1: Policy, p2: Policy, xs: np.ndarray) -> tuple[float, float]:
    """Empirical disagreement over sample ``xs`` and its standard error."""
    hits = np.array([p1(x) != p2(x) for x in xs], dtype=float)
    mean = float(hits.mean())
    return mean, float(hits.std(ddof=1) / math.sqrt(len(hits))) if len(hits) > 1 else 0.0


def smooth_concentrate_bound(epsilon: float, sigma: float) -> float:
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if not (0 < sigma <= 1):
        raise ValueError(f"sigma must lie in (0, 1]; got {sigma}")
    return epsilon / sigma


@dataclass
class CoverReport:
    size: int
    ceiling: float
    epsilon: float
    max_min_disagreement: float
    worst_probe: Optional[Policy]
    n_probes: int
    exact: bool
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.max_min_disagreement <= self.epsilon + 1e-12

    @property
    def within_ceiling(self) -> bool:
        return self.size <= self.ceiling

    def summary(self) -> str:
        verdict = "PASS" if self.passed and self.within_ceiling else "FAIL"
        return (
            f"{verdict} size={self.size} ceiling={self.ceiling:.6g} eps={self.epsilon:g} "
            f"max_min_disagreement={self.max_min_disagreement:.6g} probes={self.n_probes}"
            + (f" ({self.note})" if self.note else "")
        )


def verify_smooth_cover(cover: Cover, probes: Sequence[Policy]) -> CoverReport:
    cache = None
    if not cover.members[0].is_explicit:
        cache = _padded(cover.members)
    worst, worst_probe = 0.0, None
    for probe in probes:
        best = float(disagreement_many(probe, cover.members, cache).min())
        if best > worst:
            worst, worst_probe = best, probe
    kind = cover.source.kind
    exact = kind in (ClassKind.THRESHOLDS, ClassKind.INTERVALS, ClassKind.FINITE_EXPLICIT)
    note = "grid construction is exact for this class" if exact else "guarantee is probe-based"
    try:
        ceiling = cover_size_ceiling(cover.epsilon, cover.source.dim)
    except (TypeError, ValueError):
        ceiling = math.inf
    return CoverReport(
        size=len(cover),
        ceiling=ceiling,
        epsilon=cover.epsilon if cover.epsilon is not None else 0.0,
        max_min_disagreement=worst,
        worst_probe=worst_probe,
        n_probes=len(probes),
        exact=exact,
        note=note,
    )


def probe_policies(cls: PolicyClass, epsilon: float, n_random: int = 1000,
                   rng: Optional[np.random.Generator] = None) -> list[Policy]:
    """A deterministic grid of at least ``10/epsilon`` class members plus seeded random ones.

    Grid probes are shifted off the cover lattice so that they are not
    trivially cover members.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    n_grid = int(math.ceil(10.0 / epsilon))
    shift = (math.sqrt(5) - 1) / 2  # irrational offset
    if cls.kind is ClassKind.THRESHOLDS:
        thetas = (np.arange(n_grid) + shift) / n_grid
        probes = [threshold(t) for t in thetas]
        probes += [threshold(t) for t in rng.uniform(0, 1, n_random)]
    elif cls.kind is ClassKind.INTERVALS:
        m = int(math.ceil((math.sqrt(8 * n_grid + 1) - 1) / 2))
        pts = (np.arange(m) + shift) / m
        probes = [interval(a, b) for i, a in enumerate(pts) for b in pts[i:]]
        ends = np.sort(rng.uniform(0, 1, (n_random, 2)), axis=1)
        probes += [interval(a, b) for a, b in ends]
    elif cls.kind is ClassKind.KSEGMENTS:
        K = cls.max_segments
        probes = []
        for _ in range(n_grid + n_random):
            b = np.sort(rng.uniform(0, 1, K - 1))
            lab = rng.integers(0, cls.n_actions, K)
            bb, ll = _canonical(tuple(b), tuple(lab))
            probes.append(ksegment(bb, ll))
    elif cls.kind is ClassKind.FINITE_EXPLICIT:
        probes = list(cls.members)
    else:
        raise UnsupportedClass(f"no probes for {cls.kind}")
    return probes


def one_vs_rest(cls: PolicyClass, action: int) -> PolicyClass:
    """The binary class ``{x -> 1(pi(x) == action)}`` for a finite explicit class."""
    if cls.kind is not ClassKind.FINITE_EXPLICIT:
        raise UnsupportedClass("one-vs-rest is implemented for finite explicit classes")
    members = []
    seen = set()
    for p in cls.members:
        table = (p.table == action).astype(np.int64)
        key = table.tobytes()
        if key in seen:
            continue
        seen.add(key)
        members.append(explicit(p.grid, table))
    return PolicyClass.finite(members, n_actions=2)


def random_explicit_class(n_policies: int, grid_size: int, n_actions: int,
                          rng: np.random.Generator, dim: int = 1) -> PolicyClass:
    """A finite class of random labelings over a shared grid.

    For ``dim == 1`` the grid is the cell midpoints of ``grid_size`` equal
    cells of [0, 1]; otherwise a regular lattice in [0, 1]^dim.
    """
    if dim == 1:
        grid = (np.arange(grid_size) + 0.5) / grid_size
    else:
        side = (np.arange(grid_size) + 0.5) / grid_size
        grid = np.stack(np.meshgrid(*([side] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    tables = rng.integers(0, n_actions, (n_policies, len(grid)))
    tables[:, 0] = np.arange(n_policies) % n_actions  # every action used somewhere in the class
    return PolicyClass.finite([explicit(grid, t) for t in tables], n_actions=n_actions)
