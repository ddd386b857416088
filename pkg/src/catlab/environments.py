"""Payoff environments, input processes and local-generalization certification.

Environments are scored by the harness only; learners never see payoffs.
All constructions here are time-invariant (the same payoff at every step).
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from catlab import policies as pol
from catlab.policies import Policy


def section_index(x: float, f: int) -> int:
    """1-based section of ``x`` among ``f`` equal sections of [0, 1]."""
    return min(int(math.floor(x * f)) + 1, f)


class PayoffEnvironment:
    """Base payoff environment.

    Subclasses implement :meth:`payoff`. ``L`` is the declared local
    generalization constant and ``mu_min`` the mentor payoff floor.
    """

    name = "env"
    #: True when ``L`` is a Lipschitz constant with an optimal mentor rather
    #: than a direct local-generalization constant (certification then uses 2L).
    lipschitz_only = False
    #: False for constructions that deliberately break local generalization.
    local_generalization = True

    def __init__(self, mentor: Policy, L: float, mu_min: float, n: int = 1, n_actions: int = 2):
        if not (0 < mu_min <= 1):
            raise ValueError("mu_min must lie in (0, 1]")
        self.mentor = mentor
        self.L = float(L)
        self.mu_min = float(mu_min)
        self.n = n
        self.n_actions = n_actions

    def payoff(self, t: int, x, y: int) -> float:
        raise NotImplementedError

    def mentor_action(self, x) -> int:
        return self.mentor(x)

    def mentor_payoff(self, t: int, x) -> float:
        return self.payoff(t, x, self.mentor_action(x))

    def segment_count(self) -> int:
        return self.mentor.segment_count()

    def describe(self) -> str:
        return self.name

    # batch forms used by the scorer; subclasses override with vectorized versions

    def mentor_actions(self, xs: np.ndarray) -> np.ndarray:
        return np.array([self.mentor_action(x) for x in xs], dtype=np.int64)

    def mentor_payoffs(self, xs: np.ndarray) -> np.ndarray:
        return np.array([self.mentor_payoff(t + 1, x) for t, x in enumerate(xs)], dtype=float)

    def payoff_many(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        return np.array([self.payoff(t + 1, x, int(y)) for t, (x, y) in enumerate(zip(xs, ys))], dtype=float)


def _first_coord(xs) -> np.ndarray:
    xs = np.asarray(xs, dtype=float)
    return xs[:, 0] if xs.ndim == 2 else xs


def _sections(xv: np.ndarray, f: int) -> np.ndarray:
    if xv.size and (xv.min() < 0.0 or xv.max() > 1.0):
        raise ValueError("inputs must lie in [0, 1]")
    return np.minimum(np.floor(xv * f).astype(np.int64) + 1, f)


@dataclass(frozen=True)
class LowerBoundEnv:
    f: int
    bits: tuple
    L: float

    def __post_init__(self):
        if self.f < 1:
            raise ValueError("f must be >= 1")
        if len(self.bits) != self.f:
            raise ValueError(f"expected {self.f} bits, got {len(self.bits)}")
        if not (0 < self.L <= 1):
            raise ValueError("L must lie in (0, 1]")


def lowerbound_payoff(env: LowerBoundEnv, x: float, y: int) -> float:
    if not (0.0 <= x <= 1.0):
        raise ValueError(f"input must lie in [0, 1]; got {x}")
    j = section_index(x, env.f)
    if y == env.bits[j - 1]:
        return 1.0
    mid = (j - 0.5) / env.f
    return 1.0 - env.L * (1.0 / (2 * env.f) - abs(mid - x))


def lowerbound_mentor(env: LowerBoundEnv) -> Policy:
    bounds = [j / env.f for j in range(1, env.f)]
    return pol.ksegment(bounds, env.bits)


def make_lowerbound_env(T: int, query_budget_hint: int, L: float, rng: np.random.Generator) -> LowerBoundEnv:
    if T < 1 or query_budget_hint < 0:
        raise ValueError("need T >= 1 and a nonnegative budget hint")
    f = max(math.isqrt(query_budget_hint * T - 1) + 1 if query_budget_hint * T > 0 else 1, 1)
    bits = tuple(int(b) for b in rng.integers(0, 2, f))
    return LowerBoundEnv(f, bits, L)


class LowerBoundPayoff(PayoffEnvironment):
    name = "lowerbound"

    def __init__(self, spec: LowerBoundEnv):
        self.spec = spec
        self._bits = np.asarray(spec.bits, dtype=np.int64)
        # the mentor is optimal with payoff 1 everywhere
        super().__init__(lowerbound_mentor(spec), spec.L, 1.0)

    def payoff(self, t, x, y):
        return lowerbound_payoff(self.spec, float(np.asarray(x).reshape(-1)[0]), y)

    def mentor_action(self, x):
        return int(self._bits[section_index(float(np.asarray(x).reshape(-1)[0]), self.spec.f) - 1])

    def mentor_payoff(self, t, x):
        return 1.0

    def segment_count(self):
        b = self._bits
        return int(1 + np.count_nonzero(b[1:] != b[:-1]))

    def mentor_actions(self, xs):
        return self._bits[_sections(_first_coord(xs), self.spec.f) - 1]

    def mentor_payoffs(self, xs):
        return np.ones(len(xs))

    def payoff_many(self, xs, ys):
        xv = _first_coord(xs)
        f = self.spec.f
        j = _sections(xv, f)
        penalty = self.spec.L * (1.0 / (2 * f) - np.abs((j - 0.5) / f - xv))
        return np.where(np.asarray(ys) == self._bits[j - 1], 1.0, 1.0 - penalty)

    def describe(self):
        return f"lowerbound(f={self.spec.f},L={self.spec.L:g})"


@dataclass(frozen=True)
class NoLgEnv:
    f: int
    j_m: int

    def __post_init__(self):
        if self.f < 1 or not (1 <= self.j_m <= self.f):
            raise ValueError("need f >= 1 and 1 <= j_m <= f")


def nolg_mentor_action(env: NoLgEnv, x: float) -> int:
    return int(section_index(x, env.f) == env.j_m)


def nolg_payoff(env: NoLgEnv, x: float, y: int) -> float:
    if not (0.0 <= x <= 1.0):
        raise ValueError(f"input must lie in [0, 1]; got {x}")
    return 1.0 if y == nolg_mentor_action(env, x) else 0.0


class NoLgPayoff(PayoffEnvironment):
    name = "nolg"
    local_generalization = False

    def __init__(self, spec: NoLgEnv, L: float = 1.0):
        self.spec = spec
        lo, hi = (spec.j_m - 1) / spec.f, spec.j_m / spec.f
        bounds, labels = [lo, hi], [0, 1, 0]
        if hi >= 1.0:
            bounds, labels = bounds[:1], labels[:2]
        if lo <= 0.0:
            bounds, labels = bounds[1:], labels[1:]
        super().__init__(pol.ksegment(bounds, labels), L, 1.0)

    def payoff(self, t, x, y):
        return nolg_payoff(self.spec, float(np.asarray(x).reshape(-1)[0]), y)

    def mentor_action(self, x):
        return nolg_mentor_action(self.spec, float(np.asarray(x).reshape(-1)[0]))

    def mentor_payoff(self, t, x):
        return 1.0

    def mentor_actions(self, xs):
        return (_sections(_first_coord(xs), self.spec.f) == self.spec.j_m).astype(np.int64)

    def mentor_payoffs(self, xs):
        return np.ones(len(xs))

    def payoff_many(self, xs, ys):
        return (np.asarray(ys) == self.mentor_actions(xs)).astype(float)

    def describe(self):
        return f"nolg(f={self.spec.f},j_m={self.spec.j_m})"


class DistancePayoff(PayoffEnvironment):
    """``mu(x, y) = max(0, 1 - L * dist(x, {x' in [0,1] : mentor(x') = y}))`` on 1-D inputs.

    The mentor is optimal (payoff 1) and local generalization holds with the
    same constant ``L``: an action the mentor takes at ``x'`` is at distance
    at most ``|x - x'|`` from the mentor's region for that action.
    """

    name = "distance"

    def __init__(self, mentor: Policy, L: float, n_actions: int = 2, label: str = "distance"):
        super().__init__(mentor, L, 1.0, n=1, n_actions=n_actions)
        self.name = label
        bounds, labels = mentor.segments()
        edges = [0.0] + [b for b in bounds if 0.0 < b < 1.0] + [1.0]
        # drop pieces lying outside (0, 1)
        labs = []
        for b, lab in zip(list(bounds) + [math.inf], labels):
            if b <= 0.0:
                continue
            labs.append(lab)
            if b >= 1.0:
                break
        self._edges = edges
        self._labels = labs[: len(edges) - 1]
        self._pieces = {}
        for i, lab in enumerate(self._labels):
            self._pieces.setdefault(lab, []).append((edges[i], edges[i + 1]))
        self._inner = edges[1:-1]

    def _piece(self, xv: float) -> int:
        return min(bisect.bisect_right(self._inner, xv), len(self._labels) - 1)

    def mentor_action(self, x):
        return int(self._labels[self._piece(float(np.asarray(x).reshape(-1)[0]))])

    def distance_to(self, xv: float, y: int) -> float:
        pieces = self._pieces.get(y)
        if not pieces:
            return math.inf
        best = math.inf
        for lo, hi in pieces:
            if lo <= xv <= hi:
                return 0.0
            best = min(best, lo - xv if xv < lo else xv - hi)
        return best

    def payoff(self, t, x, y):
        xv = float(np.asarray(x).reshape(-1)[0])
        if y == self._labels[self._piece(xv)]:
            return 1.0
        d = self.distance_to(xv, y)
        return max(0.0, 1.0 - self.L * d) if math.isfinite(d) else 0.0

    def mentor_payoff(self, t, x):
        return 1.0

    def segment_count(self):
        return len(self._labels)

    def mentor_actions(self, xs):
        xv = _first_coord(xs)
        idx = np.minimum(np.searchsorted(self._inner, xv, side="right"), len(self._labels) - 1)
        return np.asarray(self._labels, dtype=np.int64)[idx]

    def mentor_payoffs(self, xs):
        return np.ones(len(xs))

    def payoff_many(self, xs, ys):
        xv = _first_coord(xs)
        ys = np.asarray(ys, dtype=np.int64)
        dist = np.full(len(xv), np.inf)
        for lab, pieces in self._pieces.items():
            sel = ys == lab
            if not sel.any():
                continue
            lo = np.array([p[0] for p in pieces])
            hi = np.array([p[1] for p in pieces])
            gap = np.maximum(np.maximum(lo[None, :] - xv[sel, None], xv[sel, None] - hi[None, :]), 0.0)
            dist[sel] = gap.min(axis=1)
        out = np.maximum(0.0, 1.0 - self.L * dist)
        return np.where(ys == self.mentor_actions(xs), 1.0, out)

    def describe(self):
        return f"{self.name}(K={self.segment_count()},L={self.L:g})"


class ConstantPayoff(PayoffEnvironment):
    name = "constant"

    def __init__(self, mentor: Policy, value: float = 0.9, n: int = 1, n_actions: int = 2):
        super().__init__(mentor, 0.0, value, n=n, n_actions=n_actions)
        self.value = value

    def payoff(self, t, x, y):
        return self.value


# ---------------------------------------------------------------------------
# input processes


class InputProcess:
    """Produces x_t. ``history`` holds the inputs of earlier steps."""

    kind = "process"
    n = 1

    def sample(self, t: int, history, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def sample_block(self, T: int, rng: np.random.Generator) -> Optional[np.ndarray]:
        """All T inputs at once when the process is non-adaptive, else None."""
        return None


class IIDUniform(InputProcess):
    kind = "uniform"

    def __init__(self, n: int = 1):
        self.n = n

    def sample(self, t, history, rng):
        return rng.random(self.n)

    def sample_block(self, T, rng):
        return rng.random((T, self.n))


class SmoothDensity:
    """Piecewise-constant density on [0, 1] (first coordinate) with equal-width bins."""

    def __init__(self, heights: Sequence[float]):
        h = np.asarray(heights, dtype=float)
        if h.ndim != 1 or len(h) == 0 or np.any(h < 0):
            raise ValueError("heights must be a nonempty nonnegative vector")
        h = h / h.mean()  # integrates to 1 on [0, 1]
        self.heights = h
        self._cdf = np.concatenate([[0.0], np.cumsum(h) / len(h)])
        self._cdf[-1] = 1.0

    @property
    def sigma(self) -> float:
        """Largest sigma for which this density is sigma-smooth."""
        return float(1.0 / self.heights.max())

    @classmethod
    def slab(cls, lo: float, width: float, bins: int = 1000) -> "SmoothDensity":
        edges = np.arange(bins + 1) / bins
        overlap = np.clip(np.minimum(edges[1:], lo + width) - np.maximum(edges[:-1], lo), 0, None)
        return cls(overlap * bins)

    def inverse_cdf(self, u: np.ndarray) -> np.ndarray:
        bins = len(self.heights)
        k = np.clip(np.searchsorted(self._cdf, u, side="right") - 1, 0, bins - 1)
        within = (u - self._cdf[k]) / np.maximum(self._cdf[k + 1] - self._cdf[k], 1e-300)
        return np.clip((k + within) / bins, 0.0, 1.0)


class IIDSmooth(InputProcess):
    kind = "smooth"

    def __init__(self, density: SmoothDensity, n: int = 1):
        self.density = density
        self.n = n

    @property
    def sigma(self) -> float:
        return self.density.sigma

    def sample(self, t, history, rng):
        out = rng.random(self.n)
        out[0] = self.density.inverse_cdf(np.array([out[0]]))[0]
        return out

    def sample_block(self, T, rng):
        out = rng.random((T, self.n))
        out[:, 0] = self.density.inverse_cdf(out[:, 0])
        return out


class ScriptExhausted(IndexError):
    pass


class Scripted(InputProcess):
    kind = "scripted"

    def __init__(self, sequence):
        seq = np.asarray(sequence, dtype=float)
        if seq.ndim == 1:
            seq = seq[:, None]
        self.sequence = seq
        self.n = seq.shape[1]

    def sample(self, t, history, rng):
        if t > len(self.sequence):
            raise ScriptExhausted(f"scripted sequence has {len(self.sequence)} inputs; step {t} requested")
        return self.sequence[t - 1].copy()

    def sample_block(self, T, rng):
        if T > len(self.sequence):
            raise ScriptExhausted(f"scripted sequence has {len(self.sequence)} inputs; {T} requested")
        return self.sequence[:T].copy()


class AdaptiveSmoothHostile(InputProcess):
    """Uniform on a width-sigma slab around the learner's current decision boundary.

    ``boundary_source`` is called every step and returns candidate boundary
    points of the current leader policy (possibly empty). The slab is shifted
    to stay inside [0, 1], so the density is exactly 1/sigma on it.
    """

    kind = "hostile"

    def __init__(self, sigma: float, boundary_source: Optional[Callable[[], Sequence[float]]] = None):
        if not (0 < sigma <= 1):
            raise ValueError("sigma must lie in (0, 1]")
        self.sigma = sigma
        self.boundary_source = boundary_source
        self.centers: list[float] = []

    def sample(self, t, history, rng):
        bounds = list(self.boundary_source()) if self.boundary_source else []
        bounds = [b for b in bounds if 0.0 < b < 1.0]
        if not bounds:
            self.centers.append(math.nan)
            return rng.random(1)
        c = bounds[int(rng.integers(len(bounds)))]
        lo = min(max(c - self.sigma / 2, 0.0), 1.0 - self.sigma)
        self.centers.append(lo)
        return np.array([lo + self.sigma * rng.random()])


def sample_input(process: InputProcess, t: int, history, rng: np.random.Generator) -> np.ndarray:
    return process.sample(t, history, rng)


def boundary_sweep_script(boundaries: Sequence[float], T: int, rng: np.random.Generator) -> np.ndarray:
    """An adversarial 1-D sequence hugging and crossing the given boundaries.

    Alternates between points just left and just right of a boundary, with
    offsets shrinking geometrically, interleaved with a slow left-to-right
    sweep over [0, 1].
    """
    bounds = [b for b in boundaries if 0.0 < b < 1.0] or [0.5]
    xs = np.empty(T)
    for t in range(T):
        if t % 4 == 3:
            xs[t] = (t // 4) / max(1, T // 4 - 1) % 1.0
            continue
        b = bounds[t % len(bounds)]
        offset = 0.5 ** (1 + (t // (2 * len(bounds))) % 40) * (0.5 + 0.5 * rng.random())
        side = 1.0 if (t // len(bounds)) % 2 else -1.0
        xs[t] = min(1.0, max(0.0, b + side * offset))
    return xs


def zigzag_script(T: int, period: int = 97) -> np.ndarray:
    phase = (np.arange(T) % (2 * period)) / period
    return np.where(phase <= 1.0, phase, 2.0 - phase)


# ---------------------------------------------------------------------------
# local generalization


@dataclass
class LgCertificate:
    max_ratio: float
    declared: float
    ceiling: float
    pairs: int
    worst_pair: Optional[tuple] = field(default=None, repr=False)

    @property
    def passed(self) -> bool:
        return self.max_ratio <= self.ceiling * (1 + 1e-9) + 1e-12


def _draw_pairs(env: PayoffEnvironment, pairs: int, rng):
    n = env.n
    x = rng.random((pairs, n))
    xp = rng.random((pairs, n))
    # half the pairs are local, at log-uniform scales, to probe small distances
    half = pairs // 2
    scale = 10.0 ** rng.uniform(-6, -1, (half, 1))
    xp[:half] = np.clip(x[:half] + scale * rng.standard_normal((half, n)), 0.0, 1.0)
    return x, xp


def certify_local_generalization(env: PayoffEnvironment, pairs: int, rng: np.random.Generator,
                                 t: int = 1) -> LgCertificate:
    """Largest observed |mu_m(x) - mu(x, mentor(x'))| / ||x - x'|| over random pairs."""
    if pairs < 1:
        raise ValueError("pairs must be >= 1")
    x, xp = _draw_pairs(env, pairs, rng)
    worst, where = 0.0, None
    for a, b in zip(x, xp):
        dist = float(np.linalg.norm(a - b))
        if dist == 0.0:
            continue
        gap = abs(env.mentor_payoff(t, a) - env.payoff(t, a, env.mentor_action(b)))
        r = gap / dist
        if r > worst:
            worst, where = r, (a.copy(), b.copy())
    ceiling = 2 * env.L if env.lipschitz_only else env.L
    return LgCertificate(worst, env.L, ceiling, pairs, where)
