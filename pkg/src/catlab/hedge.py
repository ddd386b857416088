"""Label-efficient Hedge: multiplicative weights that only learn on query steps."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from catlab.policies import Cover

_UNDERFLOW = 1e-100
_LOG_UNDERFLOW = math.log(_UNDERFLOW)


def learning_rate(p: float, n_experts: int, T: int) -> float:
    return max(math.sqrt(p * math.log(n_experts) / (2 * T)), p * p / math.sqrt(2))


def query_probability(epsilon: float, T: int) -> float:
    """``1/sqrt(eps*T)`` for eps in [1/T, ...]; values above 1 only come from float rounding."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if epsilon * T < 1.0 - 1e-12:
        raise ValueError(f"epsilon={epsilon:g} is below 1/T={1.0 / T:g}; valid range starts at 1/T")
    return min(1.0, 1.0 / math.sqrt(epsilon * T))


class HedgeState:
    """Weights over cover members, query probability ``p`` and learning rate ``eta``.

    Weights are held as logs so that they stay positive however long one
    expert keeps losing. The normalized sampling distribution is cached
    between updates, since weights only change on query steps.
    """

    def __init__(self, n_experts: int, T: int, p: float, cover: Optional[Cover] = None):
        if n_experts < 1:
            raise ValueError("need at least one expert")
        if not (0 < p <= 1):
            raise ValueError(f"query probability must lie in (0, 1]; got {p}")
        self.cover = cover
        self.T = T
        self.p = p
        self.eta = learning_rate(p, n_experts, T)
        self.log_weights = np.zeros(n_experts)
        self._cdf: Optional[np.ndarray] = None

    @property
    def n_experts(self) -> int:
        return len(self.log_weights)

    @property
    def weights(self) -> np.ndarray:
        """Weights scaled so the largest is 1 (tiny ones may round to 0 here)."""
        return np.exp(self.log_weights - self.log_weights.max())

    def distribution(self) -> np.ndarray:
        w = self.weights
        return w / w.sum()

    def leader(self) -> int:
        return int(np.argmax(self.log_weights))

    def sample_policy(self, rng: np.random.Generator) -> int:
        if self._cdf is None:
            cdf = np.cumsum(self.weights)
            self._cdf = cdf / cdf[-1]
        idx = int(np.searchsorted(self._cdf, rng.random(), side="right"))
        return min(idx, self.n_experts - 1)

    def update(self, losses) -> int:
        """Apply one multiplicative update; return the lowest-index argmin of ``losses``."""
        losses = np.asarray(losses, dtype=float)
        if losses.shape != self.log_weights.shape:
            raise ValueError(f"expected {self.n_experts} losses, got shape {losses.shape}")
        idx = int(losses.argmin())
        best, worst = losses[idx], losses.max()
        if best < 0 or worst > 1:
            raise ValueError("losses must lie in [0, 1]")
        if worst > best:
            lw = self.log_weights
            lw -= self.eta * (losses - best)
            if lw.max() < _LOG_UNDERFLOW:
                lw -= lw.max()
            self._cdf = None
        return idx


def hedge_init(cover: Cover, T: int, epsilon: float) -> HedgeState:
    return HedgeState(len(cover), T, query_probability(epsilon, T), cover)


def hedge_propose(state: HedgeState, rng: np.random.Generator) -> tuple[Optional[int], bool]:
    """Draw the query coin; on a non-query step also sample a policy index.

    On query steps the index is ``None``: the caller picks the post-update
    leader via :func:`hedge_update`.
    """
    if rng.random() < state.p:
        return None, True
    return state.sample_policy(rng), False


def hedge_update(state: HedgeState, losses) -> int:
    return state.update(losses)


def run_hedge_with_queries(loss_matrix: np.ndarray, p: float, rng: np.random.Generator) -> tuple[float, float]:
    """Play label-efficient Hedge against a fixed loss sequence.

    ``loss_matrix`` has shape (T, n_experts). Returns the learner's total
    loss and the best expert's total loss.
    """
    T, n = loss_matrix.shape
    state = HedgeState(n, T, p)
    total = 0.0
    for t in range(T):
        idx, query = hedge_propose(state, rng)
        if query:
            idx = hedge_update(state, loss_matrix[t])
        total += loss_matrix[t, idx]
    return total, float(loss_matrix.sum(axis=0).min())
