"""Proportional prioritised replay backed by a sum tree."""

from __future__ import annotations

import numpy as np

REPLAY_CAPACITY = 20_000
PRIORITY_ALPHA = 0.6
PRIORITY_EPS = 1e-6


class NotReadyError(RuntimeError):
    pass


class SumTree:
    """Binary heap of partial sums; leaves hold per-item weights.

    Parents are recomputed from both children on every write instead of being
    patched by deltas, so the root never drifts from the true leaf sum.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.size = 1
        while self.size < capacity:
            self.size *= 2
        self.tree = np.zeros(2 * self.size)

    @property
    def total(self) -> float:
        return float(self.tree[1])

    def get(self, i: int) -> float:
        return float(self.tree[self.size + i])

    def leaves(self) -> np.ndarray:
        return self.tree[self.size:self.size + self.capacity]

    def set(self, i: int, value: float) -> None:
        if not 0 <= i < self.capacity:
            raise IndexError(i)
        if value < 0 or not np.isfinite(value):
            raise ValueError(f"invalid leaf weight {value}")
        j = self.size + i
        self.tree[j] = value
        j //= 2
        while j >= 1:
            self.tree[j] = self.tree[2 * j] + self.tree[2 * j + 1]
            j //= 2

    def prefix_sum(self, i: int) -> float:
        """Sum of leaves [0, i)."""
        if i >= self.size:
            return self.total
        total, j = 0.0, self.size + i
        while j > 1:
            if j % 2 == 1:
                total += self.tree[j - 1]
            j //= 2
        return float(total)

    def find(self, mass: float) -> int:
        """Smallest leaf index whose inclusive prefix sum exceeds ``mass``."""
        j = 1
        while j < self.size:
            left = self.tree[2 * j]
            if mass < left:
                j = 2 * j
            else:
                mass -= left
                j = 2 * j + 1
        return min(j - self.size, self.capacity - 1)


def importance_weights(probs, n: int, beta: float) -> np.ndarray:
    """(n * P(i))^-beta normalised by the batch maximum."""
    w = (n * np.asarray(probs, dtype=np.float64)) ** (-beta)
    return w / w.max()


class PrioritizedReplay:
    def __init__(self, capacity: int = REPLAY_CAPACITY, alpha: float = PRIORITY_ALPHA,
                 eps: float = PRIORITY_EPS, prioritized: bool = True):
        self.capacity = capacity
        self.alpha = alpha if prioritized else 0.0
        self.eps = eps
        self.prioritized = prioritized
        self.tree = SumTree(capacity)
        self.items: list = [None] * capacity
        self.pos = 0
        self.count = 0
        self.max_priority = 1.0

    def __len__(self):
        return self.count

    def push(self, item) -> int:
        i = self.pos
        self.items[i] = item
        self.tree.set(i, self.max_priority ** self.alpha)
        self.pos = (self.pos + 1) % self.capacity
        self.count = min(self.count + 1, self.capacity)
        return i

    def priority(self, i: int) -> float:
        """Raw priority p_i recovered from the stored p_i^alpha."""
        w = self.tree.get(i)
        return w ** (1.0 / self.alpha) if self.alpha > 0 else 1.0

    def probabilities(self) -> np.ndarray:
        leaves = self.tree.leaves()[:self.count]
        return leaves / leaves.sum()

    def sample(self, batch: int, beta: float, rng: np.random.Generator):
        """Stratified draw of ``batch`` items; returns (items, indices, weights)."""
        if self.count < batch:
            raise NotReadyError(f"buffer holds {self.count} < batch {batch}")
        total = self.tree.total
        bounds = np.linspace(0.0, total, batch + 1)
        u = rng.uniform(bounds[:-1], bounds[1:])
        idx = np.array([self.tree.find(m) for m in u])
        # guard against landing on an empty leaf through float rounding at the edge
        idx = np.minimum(idx, self.count - 1)
        probs = np.array([self.tree.get(i) for i in idx]) / total
        weights = importance_weights(probs, self.count, beta)
        return [self.items[i] for i in idx], idx, weights

    def update_priorities(self, idx, td_errors) -> np.ndarray:
        p = np.abs(np.asarray(td_errors, dtype=np.float64)) + self.eps
        for i, pi in zip(idx, p):
            self.tree.set(int(i), pi ** self.alpha)
        self.max_priority = max(self.max_priority, float(p.max()))
        return p

    def state(self) -> dict:
        return {"tree": self.tree.tree.copy(), "items": list(self.items), "pos": self.pos,
                "count": self.count, "max_priority": self.max_priority}

    def restore(self, st: dict) -> None:
        self.tree.tree = st["tree"].copy()
        self.items = list(st["items"])
        self.pos, self.count, self.max_priority = st["pos"], st["count"], st["max_priority"]


def beta_schedule(episode: int, episodes: int, start: float = 0.4, end: float = 1.0) -> float:
    if episodes <= 0:
        return end
    return start + (end - start) * min(1.0, max(0.0, episode / episodes))
