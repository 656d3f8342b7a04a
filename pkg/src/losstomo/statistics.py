"""
Sufficient statistics of a probing experiment.

Every node ``k`` gets a packed bitvector over probes, set where at least one
receiver in R(k) observed the probe.  The counts

  n_k(x) = |OR_{j in x} u_j|      probes seen by the union of subtrees x
  I_k(x) = |AND_{j in x} u_j|     probes seen by every subtree in x

are popcounts over those vectors and stay exact integers.
"""

from __future__ import annotations

import threading
from typing import Iterable

import numpy as np

from .simulator import ObservationMatrix
from .tree_model import DEFAULT_SUBSET_CAP, Tree, descendant_subsets


def _popcount(packed: np.ndarray) -> int:
    return int(np.bitwise_count(packed).sum(dtype=np.int64))


class SubtreeStatistics:
    """Counts n_k(x) and I_k(x) for one dataset on one tree.

    Read-only after construction; the I_k(x) memo is guarded by a lock so
    concurrent queries are safe.
    """

    def __init__(self, tree: Tree, obs: ObservationMatrix, max_cache: int = 1 << 16):
        if set(obs.receiver_ids) != set(tree.receivers):
            raise ValueError("observation receivers do not match the tree's leaves")
        self.tree = tree
        self.n = obs.n
        packed = np.packbits(obs.bits, axis=0)  # shape (ceil(n/8), |R|)
        ind: list[np.ndarray | None] = [None] * tree.node_count
        for c, r in enumerate(obs.receiver_ids):
            ind[r] = np.ascontiguousarray(packed[:, c])
        for k in tree.postorder:
            kids = tree.children[k]
            if kids:
                ind[k] = np.bitwise_or.reduce([ind[j] for j in kids])
        for v in ind:
            v.flags.writeable = False
        self.subtree_indicator = tuple(ind)
        self._counts = tuple(_popcount(v) for v in ind)
        self._cache: dict[tuple[int, tuple[int, ...]], int] = {}
        self._max_cache = max_cache
        self._lock = threading.Lock()

    @classmethod
    def from_observations(cls, tree: Tree, obs: ObservationMatrix) -> "SubtreeStatistics":
        return cls(tree, obs)

    def _check_node(self, k: int) -> None:
        if not 0 <= k < self.tree.node_count:
            raise KeyError(f"unknown node {k}")

    def n_k(self, k: int) -> int:
        """n_k(d_k): probes observed by at least one receiver below ``k``."""
        self._check_node(k)
        return self._counts[k]

    def n_k_group(self, k: int, x: Iterable[int]) -> int:
        """n_k(x): probes observed by at least one receiver in the subtrees ``x``."""
        self._check_node(k)
        x = self.tree.check_children_subset(k, x)
        if len(x) == 1:
            return self._counts[x[0]]
        return _popcount(np.bitwise_or.reduce([self.subtree_indicator[j] for j in x]))

    def intersection_count(self, k: int, x: Iterable[int]) -> int:
        """I_k(x): probes observed by every subtree in ``x``."""
        self._check_node(k)
        x = self.tree.check_children_subset(k, x)
        key = (k, x)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        if len(x) == 1:
            value = self._counts[x[0]]
        else:
            value = _popcount(np.bitwise_and.reduce([self.subtree_indicator[j] for j in x]))
        with self._lock:
            if len(self._cache) < self._max_cache:
                self._cache[key] = value
        return value

    def inclusion_exclusion_check(self, k: int, cap: int = DEFAULT_SUBSET_CAP) -> bool:
        """Check n_k(d_k) = sum_i (-1)^(i-1) sum_{x in S_k(i)} I_k(x) exactly."""
        d = len(self.tree.children[k])
        if d == 0:
            raise ValueError(f"node {k} is a leaf")
        total = 0
        for i in range(1, d + 1):
            sign = 1 if i % 2 else -1
            total += sign * sum(self.intersection_count(k, x) for x in descendant_subsets(self.tree, k, i, cap))
        return total == self.n_k(k)

    def gamma_hat(self, k: int) -> float:
        return self.n_k(k) / self.n

    # rate-source interface shared with TrueRates

    def gamma_rate(self, j: int) -> float:
        return self.n_k(j) / self.n

    def union_rate(self, k: int, x: Iterable[int]) -> float:
        return self.n_k_group(k, x) / self.n

    def joint_rate(self, k: int, x: Iterable[int]) -> float:
        return self.intersection_count(k, x) / self.n
