"""
Multicast probe simulation under i.i.d. Bernoulli link losses.

Random stream convention
------------------------
Probes are cut into blocks of ``BLOCK_SIZE``.  Block ``b`` of a run seeded
with ``seed`` draws from ``PCG64(SeedSequence(seed mod 2**64, spawn_key=(b,)))``,
so every block is an independent substream regardless of how blocks are
spread over workers.  Inside a block links are visited in tree preorder and
one uniform is drawn per probe that reached the link's parent (short-circuit:
no draws below a lost probe).  Monte-Carlo replication ``r`` uses
``seed + r``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CapacityError
from .tree_model import LossModel, Tree

BLOCK_SIZE = 1 << 16
ENUMERATION_CAP = 24
_CHUNK = 1 << 16


@dataclass(frozen=True)
class ObservationMatrix:
    """Receiver-visible outcome of an experiment.

    ``bits[i, c]`` is 1 iff probe ``i`` was observed by receiver
    ``receiver_ids[c]``.
    """

    receiver_ids: tuple[int, ...]
    bits: np.ndarray

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=np.uint8)
        if bits.ndim != 2 or bits.shape[1] != len(self.receiver_ids):
            raise ValueError("bits must be an n x |R| matrix")
        if bits.size and bits.max() > 1:
            raise ValueError("observation entries must be 0 or 1")
        bits.flags.writeable = False
        object.__setattr__(self, "receiver_ids", tuple(int(r) for r in self.receiver_ids))
        object.__setattr__(self, "bits", bits)

    @property
    def n(self) -> int:
        return self.bits.shape[0]

    def column(self, receiver: int) -> np.ndarray:
        return self.bits[:, self.receiver_ids.index(receiver)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", self.n])
        w.writerow(["receivers", *self.receiver_ids])
        w.writerows(self.bits.tolist())
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ObservationMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        if len(rows) < 2 or rows[0][:1] != ["n"] or rows[1][:1] != ["receivers"]:
            raise ValueError("observation dump must start with 'n,<count>' and 'receivers,...' rows")
        n = int(rows[0][1])
        receivers = tuple(int(r) for r in rows[1][1:])
        body = [r for r in rows[2:] if r]
        if len(body) != n:
            raise ValueError(f"header says {n} probes but {len(body)} rows follow")
        bits = np.array(body, dtype=np.uint8).reshape(n, len(receivers))
        return cls(receivers, bits)

    def save(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def load(cls, path) -> "ObservationMatrix":
        return cls.from_csv(Path(path).read_text())


@dataclass(frozen=True)
class HiddenState:
    """Full per-node state: ``bits[i, k]`` is 1 iff probe ``i`` reached node ``k``."""

    bits: np.ndarray


def _block_rng(seed: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) % (1 << 64), spawn_key=(block,))
    return np.random.Generator(np.random.PCG64(ss))


def _simulate_block(tree: Tree, alpha: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    x = np.zeros((tree.node_count, size), dtype=bool)
    x[0] = True
    for k in tree.preorder[1:]:
        idx = np.flatnonzero(x[tree.parents[k]])
        if idx.size:
            x[k, idx] = rng.random(idx.size) < alpha[k]
    return x


def simulate(tree: Tree, model: LossModel, n: int, seed: int) -> tuple[ObservationMatrix, HiddenState]:
    """Send ``n`` multicast probes down ``tree``; identical arguments give identical bits."""
    if n < 1:
        raise ValueError("probe count must be at least 1")
    alpha = np.asarray(model.pass_rate, dtype=float)
    if alpha.size != tree.node_count:
        raise ValueError("loss model does not match the tree")
    blocks = []
    for b, start in enumerate(range(0, n, BLOCK_SIZE)):
        size = min(BLOCK_SIZE, n - start)
        blocks.append(_simulate_block(tree, alpha, size, _block_rng(seed, b)))
    state = np.concatenate(blocks, axis=1).T.astype(np.uint8)
    receivers = tree.receivers
    obs = ObservationMatrix(receivers, state[:, list(receivers)])
    state.flags.writeable = False
    return obs, HiddenState(state)


def exact_outcome_distribution(tree: Tree, model: LossModel, cap: int = ENUMERATION_CAP) -> dict[tuple[int, ...], float]:
    """Brute-force distribution of receiver patterns.

    Enumerates every pass/fail configuration of the links, propagates
    reachability and sums configuration probabilities per receiver pattern.
    Patterns are 0/1 tuples aligned with ``tree.receivers``.
    """
    m = tree.node_count - 1
    if m > cap:
        raise CapacityError(f"{m} links exceed the enumeration cap {cap}")
    alpha = np.asarray(model.pass_rate, dtype=float)
    receivers = tree.receivers
    totals: dict[int, float] = {}
    for start in range(0, 1 << m, _CHUNK):
        codes = np.arange(start, min(start + _CHUNK, 1 << m), dtype=np.int64)
        prob = np.ones(codes.size)
        reached = np.zeros((tree.node_count, codes.size), dtype=bool)
        reached[0] = True
        for k in tree.preorder[1:]:
            passed = ((codes >> (k - 1)) & 1).astype(bool)
            prob *= np.where(passed, alpha[k], 1.0 - alpha[k])
            reached[k] = reached[tree.parents[k]] & passed
        pattern = np.zeros(codes.size, dtype=np.int64)
        for c, r in enumerate(receivers):
            pattern |= reached[r].astype(np.int64) << c
        uniq, inv = np.unique(pattern, return_inverse=True)
        sums = np.bincount(inv, weights=prob)
        for code, p in zip(uniq.tolist(), sums.tolist()):
            totals[code] = totals.get(code, 0.0) + p
    width = len(receivers)
    return {
        tuple((code >> c) & 1 for c in range(width)): p
        for code, p in sorted(totals.items())
    }


def outcome_expectation(dist: dict[tuple[int, ...], float], tree: Tree, k: int, x, mode: str = "joint") -> float:
    """Probability, under ``dist``, that every (``joint``) or any (``union``)
    subtree in ``x`` below node ``k`` observes a probe."""
    if mode not in ("joint", "union"):
        raise ValueError(f"unknown mode {mode!r}")
    x = tree.check_children_subset(k, x)
    patterns = np.array(list(dist.keys()), dtype=bool).reshape(len(dist), len(tree.receivers))
    probs = np.fromiter(dist.values(), dtype=float, count=len(dist))
    col = {r: c for c, r in enumerate(tree.receivers)}
    seen = [patterns[:, [col[r] for r in tree.receivers_below(j)]].any(axis=1) for j in x]
    hit = np.logical_and.reduce(seen) if mode == "joint" else np.logical_or.reduce(seen)
    return float(math.fsum(probs[hit]))
