"""
Multicast tree topology, Bernoulli link-loss model and the quantities the
model implies.

Nodes are dense integers ``0..m``.  Node 0 is the source; it has exactly one
child (node 1 by convention, though any id is accepted).  Link ``k`` connects
``parent(k)`` to ``k``, so links and non-root nodes share ids.

Tree-spec text format, one record per non-root node::

    # comment
    <node-id> <parent-id> <pass-rate>

Model-derived rates
-------------------
  A[k]      probability a probe reaches node k          A[0] = 1, A[k] = A[f(k)] * alpha[k]
  beta[k]   probability a probe at k is seen below k    1 - beta[k] = prod_j (1 - alpha[j] beta[j])
  gamma[k]  A[k] * beta[k]
  psi(k,x)  prod_{j in x} alpha[j] beta[j]
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import CapacityError, TreeSpecError

DEFAULT_SUBSET_CAP = 20


@dataclass(frozen=True)
class Tree:
    """Validated rooted multicast tree.

    ``parents[k]`` is the parent of node ``k`` (``-1`` for the root) and
    ``children[k]`` the sorted tuple of its children.
    """

    parents: tuple[int, ...]
    children: tuple[tuple[int, ...], ...] = field(init=False, repr=False)

    def __post_init__(self):
        parents = tuple(int(p) for p in self.parents)
        object.__setattr__(self, "parents", parents)
        m1 = len(parents)
        if m1 < 2:
            raise TreeSpecError("a tree needs at least the root and one link")
        if parents[0] != -1:
            raise TreeSpecError("node 0 must be the root (no parent)")
        kids: list[list[int]] = [[] for _ in range(m1)]
        for k in range(1, m1):
            p = parents[k]
            if not 0 <= p < m1:
                raise TreeSpecError(f"node {k} has unknown parent {p}")
            if p == k:
                raise TreeSpecError(f"node {k} is its own parent")
            kids[p].append(k)
        object.__setattr__(self, "children", tuple(tuple(sorted(c)) for c in kids))
        if len(self.children[0]) != 1:
            raise TreeSpecError(
                f"node 0 must have exactly one child, found {len(self.children[0])}"
            )
        if len(self.preorder) != m1:
            unreached = sorted(set(range(m1)) - set(self.preorder))
            raise TreeSpecError(f"nodes not reachable from node 0 (cycle): {unreached}")

    @classmethod
    def from_edges(cls, edges: Iterable[tuple[int, int]]) -> "Tree":
        """Build from ``(child, parent)`` pairs."""
        edges = list(edges)
        m1 = len(edges) + 1
        parents = [-1] * m1
        seen = set()
        for child, parent in edges:
            if child in seen:
                raise TreeSpecError(f"duplicate node id {child}")
            if not 1 <= child < m1:
                raise TreeSpecError(f"node id {child} outside dense range 1..{m1 - 1}")
            seen.add(child)
            parents[child] = parent
        return cls(tuple(parents))

    @property
    def node_count(self) -> int:
        return len(self.parents)

    @property
    def links(self) -> range:
        return range(1, len(self.parents))

    def parent(self, k: int) -> int:
        return self.parents[k]

    def is_leaf(self, k: int) -> bool:
        return not self.children[k]

    @cached_property
    def preorder(self) -> tuple[int, ...]:
        order, stack = [], [0]
        while stack:
            k = stack.pop()
            order.append(k)
            stack.extend(reversed(self.children[k]))
        return tuple(order)

    @cached_property
    def postorder(self) -> tuple[int, ...]:
        # reversed preorder visits every child before its parent
        return tuple(reversed(self.preorder))

    @cached_property
    def receivers(self) -> tuple[int, ...]:
        return tuple(k for k in range(self.node_count) if not self.children[k])

    @cached_property
    def internal_nodes(self) -> tuple[int, ...]:
        """Non-root nodes with children, in preorder."""
        return tuple(k for k in self.preorder[1:] if self.children[k])

    @cached_property
    def single_child_nodes(self) -> tuple[int, ...]:
        """Internal non-root nodes with one child; their A_k is unidentifiable."""
        return tuple(k for k in self.internal_nodes if len(self.children[k]) == 1)

    @cached_property
    def depth(self) -> tuple[int, ...]:
        d = [0] * self.node_count
        for k in self.preorder[1:]:
            d[k] = d[self.parents[k]] + 1
        return tuple(d)

    def receivers_below(self, k: int) -> tuple[int, ...]:
        """R(k): the receivers in the subtree rooted at ``k``."""
        out, stack = [], [k]
        while stack:
            j = stack.pop()
            if self.children[j]:
                stack.extend(self.children[j])
            else:
                out.append(j)
        return tuple(sorted(out))

    def ancestors(self, k: int) -> tuple[int, ...]:
        out = []
        while self.parents[k] != -1:
            k = self.parents[k]
            out.append(k)
        return tuple(out)

    def check_children_subset(self, k: int, x: Iterable[int]) -> tuple[int, ...]:
        """Return ``x`` as a sorted tuple, raising if it is empty or not within d_k."""
        xs = tuple(sorted(set(x)))
        if not xs:
            raise ValueError("subset must be non-empty")
        bad = set(xs) - set(self.children[k])
        if bad:
            raise ValueError(f"{sorted(bad)} are not children of node {k}")
        return xs


@dataclass(frozen=True)
class LossModel:
    """Per-link pass rates; ``pass_rate[k]`` is alpha_k and index 0 is unused."""

    pass_rate: tuple[float, ...]

    def __post_init__(self):
        rates = tuple(float(a) for a in self.pass_rate)
        object.__setattr__(self, "pass_rate", rates)
        for k, a in enumerate(rates[1:], start=1):
            # zero is allowed so the simulator can model a cut link
            if not 0.0 <= a <= 1.0 or math.isnan(a):
                raise ValueError(f"pass rate of link {k} must lie in [0, 1], got {a}")

    @classmethod
    def uniform(cls, tree: Tree, alpha: float) -> "LossModel":
        return cls((1.0,) + (alpha,) * (tree.node_count - 1))

    @classmethod
    def from_mapping(cls, tree: Tree, rates: dict[int, float]) -> "LossModel":
        missing = [k for k in tree.links if k not in rates]
        if missing:
            raise ValueError(f"no pass rate for links {missing}")
        return cls((1.0,) + tuple(rates[k] for k in tree.links))

    def alpha(self, k: int) -> float:
        return self.pass_rate[k]

    def with_rate(self, k: int, alpha: float) -> "LossModel":
        rates = list(self.pass_rate)
        rates[k] = alpha
        return LossModel(tuple(rates))


def _strip_comment(line: str) -> str:
    return line.split("#", 1)[0].strip()


def parse_tree_spec(text: str) -> tuple[Tree, LossModel]:
    """Parse a tree-spec document into a validated tree and its loss model."""
    records: dict[int, tuple[int, float, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise TreeSpecError(f"expected '<node> <parent> <pass-rate>', got {raw.strip()!r}", lineno)
        try:
            node, parent, rate = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise TreeSpecError(f"malformed record {raw.strip()!r}", lineno) from None
        if node in records:
            raise TreeSpecError(f"duplicate node id {node}", lineno)
        if node <= 0:
            raise TreeSpecError(f"node id must be a positive integer, got {node}", lineno)
        if not 0.0 <= rate <= 1.0:
            raise TreeSpecError(f"pass rate {rate} outside [0, 1]", lineno)
        records[node] = (parent, rate, lineno)
    if not records:
        raise TreeSpecError("empty tree spec")

    m = len(records)
    for node, (parent, _, lineno) in records.items():
        if node > m:
            raise TreeSpecError(f"node ids must be dense 1..{m}; got {node}", lineno)
        if parent != 0 and parent not in records:
            raise TreeSpecError(f"orphan node {node}: parent {parent} is not defined", lineno)
        if parent == node:
            raise TreeSpecError(f"node {node} is its own parent", lineno)

    # walk each node up to the root to report cycles with a line number
    for node, (_, _, lineno) in sorted(records.items()):
        seen = {node}
        p = records[node][0]
        while p != 0:
            if p in seen:
                raise TreeSpecError(f"cycle through node {node}", lineno)
            seen.add(p)
            p = records[p][0]

    root_kids = [n for n, (p, _, _) in records.items() if p == 0]
    if len(root_kids) != 1:
        lineno = records[sorted(root_kids)[1]][2] if len(root_kids) > 1 else None
        raise TreeSpecError(f"node 0 must have exactly one child, found {len(root_kids)}", lineno)

    parents = [-1] + [records[k][0] for k in range(1, m + 1)]
    tree = Tree(tuple(parents))
    model = LossModel((1.0,) + tuple(records[k][1] for k in range(1, m + 1)))
    return tree, model


def parse_tree(text: str) -> Tree:
    return parse_tree_spec(text)[0]


def dump_tree(tree: Tree, model: LossModel | None = None) -> str:
    """Canonical tree-spec text, sorted by node id."""
    lines = []
    for k in tree.links:
        rate = 1.0 if model is None else model.alpha(k)
        lines.append(f"{k} {tree.parents[k]} {rate!r}")
    return "\n".join(lines) + "\n"


def binary15_tree() -> Tree:
    """The 15-node binary multicast tree used throughout the examples.

    Node 0 feeds node 1; node k in 1..7 has children 2k and 2k+1; the
    receivers are 8..15.
    """
    return Tree((-1, 0) + tuple(k // 2 for k in range(2, 16)))


def star_tree(n_children: int) -> Tree:
    """Source -> node 1 -> ``n_children`` receivers (ids 2..n_children+1)."""
    return Tree((-1, 0) + (1,) * n_children)


def descendant_subsets(tree: Tree, k: int, degree: int, cap: int = DEFAULT_SUBSET_CAP) -> list[tuple[int, ...]]:
    """S_k(i): all size-``degree`` subsets of the children of ``k``, lexicographic."""
    kids = tree.children[k]
    if not kids:
        raise ValueError(f"node {k} is a leaf")
    if len(kids) > cap:
        raise CapacityError(f"node {k} has {len(kids)} children, above the subset cap {cap}")
    if not 1 <= degree <= len(kids):
        raise ValueError(f"degree must lie in 1..{len(kids)}, got {degree}")
    return list(itertools.combinations(kids, degree))


def proper_correlation_sets(tree: Tree, k: int, cap: int = DEFAULT_SUBSET_CAP) -> list[tuple[int, ...]]:
    """All subsets of d_k with at least two members, ordered by size then lexicographically."""
    d = len(tree.children[k])
    return [x for i in range(2, d + 1) for x in descendant_subsets(tree, k, i, cap)]


class TrueRates:
    """Exact model quantities for a tree under a loss model.

    Also serves as a rate source for the estimators: ``gamma_rate``,
    ``union_rate`` and ``joint_rate`` return the population values that
    ``SubtreeStatistics`` estimates from data.
    """

    def __init__(self, tree: Tree, model: LossModel):
        if len(model.pass_rate) != tree.node_count:
            raise ValueError(
                f"model has {len(model.pass_rate) - 1} links, tree has {tree.node_count - 1}"
            )
        self.tree = tree
        self.model = model
        alpha = np.asarray(model.pass_rate, dtype=float)
        A = np.ones(tree.node_count)
        for k in tree.preorder[1:]:
            A[k] = A[tree.parents[k]] * alpha[k]
        beta = np.ones(tree.node_count)
        for k in tree.postorder:
            kids = tree.children[k]
            if kids:
                beta[k] = 1.0 - math.prod(1.0 - float(alpha[j] * beta[j]) for j in kids)
        self.alpha = alpha
        self.A = A
        self.beta = beta
        self.gamma = A * beta
        for arr in (self.alpha, self.A, self.beta, self.gamma):
            arr.flags.writeable = False

    def psi(self, k: int, x: Sequence[int]) -> float:
        """Probability that every subtree in ``x`` sees a probe that reached ``k``."""
        x = self.tree.check_children_subset(k, x)
        return float(math.prod(float(self.alpha[j] * self.beta[j]) for j in x))

    def beta_subset(self, k: int, x: Sequence[int]) -> float:
        """beta_k(x): probability that at least one subtree in ``x`` sees a probe at ``k``."""
        x = self.tree.check_children_subset(k, x)
        return 1.0 - float(math.prod(1.0 - float(self.alpha[j] * self.beta[j]) for j in x))

    # rate-source interface

    def gamma_rate(self, j: int) -> float:
        return float(self.gamma[j])

    def union_rate(self, k: int, x: Sequence[int]) -> float:
        return float(self.A[k]) * self.beta_subset(k, x)

    def joint_rate(self, k: int, x: Sequence[int]) -> float:
        return float(self.A[k]) * self.psi(k, x)


def true_rates(tree: Tree, model: LossModel) -> TrueRates:
    return TrueRates(tree, model)
