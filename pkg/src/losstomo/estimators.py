"""
Path pass-rate estimators for a single node and for a whole tree.

Every estimator reads its inputs from a *rate source*: any object with a
``tree`` attribute and the methods

  gamma_rate(j)      gamma_j, pass rate from the source to R(j)
  union_rate(k, x)   rate of probes seen by at least one subtree in x
  joint_rate(k, x)   rate of probes seen by every subtree in x

``SubtreeStatistics`` supplies empirical values and ``TrueRates`` the exact
population values, so feeding ``TrueRates`` checks Fisher consistency.

Estimators
----------
  mle_original   root of 1 - g_k/A = prod_{j in d_k} (1 - g_j/A)
  rse            same equation restricted to a subset x of the children
  bwe            [sum_{x in S_k(i)} prod g_j / sum I_k(x)/n] ** (1/(i-1))
  ibe            [prod_{j in x} g_j / (I_k(x)/n)] ** (1/(|x|-1))
  merged_mle     g1 g2 / (g1 + g2 - g_k) for a bipartition of d_k
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .tree_model import DEFAULT_SUBSET_CAP, Tree, descendant_subsets

BISECTION_TOL = 1e-12
BISECTION_MAX_ITER = 200


class Flag(str, enum.Enum):
    CLAMPED = "CLAMPED"
    DEGENERATE = "DEGENERATE"
    UNIDENTIFIABLE = "UNIDENTIFIABLE"
    MERGED = "MERGED"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class Estimate:
    node: int
    value: float
    estimator: str
    flags: frozenset = field(default_factory=frozenset)

    @property
    def usable(self) -> bool:
        return Flag.DEGENERATE not in self.flags and Flag.UNIDENTIFIABLE not in self.flags


def _fmt_set(x: Sequence[int]) -> str:
    return ",".join(str(j) for j in x)


def _clamp(value: float) -> tuple[float, frozenset]:
    if value > 1.0:
        return 1.0, frozenset({Flag.CLAMPED})
    return value, frozenset()


_DEGENERATE = frozenset({Flag.DEGENERATE})


def solve_likelihood(union: float, rates: Sequence[float], closed_form: bool = True,
                     tol: float = BISECTION_TOL, max_iter: int = BISECTION_MAX_ITER) -> tuple[float, frozenset]:
    """Solve ``1 - union/A = prod_j (1 - rates[j]/A)`` for A in (max rate, 1].

    Two-subtree equations use the closed form unless ``closed_form`` is off;
    everything else is bisected.  Returns ``(value, flags)``.
    """
    if union <= 0.0 or min(rates) <= 0.0:
        return math.nan, _DEGENERATE
    if len(rates) == 2 and closed_form:
        a, b = rates
        den = a + b - union
        if den <= 0.0:
            return math.nan, _DEGENERATE
        return _clamp(a * b / den)

    def f(A):
        return (1.0 - union / A) - math.prod(1.0 - r / A for r in rates)

    lo = max(union, max(rates))
    if lo >= 1.0:
        return _clamp(lo)
    f_lo = f(lo)
    if f_lo == 0.0:
        return lo, frozenset()
    if f_lo > 0.0:
        # inconsistent counts (a subtree rate above the union rate)
        return lo, _DEGENERATE
    hi = 1.0
    if f(hi) < 0.0:
        return 1.0, frozenset({Flag.CLAMPED})
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if f(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi), frozenset()


def _explicit(numerator: float, denominator: float, degree: int) -> tuple[float, frozenset]:
    if denominator <= 0.0:
        return math.nan, _DEGENERATE
    return _clamp((numerator / denominator) ** (1.0 / (degree - 1)))


def _require_branching(tree: Tree, k: int) -> None:
    if len(tree.children[k]) < 2:
        raise ValueError(f"node {k} needs at least two children to be estimated")


def mle_original(rates, k: int, closed_form: bool = True) -> Estimate:
    tree = rates.tree
    _require_branching(tree, k)
    kids = tree.children[k]
    value, flags = solve_likelihood(rates.gamma_rate(k), [rates.gamma_rate(j) for j in kids], closed_form)
    return Estimate(k, value, "MLE", flags)


def rse(rates, k: int, x: Sequence[int], closed_form: bool = True) -> Estimate:
    x = rates.tree.check_children_subset(k, x)
    if len(x) < 2:
        raise ValueError("RSE needs a subset of at least two children")
    value, flags = solve_likelihood(rates.union_rate(k, x), [rates.gamma_rate(j) for j in x], closed_form)
    return Estimate(k, value, f"RSE({_fmt_set(x)})", flags)


def ibe(rates, k: int, x: Sequence[int]) -> Estimate:
    x = rates.tree.check_children_subset(k, x)
    if len(x) < 2:
        raise ValueError("IBE needs a subset of at least two children")
    num = math.prod(rates.gamma_rate(j) for j in x)
    value, flags = _explicit(num, rates.joint_rate(k, x), len(x))
    return Estimate(k, value, f"IBE({_fmt_set(x)})", flags)


def bwe(rates, k: int, degree: int, cap: int = DEFAULT_SUBSET_CAP) -> Estimate:
    tree = rates.tree
    d = len(tree.children[k])
    if not 2 <= degree <= d:
        raise ValueError(f"BWE degree must lie in 2..{d}, got {degree}")
    subsets = descendant_subsets(tree, k, degree, cap)
    num = math.fsum(math.prod(rates.gamma_rate(j) for j in x) for x in subsets)
    den = math.fsum(rates.joint_rate(k, x) for x in subsets)
    value, flags = _explicit(num, den, degree)
    return Estimate(k, value, f"BWE({degree})", flags)


def default_partition(tree: Tree, k: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    kids = tree.children[k]
    return kids[:1], kids[1:]


def check_partition(tree: Tree, k: int, partition) -> tuple[tuple[int, ...], tuple[int, ...]]:
    if len(partition) != 2:
        raise ValueError("a merged-MLE partition has exactly two groups")
    g1 = tree.check_children_subset(k, partition[0])
    g2 = tree.check_children_subset(k, partition[1])
    if set(g1) & set(g2) or set(g1) | set(g2) != set(tree.children[k]):
        raise ValueError(f"groups {g1} and {g2} do not partition the children of node {k}")
    return g1, g2


def merged_mle(rates, k: int, partition=None) -> Estimate:
    tree = rates.tree
    _require_branching(tree, k)
    g1, g2 = check_partition(tree, k, partition or default_partition(tree, k))
    r1, r2 = rates.union_rate(k, g1), rates.union_rate(k, g2)
    tag = f"MERGED({_fmt_set(g1)}|{_fmt_set(g2)})"
    if r1 <= 0.0 or r2 <= 0.0:
        return Estimate(k, math.nan, tag, _DEGENERATE)
    den = r1 + r2 - rates.gamma_rate(k)
    if den <= 0.0:
        return Estimate(k, math.nan, tag, _DEGENERATE)
    value, flags = _clamp(r1 * r2 / den)
    return Estimate(k, value, tag, flags)


_KINDS = ("mle", "rse", "bwe", "ibe", "merged")


@dataclass(frozen=True)
class Method:
    """Tree-wide estimator selector.

    ``degree`` picks the BWE degree, or for RSE/IBE the number of leading
    children used as the subset (``None`` means all of d_k).  ``subsets`` and
    ``partitions`` override the choice per node.
    """

    kind: str
    degree: int | None = None
    subsets: Mapping[int, tuple[int, ...]] | None = None
    partitions: Mapping[int, tuple[tuple[int, ...], tuple[int, ...]]] | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown estimator {self.kind!r}; choose from {', '.join(_KINDS)}")
        if self.degree is not None and self.degree < 2:
            raise ValueError("estimator degree must be at least 2")

    @classmethod
    def parse(cls, text: str) -> "Method":
        """Parse ``mle``, ``merged``, ``rse[:i|pair|all]``, ``bwe[:i]``, ``ibe[:i|pair|all]``."""
        name, _, arg = text.strip().lower().partition(":")
        defaults = {"rse": 2, "bwe": 2}
        if not arg:
            return cls(name, defaults.get(name))
        if name in ("mle", "merged"):
            raise ValueError(f"{name} takes no argument")
        if arg == "all":
            if name == "bwe":
                raise ValueError("bwe needs a numeric degree")
            return cls(name, None)
        if arg == "pair":
            return cls(name, 2)
        try:
            return cls(name, int(arg))
        except ValueError:
            raise ValueError(f"bad estimator argument {arg!r} in {text!r}") from None

    @property
    def label(self) -> str:
        if self.kind in ("mle", "merged"):
            return self.kind
        if self.degree is None:
            return f"{self.kind}:all"
        return f"{self.kind}:{self.degree}"

    def subset_for(self, tree: Tree, k: int) -> tuple[int, ...]:
        if self.subsets and k in self.subsets:
            return tree.check_children_subset(k, self.subsets[k])
        kids = tree.children[k]
        return kids if self.degree is None else kids[: self.degree]

    def estimate(self, rates, k: int) -> Estimate:
        tree = rates.tree
        _require_branching(tree, k)
        if self.kind == "mle":
            return mle_original(rates, k)
        if self.kind == "merged":
            part = self.partitions.get(k) if self.partitions else None
            return merged_mle(rates, k, part)
        if self.kind == "bwe":
            return bwe(rates, k, min(self.degree or 2, len(tree.children[k])))
        x = self.subset_for(tree, k)
        return rse(rates, k, x) if self.kind == "rse" else ibe(rates, k, x)


@dataclass
class EstimateSet:
    method: str
    A_hat: dict[int, Estimate]
    alpha_hat: dict[int, float]
    alpha_flags: dict[int, frozenset]

    def loss_rate(self, k: int) -> float:
        return 1.0 - self.alpha_hat[k]

    def rows(self) -> list[dict]:
        out = []
        for k in sorted(self.alpha_hat):
            est = self.A_hat[k]
            flags = sorted(str(f) for f in est.flags | self.alpha_flags[k])
            out.append({
                "node": k,
                "estimator": est.estimator,
                "A_hat": est.value,
                "alpha_hat": self.alpha_hat[k],
                "flags": "|".join(flags),
            })
        return out


def estimate_tree(rates, method: Method | str) -> EstimateSet:
    """Estimate every path rate A_k and link rate alpha_k.

    Leaves take their empirical path rate; internal nodes use ``method``.
    Single-child nodes cannot be identified: they are reported
    UNIDENTIFIABLE and the link below them is estimated jointly with the
    link above (flag MERGED).
    """
    if isinstance(method, str):
        method = Method.parse(method)
    tree = rates.tree
    A_hat: dict[int, Estimate] = {0: Estimate(0, 1.0, "SOURCE")}
    for k in tree.preorder[1:]:
        kids = tree.children[k]
        if not kids:
            g = rates.gamma_rate(k)
            A_hat[k] = Estimate(k, g, "DIRECT", _DEGENERATE if g <= 0.0 else frozenset())
        elif len(kids) == 1:
            A_hat[k] = Estimate(k, math.nan, "NONE", frozenset({Flag.UNIDENTIFIABLE}))
        else:
            A_hat[k] = method.estimate(rates, k)

    alpha_hat: dict[int, float] = {}
    alpha_flags: dict[int, frozenset] = {}
    for k in tree.links:
        flags = set()
        if Flag.UNIDENTIFIABLE in A_hat[k].flags:
            alpha_hat[k] = math.nan
            alpha_flags[k] = frozenset({Flag.UNIDENTIFIABLE})
            continue
        anc = tree.parents[k]
        while Flag.UNIDENTIFIABLE in A_hat[anc].flags:
            anc = tree.parents[anc]
            flags.add(Flag.MERGED)
        num, den = A_hat[k].value, A_hat[anc].value
        if not (den > 0.0) or math.isnan(num):
            ratio = math.nan
            flags.add(Flag.DEGENERATE)
        else:
            ratio = num / den
            if ratio > 1.0:
                ratio = 1.0
                flags.add(Flag.CLAMPED)
        alpha_hat[k] = ratio
        alpha_flags[k] = frozenset(flags)
    return EstimateSet(method.label, A_hat, alpha_hat, alpha_flags)
