"""
Closed-form Fisher information and variance for the path-rate estimators,
plus a Monte-Carlo harness that checks them against simulation.

All closed forms are per observation (one probe); divide by ``n`` to compare
with the variance of an estimate from ``n`` probes.  They accept any
``TrueRates``: built from the true model for validation, or from estimated
link rates via :func:`plugin_rates` for field use.

  information(delta) = delta / (A_k (1 - A_k delta))
  variance(delta)    = A_k (1 - A_k delta) / delta

with ``delta = beta_k(x)`` for the MLE family and ``psi_k(x)`` for IBE.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import SingularityError
from .estimators import EstimateSet, Method, default_partition, check_partition
from .simulator import simulate
from .statistics import SubtreeStatistics
from .tree_model import LossModel, Tree, TrueRates, descendant_subsets, star_tree

log = logging.getLogger(__name__)

SINGULAR_EPS = 1e-15
PARTITION_TOL = 1e-12


@dataclass(frozen=True)
class VarianceReport:
    node: int
    estimator: str
    crb_single_obs: float
    crb_n: float
    mc_mean: float
    mc_variance: float
    replications: int
    n: int
    excluded: int = 0

    @property
    def exclusion_rate(self) -> float:
        total = self.replications + self.excluded
        return self.excluded / total if total else 0.0


def _proper_subset(rates: TrueRates, k: int, x) -> tuple[int, ...]:
    x = rates.tree.children[k] if x is None else rates.tree.check_children_subset(k, x)
    if len(x) < 2:
        raise ValueError("the information formulas need a subset of at least two children")
    return x


def information(A: float, delta: float) -> float:
    """delta / (A (1 - A delta)); raises SingularityError where undefined."""
    den = A * (1.0 - A * delta)
    if den <= SINGULAR_EPS:
        raise SingularityError(f"information singular at A={A}, delta={delta}")
    return delta / den


def variance_from_delta(A: float, delta: float) -> float:
    if delta <= SINGULAR_EPS:
        raise SingularityError(f"variance singular at delta={delta}")
    return A * (1.0 - A * delta) / delta


def fisher_ibe(rates: TrueRates, k: int, x) -> float:
    x = _proper_subset(rates, k, x)
    return information(float(rates.A[k]), rates.psi(k, x))


def fisher_mle(rates: TrueRates, k: int, x=None) -> float:
    """Information for the original MLE (``x`` omitted) or RSE on ``x``."""
    x = _proper_subset(rates, k, x)
    delta = float(rates.beta[k]) if x == rates.tree.children[k] else rates.beta_subset(k, x)
    return information(float(rates.A[k]), delta)


def delta_for(rates: TrueRates, k: int, estimator: str, x=None) -> float:
    """Second-segment pass rate governing ``estimator``'s variance at node ``k``."""
    if estimator == "direct":
        return 1.0
    if estimator in ("mle", "merged"):
        return float(rates.beta[k])
    x = _proper_subset(rates, k, x)
    if estimator == "rse":
        return float(rates.beta[k]) if x == rates.tree.children[k] else rates.beta_subset(k, x)
    if estimator == "ibe":
        return rates.psi(k, x)
    raise ValueError(f"no closed-form variance for estimator {estimator!r}")


def crb_variance(rates: TrueRates, k: int, estimator: str, x=None) -> float:
    """Per-observation variance A_k (1 - A_k delta) / delta.

    ``estimator`` is one of ``direct``, ``mle``, ``rse``, ``ibe``, ``merged``;
    ``x`` selects the subset for ``rse`` and ``ibe``.
    """
    if estimator == "direct":
        return variance_from_delta(float(rates.A[k]), 1.0)
    if estimator == "merged":
        return merged_mle_variance(rates, k)
    return variance_from_delta(float(rates.A[k]), delta_for(rates, k, estimator, x))


def bipartitions(tree: Tree, k: int) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """Every unordered split of d_k into two non-empty groups (first child stays in group one)."""
    kids = tree.children[k]
    first, rest = kids[0], kids[1:]
    out = []
    for r in range(len(rest)):
        for extra in itertools.combinations(rest, r):
            g1 = (first,) + extra
            g2 = tuple(j for j in kids if j not in g1)
            out.append((g1, g2))
    return out


def merged_mle_variance(rates: TrueRates, k: int, partition=None) -> float:
    tree = rates.tree
    g1, g2 = check_partition(tree, k, partition or default_partition(tree, k))
    beta_zeta = 1.0 - (1.0 - rates.beta_subset(k, g1)) * (1.0 - rates.beta_subset(k, g2))
    assert abs(beta_zeta - rates.beta[k]) <= PARTITION_TOL, (
        f"merged subtree rate {beta_zeta} differs from beta_{k} = {rates.beta[k]}"
    )
    return variance_from_delta(float(rates.A[k]), beta_zeta)


def bwe_information_range(rates: TrueRates, k: int, degree: int) -> tuple[float, float]:
    """Bracket on the per-observation information of BWE of the given degree."""
    d = len(rates.tree.children[k])
    if not 2 <= degree <= d:
        raise ValueError(f"degree must lie in 2..{d}")
    info = [fisher_ibe(rates, k, x) for x in descendant_subsets(rates.tree, k, degree)]
    return min(info), math.comb(d, degree) * max(info)


def plugin_rates(estimates: EstimateSet, tree: Tree) -> TrueRates:
    """Model rates rebuilt from estimated link rates, for plug-in variance estimates."""
    rates = [1.0]
    for k in tree.links:
        a = estimates.alpha_hat[k]
        if math.isnan(a):
            raise ValueError(f"link {k} has no usable estimate")
        rates.append(min(max(a, 0.0), 1.0))
    return TrueRates(tree, LossModel(tuple(rates)))


def method_crb(rates: TrueRates, k: int, method: Method) -> float:
    """Closed-form per-observation variance of ``method`` at ``k``; NaN for BWE."""
    if method.kind == "bwe":
        return math.nan
    if method.kind == "merged":
        part = method.partitions.get(k) if method.partitions else None
        return merged_mle_variance(rates, k, part)
    if method.kind == "mle":
        return crb_variance(rates, k, "mle")
    return crb_variance(rates, k, method.kind, method.subset_for(rates.tree, k))


def example_variances(alpha: float) -> list[tuple[str, float]]:
    """Per-observation variances for a node with three lossy leaf children.

    Every link, including the path to the node, has pass rate ``alpha``.
    Rows: direct measurement, original MLE, pairwise IBE, all-children IBE.
    """
    tree = star_tree(3)
    rates = TrueRates(tree, LossModel.uniform(tree, alpha))
    return [
        ("direct", crb_variance(rates, 1, "direct")),
        ("mle", crb_variance(rates, 1, "mle")),
        ("ibe-pair", crb_variance(rates, 1, "ibe", (2, 3))),
        ("ibe-all", crb_variance(rates, 1, "ibe", (2, 3, 4))),
    ]


def worker_count(requested: int | None = None) -> int:
    cap = os.environ.get("LOSSTOMO_THREADS")
    n = requested or os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def _one_replication(tree, model, n, seed, methods, nodes):
    obs, _ = simulate(tree, model, n, seed)
    stats = SubtreeStatistics(tree, obs)
    out = np.full((len(methods), len(nodes)), np.nan)
    tags = [[""] * len(nodes) for _ in methods]
    for a, method in enumerate(methods):
        for b, k in enumerate(nodes):
            est = method.estimate(stats, k)
            tags[a][b] = est.estimator
            if est.usable:
                out[a, b] = est.value
    return out, tags


def replicate_estimates(tree: Tree, model: LossModel, n: int, replications: int, seed: int,
                        methods: Sequence[Method | str], nodes: Sequence[int] | None = None,
                        workers: int | None = None):
    """Run ``replications`` experiments (replication r seeded ``seed + r``).

    Returns ``(values, tags)`` where ``values[(node, method.label)]`` is the
    array of per-replication estimates (NaN where the estimate was
    degenerate) and ``tags`` maps the same keys to estimator tags.
    """
    methods = [Method.parse(m) if isinstance(m, str) else m for m in methods]
    if nodes is None:
        nodes = [k for k in tree.internal_nodes if len(tree.children[k]) >= 2]
    nodes = list(nodes)
    args = [(tree, model, n, seed + r, methods, nodes) for r in range(replications)]
    workers = worker_count(workers)
    if workers == 1:
        results = [_one_replication(*a) for a in args]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda a: _one_replication(*a), args))
    stacked = np.stack([r[0] for r in results], axis=-1) if results else np.empty((len(methods), len(nodes), 0))
    tags0 = results[0][1] if results else [[""] * len(nodes) for _ in methods]
    values, tags = {}, {}
    for a, method in enumerate(methods):
        for b, k in enumerate(nodes):
            values[(k, method.label)] = stacked[a, b]
            tags[(k, method.label)] = tags0[a][b]
    return values, tags


def monte_carlo(tree: Tree, model: LossModel, n: int, replications: int, seed: int,
                methods: Sequence[Method | str], nodes: Sequence[int] | None = None,
                workers: int | None = None) -> list[VarianceReport]:
    """Monte-Carlo mean and variance of each estimator, paired with its closed-form variance."""
    if replications < 2:
        raise ValueError("need at least two replications")
    methods = [Method.parse(m) if isinstance(m, str) else m for m in methods]
    values, tags = replicate_estimates(tree, model, n, replications, seed, methods, nodes, workers)
    rates = TrueRates(tree, model)
    reports = []
    for (k, label), vals in values.items():
        method = next(m for m in methods if m.label == label)
        ok = vals[~np.isnan(vals)]
        excluded = int(vals.size - ok.size)
        if excluded:
            log.info("node %d %s: excluded %d of %d degenerate replications", k, label, excluded, vals.size)
        try:
            crb = method_crb(rates, k, method)
        except SingularityError:
            crb = math.nan
        mean = float(np.mean(ok)) if ok.size else math.nan
        var = float(np.var(ok, ddof=1)) if ok.size >= 2 else math.nan
        reports.append(VarianceReport(
            node=k,
            estimator=tags[(k, label)],
            crb_single_obs=crb,
            crb_n=crb / n,
            mc_mean=mean,
            mc_variance=var,
            replications=int(ok.size),
            n=n,
            excluded=excluded,
        ))
    return reports


CSV_COLUMNS = ("node", "estimator", "crb_single", "crb_n", "mc_mean", "mc_var", "excluded")


def reports_to_csv(reports: Sequence[VarianceReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        w.writerow([r.node, r.estimator, repr(r.crb_single_obs), repr(r.crb_n),
                    repr(r.mc_mean), repr(r.mc_variance), r.excluded])
    return buf.getvalue()


def reports_to_json(reports: Sequence[VarianceReport]) -> str:
    def clean(v):
        return None if isinstance(v, float) and math.isnan(v) else v

    rows = [{key: clean(v) for key, v in asdict(r).items()} for r in reports]
    return json.dumps(rows, indent=2) + "\n"
