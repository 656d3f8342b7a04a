"""
Command-line front end.

    losstomo simulate --tree T --n N --seed S --out obs.csv
    losstomo estimate --tree T (--obs obs.csv | --n N --seed S) --method mle
    losstomo analyze  --tree T [--alpha A]
    losstomo mc       --tree T --n N --reps R --seed S --methods mle,merged,ibe
    losstomo reproduce-example --alpha 0.99

Exit status: 0 ok, 2 configuration or parse error, 3 capacity error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

from . import analysis
from .errors import CapacityError, LossTomoError, SingularityError
from .estimators import Method, estimate_tree
from .simulator import ObservationMatrix, simulate
from .statistics import SubtreeStatistics
from .tree_model import LossModel, TrueRates, parse_tree_spec, proper_correlation_sets

EXIT_OK, EXIT_CONFIG, EXIT_CAPACITY = 0, 2, 3


class ConfigError(LossTomoError):
    pass


def _load_model(args):
    path = Path(args.tree)
    if not path.is_file():
        raise ConfigError(f"tree file not found: {path}")
    tree, model = parse_tree_spec(path.read_text())
    if args.alpha is not None:
        if not 0.0 <= args.alpha <= 1.0:
            raise ConfigError(f"--alpha must lie in [0, 1], got {args.alpha}")
        model = LossModel.uniform(tree, args.alpha)
    return tree, model


def _parse_partitions(items):
    """``NODE=a,b/c,d`` -> {NODE: ((a, b), (c, d))}."""
    out = {}
    for item in items or ():
        try:
            node, groups = item.split("=", 1)
            g1, g2 = groups.split("/")
            out[int(node)] = (tuple(int(v) for v in g1.split(",")), tuple(int(v) for v in g2.split(",")))
        except ValueError:
            raise ConfigError(f"bad partition {item!r}; expected NODE=a,b/c,d") from None
    return out


def _method(text, partitions=None):
    m = Method.parse(text)
    if partitions and m.kind == "merged":
        m = Method(m.kind, m.degree, partitions=partitions)
    return m


def _num(v):
    return "nan" if isinstance(v, float) and math.isnan(v) else repr(v) if isinstance(v, float) else v


def _write_rows(rows, columns, fmt, out):
    if fmt == "json":
        clean = [{c: (None if isinstance(r[c], float) and math.isnan(r[c]) else r[c]) for c in columns} for r in rows]
        text = json.dumps(clean, indent=2) + "\n"
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_num(r[c]) for c in columns])
        text = buf.getvalue()
    _emit(text, out)


def _emit(text, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_simulate(args):
    tree, model = _load_model(args)
    obs, _ = simulate(tree, model, args.n, args.seed)
    _emit(obs.to_csv(), args.out)


def cmd_estimate(args):
    tree, model = _load_model(args)
    if args.obs:
        obs = ObservationMatrix.load(args.obs)
    elif args.n:
        obs, _ = simulate(tree, model, args.n, args.seed)
    else:
        raise ConfigError("estimate needs --obs or --n")
    stats = SubtreeStatistics(tree, obs)
    est = estimate_tree(stats, _method(args.method, _parse_partitions(args.partition)))
    _write_rows(est.rows(), ("node", "estimator", "A_hat", "alpha_hat", "flags"), args.format, args.out)


def cmd_analyze(args):
    tree, model = _load_model(args)
    rates = TrueRates(tree, model)
    rows = []

    def add(k, name, delta, crb, info=math.nan, low=math.nan, high=math.nan):
        rows.append({"node": k, "estimator": name, "delta": delta, "fisher": info,
                     "crb_single": crb, "info_low": low, "info_high": high})

    def info_or_nan(fn, *a):
        try:
            return fn(*a)
        except SingularityError:
            return math.nan

    for k in tree.internal_nodes:
        kids = tree.children[k]
        if len(kids) < 2:
            continue
        add(k, "direct", 1.0, analysis.crb_variance(rates, k, "direct"),
            info_or_nan(analysis.information, float(rates.A[k]), 1.0))
        beta = float(rates.beta[k])
        add(k, "MLE", beta, analysis.crb_variance(rates, k, "mle"),
            info_or_nan(analysis.fisher_mle, rates, k))
        add(k, "MERGED", beta, analysis.merged_mle_variance(rates, k),
            info_or_nan(analysis.fisher_mle, rates, k))
        for x in proper_correlation_sets(tree, k, cap=args.max_children):
            name = ",".join(map(str, x))
            psi = rates.psi(k, x)
            add(k, f"IBE({name})", psi, analysis.crb_variance(rates, k, "ibe", x),
                info_or_nan(analysis.fisher_ibe, rates, k, x))
            if len(x) < len(kids):
                bx = rates.beta_subset(k, x)
                add(k, f"RSE({name})", bx, analysis.crb_variance(rates, k, "rse", x),
                    info_or_nan(analysis.fisher_mle, rates, k, x))
        for i in range(2, len(kids) + 1):
            try:
                low, high = analysis.bwe_information_range(rates, k, i)
            except SingularityError:
                low = high = math.nan
            add(k, f"BWE({i})", math.nan, math.nan, low=low, high=high)
    _write_rows(rows, ("node", "estimator", "delta", "fisher", "crb_single", "info_low", "info_high"),
                args.format, args.out)


def cmd_mc(args):
    tree, model = _load_model(args)
    if args.n < 1 or args.reps < 2:
        raise ConfigError("mc needs --n >= 1 and --reps >= 2")
    partitions = _parse_partitions(args.partition)
    methods = [_method(m, partitions) for m in args.methods.split(",") if m.strip()]
    if not methods:
        raise ConfigError("--methods is empty")
    reports = analysis.monte_carlo(tree, model, args.n, args.reps, args.seed, methods)
    text = analysis.reports_to_json(reports) if args.format == "json" else analysis.reports_to_csv(reports)
    _emit(text, args.out)


def cmd_reproduce_example(args):
    if not 0.0 < args.alpha <= 1.0:
        raise ConfigError("--alpha must lie in (0, 1]")
    rows = [{"estimator": name, "variance": v} for name, v in analysis.example_variances(args.alpha)]
    _write_rows(rows, ("estimator", "variance"), args.format, args.out)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="losstomo", description="Multicast loss tomography toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, need_tree=True):
        if need_tree:
            sp.add_argument("--tree", required=True, help="tree-spec file")
            sp.add_argument("--alpha", type=float, help="uniform pass rate overriding the tree file")
        sp.add_argument("--format", choices=("csv", "json"), default="csv")
        sp.add_argument("--out", help="output path (default stdout)")

    sp = sub.add_parser("simulate", help="simulate probes and dump the observation matrix")
    common(sp)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("estimate", help="estimate path and link pass rates")
    common(sp)
    sp.add_argument("--obs", help="observation dump written by 'simulate'")
    sp.add_argument("--n", type=int, help="simulate this many probes inline instead of --obs")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--method", default="mle")
    sp.add_argument("--partition", action="append", help="merged-MLE split NODE=a,b/c,d (repeatable)")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("analyze", help="closed-form Fisher information and variance tables")
    common(sp)
    sp.add_argument("--max-children", type=int, default=8, help="subset enumeration cap")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("mc", help="Monte-Carlo variance reports")
    common(sp)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--reps", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--methods", default="mle")
    sp.add_argument("--partition", action="append", help="merged-MLE split NODE=a,b/c,d (repeatable)")
    sp.set_defaults(func=cmd_mc)

    sp = sub.add_parser("reproduce-example", help="variance table for a node with three lossy leaf children")
    common(sp, need_tree=False)
    sp.add_argument("--alpha", type=float, required=True)
    sp.set_defaults(func=cmd_reproduce_example)
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except CapacityError as exc:
        print(f"losstomo: capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (LossTomoError, ValueError, OSError) as exc:
        print(f"losstomo: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
