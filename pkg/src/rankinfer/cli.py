"""Command-line front end.

Exit codes: 0 on success, 1 on numerical failure, 2 on usage or input errors.
The default seed comes from ``RANKINFER_SEED`` when ``--seed`` is omitted.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .alloc import AllocationRule, PositionWeights, is_feasible
from .equilibrium import DEFAULT_GRID, DegenerateRuleError, distribution_from_config
from .estimator import BidSample, EstimatorConfig, ZFunction, compare_revenues, estimate_revenue
from .optimize import (
    InfeasibleWeightsError,
    concave_hull,
    decompose_to_weights_sampler,
    optimal_rank_based,
    optimal_strict,
    revenue_of_weights,
)
from .simulate import (
    ClassifierSpec,
    _rule_from_tag,
    builtin_design,
    classifier_error_rate,
    design_from_config,
    epsilon_sweep,
    run_design,
    write_csv,
)

SEED_ENV = "RANKINFER_SEED"


class UsageError(Exception):
    pass


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={raw!r} is not an integer") from None


def _read_json(path: str):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None


def _load_weights(arg: str, n: int | None = None) -> PositionWeights:
    """A JSON file, an inline JSON array, or a tag such as ``stair`` or ``2-unit``."""
    if arg.lstrip().startswith("["):
        data = json.loads(arg)
    elif Path(arg).is_file():
        data = _read_json(arg)
    elif arg == "stair" or arg.endswith("-unit"):
        if n is None:
            raise UsageError(f"tag {arg!r} needs --n")
        return _rule_from_tag(arg, n).weights
    else:
        raise UsageError(f"no such file: {arg}")
    if isinstance(data, dict):
        data = data.get("w", data.get("weights"))
    return PositionWeights(data)


def _load_vector(arg: str) -> np.ndarray:
    data = json.loads(arg) if arg.lstrip().startswith("[") else _read_json(arg)
    if isinstance(data, dict):
        data = data["P"]
    return np.asarray(data, dtype=float)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help=f"master seed (default ${SEED_ENV} or 0)")
    p.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")


def _add_design(p: argparse.ArgumentParser) -> None:
    p.add_argument("--design", required=True, help="builtin:1..4 or a JSON design file")
    p.add_argument("--n", type=int, help="number of agents")
    p.add_argument("--N", type=int, help="bids per replication")
    p.add_argument("--eps", type=float, help="mixture weight of auction B")
    p.add_argument("--replications", type=int)
    p.add_argument("--grid-size", type=int, default=None)
    p.add_argument("--truncate", dest="truncate", action="store_true", default=None)
    p.add_argument("--no-truncate", dest="truncate", action="store_false")
    p.add_argument("--format", choices=["all-pay", "first-price"], default=None)
    p.add_argument("--sampling", choices=["grid", "quantile"], default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rankinfer", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a Monte Carlo design")
    _add_design(p)
    _add_common(p)
    p.add_argument("--metric", choices=["mad", "median-ad", "relative-median-ad"], default=None)
    p.add_argument("--out", help="CSV output path (default stdout)")
    p.add_argument("--json", dest="json_out", help="JSON result path")
    p.add_argument("--dump-estimates", action="store_true", help="include per-replication estimates in JSON")

    p = sub.add_parser("estimate", help="estimate a counterfactual revenue from a bid file")
    p.add_argument("--bids", required=True, help="newline-delimited bids")
    p.add_argument("--incumbent", required=True, help="weights of the auction that produced the bids")
    p.add_argument("--counterfactual", help="weights of the auction to evaluate (default: incumbent)")
    p.add_argument("--n", type=int, help="number of agents, for weight tags")
    p.add_argument("--format", choices=["all-pay", "first-price"], default="all-pay")
    p.add_argument("--no-truncate", dest="truncate", action="store_false", default=True)
    p.add_argument("--delta", type=float, default=None, help="override the truncation fraction")

    p = sub.add_parser("optimize", help="revenue-optimal rank-based weights")
    p.add_argument("--P", required=True, dest="P", help="multi-unit revenues P_0..P_n (JSON)")
    p.add_argument("--env", required=True, help="environment position weights")
    p.add_argument("--epsw", help="strictness weights for the strictly monotone variant")
    p.add_argument("--sample-ops", action="store_true", help="also sample an iron/reserve operation log")
    p.add_argument("--out", help="JSON output path (default stdout)")
    _add_common(p)

    p = sub.add_parser("sweep", help="error against mixture weight")
    _add_design(p)
    _add_common(p)
    p.add_argument("--eps-list", required=True, help="comma-separated mixture weights")
    p.add_argument("--metric", choices=["mad", "median-ad", "relative-median-ad"],
                   default="relative-median-ad")
    p.add_argument("--out", help="CSV output path (default stdout)")

    p = sub.add_parser("compare", help="is revenue(y1) > alpha * revenue(y2)?")
    p.add_argument("--incumbent", required=True)
    p.add_argument("--y1", required=True)
    p.add_argument("--y2", required=True)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--n", type=int, help="number of agents, for weight tags")
    p.add_argument("--bids", help="observed bids; without it only the error rate is reported")
    p.add_argument("--N", type=int, default=None, help="sample size for the error-rate simulation")
    p.add_argument("--replications", type=int, default=1000)
    p.add_argument("--dist", default='{"beta": [2, 2]}', help="value distribution as JSON")
    p.add_argument("--no-truncate", dest="truncate", action="store_false", default=True)
    _add_common(p)
    return parser


def _design(args) -> "DesignSpec":
    seed = args.seed if args.seed is not None else _default_seed()
    if args.design.startswith("builtin:"):
        try:
            number = int(args.design.split(":", 1)[1])
        except ValueError:
            raise UsageError(f"bad design {args.design!r}") from None
        if args.n is None:
            raise UsageError("builtin designs need --n")
        spec = builtin_design(number, args.n, args.N or 1000, truncate=args.truncate)
    else:
        cfg = _read_json(args.design)
        spec = design_from_config(cfg)
    changes = {"seed": seed}
    for attr, key in (("N", "N"), ("eps", "eps"), ("replications", "replications"),
                      ("grid_size", "grid_size"), ("truncate", "truncate"), ("format", "format"),
                      ("sampling", "sampling")):
        value = getattr(args, attr, None)
        if value is not None:
            changes[key] = value
    if getattr(args, "metric", None):
        changes["metric"] = args.metric
    return replace(spec, **changes)


def _emit(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_simulate(args) -> int:
    spec = _design(args)
    res = run_design(spec, threads=args.threads, keep_estimates=args.dump_estimates)
    if args.out:
        write_csv([res], args.out)
    else:
        write_csv([res], fh=sys.stdout)
    if args.json_out:
        Path(args.json_out).write_text(res.to_json(include_estimates=args.dump_estimates))
    return 0


def cmd_estimate(args) -> int:
    if not Path(args.bids).is_file():
        raise UsageError(f"no such file: {args.bids}")
    sample = BidSample.from_file(args.bids, args.format)
    x = _load_weights(args.incumbent, args.n)
    y = _load_weights(args.counterfactual, args.n) if args.counterfactual else x
    if x.n != y.n:
        raise UsageError("incumbent and counterfactual weights differ in length")
    if args.truncate:
        cfg = EstimatorConfig(truncate=True, delta_override=args.delta)
    else:
        cfg = EstimatorConfig(truncate=False)
    res = estimate_revenue(sample, ZFunction(x.rule(), y.rule()), cfg)
    print(res.to_json())
    return 0


def cmd_optimize(args) -> int:
    P = _load_vector(args.P)
    env = _load_weights(args.env)
    hull = concave_hull(P)
    if args.epsw:
        epsw = _load_weights(args.epsw)
        try:
            w = optimal_strict(env, epsw, P)
        except InfeasibleWeightsError as exc:
            raise UsageError(str(exc)) from None
    else:
        w = optimal_rank_based(env, P)
    out = {
        "weights": w.tolist(),
        "revenue": revenue_of_weights(w, P),
        "ironed_intervals": [list(iv) for iv in hull.intervals],
        "ironed_revenues": hull.Pbar.tolist(),
    }
    if args.sample_ops:
        seed = args.seed if args.seed is not None else _default_seed()
        realized, log = decompose_to_weights_sampler(env, w, np.random.default_rng(seed))
        out["sampled_weights"] = realized.tolist()
        out["operations"] = [[op.as_dict(), p] for op, p in log]
    _emit(json.dumps(out, indent=2) + "\n", args.out)
    return 0


def cmd_sweep(args) -> int:
    try:
        eps_list = [float(e) for e in args.eps_list.split(",") if e.strip()]
    except ValueError:
        raise UsageError(f"bad --eps-list {args.eps_list!r}") from None
    if not eps_list:
        raise UsageError("--eps-list is empty")
    spec = _design(args)
    results = epsilon_sweep(spec, eps_list, metric=args.metric, threads=args.threads)
    if args.out:
        write_csv(results, args.out)
    else:
        write_csv(results, fh=sys.stdout)
    return 0


def cmd_compare(args) -> int:
    x = _load_weights(args.incumbent, args.n).rule()
    y1 = _load_weights(args.y1, args.n).rule()
    y2 = _load_weights(args.y2, args.n).rule()
    if not (x.n == y1.n == y2.n):
        raise UsageError("incumbent, y1 and y2 differ in length")
    if y1 == y2 and args.alpha == 1.0:
        raise UsageError("y1 equals y2 with alpha = 1: the revenue gap is zero")
    seed = args.seed if args.seed is not None else _default_seed()
    cfg = EstimatorConfig(truncate=args.truncate)
    out = {}
    N = args.N
    if args.bids:
        if not Path(args.bids).is_file():
            raise UsageError(f"no such file: {args.bids}")
        sample = BidSample.from_file(args.bids)
        out["verdict"] = compare_revenues(sample, x, y1, y2, args.alpha, cfg)
        N = N or sample.N
    try:
        dist = distribution_from_config(json.loads(args.dist))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise UsageError(f"bad --dist: {exc}") from None
    spec = ClassifierSpec(x, y1, y2, args.alpha, N=N or 1000, dist=dist, truncate=args.truncate,
                          replications=args.replications, seed=seed)
    rate, gap = classifier_error_rate(spec, threads=args.threads)
    out.update({"true_gap": gap, "error_rate": rate, "N": spec.N, "replications": spec.replications})
    print(json.dumps(out))
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "optimize": cmd_optimize,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"rankinfer {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, DegenerateRuleError, FloatingPointError) as exc:
        print(f"rankinfer {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"rankinfer {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
