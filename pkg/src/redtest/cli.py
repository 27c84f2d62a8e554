"""``redtest`` command line.

Exit codes: 0 on success, 1 on a data or computation error, 2 on a usage
error.  Output files are written atomically, so a failed run leaves none
behind.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import __version__
from .errors import IoFailure, RedTestError
from .msrs import BUDGET_PROFILES, BudgetProfile, MsrsConfig, fit_polynomial, msrs, msrs_budget
from .nas import RESOURCES, RankingConfig, load_candidates, rank_top_fraction, ranking_payload
from .prune import PruneConfig, expected_reduction, prune_plan
from .report import build_report, dumps_json, render_heatmap, similarity_csv, write_json
from .similarity import ESTIMATORS, similarity_matrix
from .trace_io import atomic_write_bytes, load_trace, parse_layer_specs, save_trace, synth_trace


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must fit in an unsigned 64-bit integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=_positive_int, default=None,
                        help="cap on worker threads (default: machine parallelism); never changes results")
    common.add_argument("--timestamp", action="store_true",
                        help="record the UTC run time in JSON reports (breaks byte-reproducibility)")

    parser = argparse.ArgumentParser(prog="redtest", description="Structural redundancy testing from activation dumps.")
    parser.add_argument("--version", action="version", version=f"redtest {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("similarity", parents=[common], help="layer-pair CKA matrix")
    p.add_argument("--trace", required=True)
    p.add_argument("--estimator", choices=ESTIMATORS, default="unbiased")
    p.add_argument("--out", required=True, help="CSV output")
    p.add_argument("--svg", help="SVG heatmap output")
    p.add_argument("--png", help="matplotlib heatmap output")
    p.add_argument("--json", help="JSON report output")

    p = sub.add_parser("msrs", parents=[common], help="model structural redundancy score")
    p.add_argument("--trace", required=True)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--estimator", choices=ESTIMATORS, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("prune", parents=[common], help="redundancy-aware layer pruning plan")
    p.add_argument("--trace", required=True)
    p.add_argument("--mu", type=float, default=None)
    p.add_argument("--mode", choices=("literal", "keep-last"), default="keep-last")
    p.add_argument("--costs", help="JSON mapping layer name to {params, flops, latency}")
    p.add_argument("--out", required=True)

    p = sub.add_parser("rank", parents=[common], help="rank NAS candidates")
    p.add_argument("--candidates", required=True)
    p.add_argument("--resource", choices=RESOURCES, required=True)
    p.add_argument("--T", type=float, default=None, dest="T")
    p.add_argument("--P", type=float, default=None, dest="P")
    p.add_argument("--F", type=float, default=None, dest="F")
    p.add_argument("--M", type=float, required=True, dest="M")
    p.add_argument("--w", type=float, required=True)
    p.add_argument("--lambda", type=float, required=True, dest="lam")
    p.add_argument("--top-permille", type=float, default=1.0)
    p.add_argument("--accuracy-unit", choices=("fraction", "percent"), default="fraction")
    p.add_argument("--out", required=True)

    p = sub.add_parser("budget", parents=[common], help="expected MSRS for a depth")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--profile", choices=sorted(BUDGET_PROFILES))
    g.add_argument("--profile-file")
    p.add_argument("--depth", type=_positive_int, required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic trace")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--layers", required=True, help="comma list of p:rho, e.g. 16:0,16:1,16:0")
    p.add_argument("--seed", type=_u64, required=True)
    p.add_argument("--family", choices=("plain", "block"), default="plain")
    p.add_argument("--no-rotate", action="store_true", help="use identity maps instead of random rotations")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("fit", parents=[common], help="fit MSRS against depth")
    p.add_argument("--points", required=True, help="CSV with depth,msrs columns")
    p.add_argument("--degree", type=int, choices=(1, 2), required=True)
    p.add_argument("--plot", help="matplotlib figure of the fit")
    return parser


def _config(fn, **kw):
    try:
        return fn(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _cmd_similarity(args) -> None:
    trace = load_trace(args.trace, threads=args.threads)
    sim = similarity_matrix(trace, args.estimator, threads=args.threads)
    outputs = {args.out: similarity_csv(sim).encode()}
    if args.svg:
        outputs[args.svg] = render_heatmap(sim).encode()
    if args.json:
        report = build_report("similarity", {"model": trace.model_name, "estimator": args.estimator},
                              sim.to_dict(), args.timestamp)
        outputs[args.json] = dumps_json(report).encode()
    for path, data in outputs.items():
        atomic_write_bytes(path, data)
    if args.png:
        from .figures import similarity_figure

        similarity_figure(sim, args.png)


def _cmd_msrs(args) -> None:
    trace = load_trace(args.trace, threads=args.threads)
    config = _config(MsrsConfig.for_family, structure_family=trace.structure_family,
                     beta=args.beta, epsilon=args.epsilon, estimator=args.estimator)
    result = msrs(trace, config, threads=args.threads)
    payload = result.to_dict()
    cfg = payload.pop("config")
    write_json(args.out, build_report("msrs", {"model": trace.model_name, **cfg}, payload, args.timestamp))


def _cmd_prune(args) -> None:
    trace = load_trace(args.trace, threads=args.threads)
    config = _config(PruneConfig.for_family, structure_family=trace.structure_family,
                     mu=args.mu, mode=args.mode.replace("-", "_"))
    costs = None
    if args.costs:
        try:
            costs = json.loads(Path(args.costs).read_text())
        except OSError as exc:
            raise IoFailure(f"cannot read {args.costs}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise RedTestError(f"{args.costs} is not valid JSON: {exc}") from exc
    plan = prune_plan(trace, config, threads=args.threads)
    payload = plan.to_dict()
    if costs is not None:
        payload["reduction_percent"] = expected_reduction(trace, plan, costs)
    report = build_report("prune", {"model": trace.model_name, "mu": config.mu, "mode": config.mode},
                          payload, args.timestamp)
    write_json(args.out, report)


def _cmd_rank(args) -> None:
    config = _config(RankingConfig, resource=args.resource, T=args.T, P=args.P, F=args.F,
                     M=args.M, w=args.w, lam=args.lam)
    if not 0 < args.top_permille <= 1000:
        raise UsageError("--top-permille must lie in (0, 1000]")
    records = load_candidates(args.candidates, args.accuracy_unit)
    top, stats = rank_top_fraction(records, config, args.top_permille)
    cfg = {**config.to_dict(), "top_permille": args.top_permille, "candidates": len(records)}
    write_json(args.out, build_report("rank", cfg, ranking_payload(top, stats), args.timestamp))


def _cmd_budget(args) -> None:
    if args.profile_file:
        try:
            obj = json.loads(Path(args.profile_file).read_text())
        except OSError as exc:
            raise IoFailure(f"cannot read {args.profile_file}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise RedTestError(f"{args.profile_file} is not valid JSON: {exc}") from exc
        profile = BudgetProfile.from_dict(obj)
    else:
        profile = args.profile
    value = msrs_budget(args.depth, profile)
    tag = profile if isinstance(profile, str) else profile.tag
    sys.stdout.write(dumps_json({"profile": tag, "depth": args.depth, "budget": value}))


def _cmd_synth(args) -> None:
    trace = synth_trace(args.n, parse_layer_specs(args.layers), args.seed,
                        rotate=not args.no_rotate, structure_family=args.family)
    path = save_trace(trace, args.out_dir)
    sys.stdout.write(f"{path}\n")


def _read_points(path) -> list[tuple[float, float]]:
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    points = []
    for k, row in enumerate(rows, start=1):
        try:
            points.append((float(row[0]), float(row[1])))
        except (ValueError, IndexError):
            if k == 1:
                continue  # header row
            raise RedTestError(f"{path}: line {k} is not a depth,msrs pair") from None
    return points


def _cmd_fit(args) -> None:
    points = _read_points(args.points)
    coeffs = fit_polynomial(points, args.degree)
    sys.stdout.write(dumps_json({"degree": args.degree, "coefficients": coeffs, "points": len(points)}))
    if args.plot:
        from .figures import fit_figure

        fit_figure(points, coeffs, args.plot)


COMMANDS = {
    "similarity": _cmd_similarity,
    "msrs": _cmd_msrs,
    "prune": _cmd_prune,
    "rank": _cmd_rank,
    "budget": _cmd_budget,
    "synth": _cmd_synth,
    "fit": _cmd_fit,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"redtest {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (RedTestError, OSError) as exc:
        print(f"redtest {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> int:
    return run()
