"""Command line front end.

Subcommands: ``simulate`` (alias ``sim``), ``solve``, ``bounds``,
``compare`` and ``paper-check``.  Exit status:

    0  success
    2  usage error (bad flags or parameters)
    3  a pivot, covariance or combined matrix is not positive definite
    4  input/output error (missing file, malformed or inconsistent document)
    5  a check failed (solver disagreement, failed regression)
"""

import argparse
import json
import sys

from . import blocktri, checks, formats, sim, spectral
from .errors import (
    BadParameters,
    BlockSmoothError,
    CombinedNotPD,
    CovarianceNotPD,
    PivotNotPositiveDefinite,
    VacuousBound,
)

EXIT_OK, EXIT_USAGE, EXIT_PD, EXIT_IO, EXIT_CHECK = 0, 2, 3, 4, 5


def _emit(doc, path=None):
    text = json.dumps(formats._plain(doc), indent=1)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _scenario(args):
    if getattr(args, "preset", None):
        return sim.preset(args.preset)
    if not getattr(args, "scenario", None):
        raise BadParameters("give a scenario JSON path or --preset")
    return formats.load_scenario(args.scenario)


def cmd_simulate(args):
    if args.list:
        for name, text in sim.PRESET_HELP.items():
            print(f"{name:<18} {text}")
        return EXIT_OK
    if args.preset:
        name = args.preset
        if args.stabilized:
            if name != "toy6":
                raise BadParameters("--stabilized only applies to --preset toy6")
            name = "toy6-stabilized"
        sc = sim.preset(name)
    elif args.system:
        sc = sim.random_system(args.seed, n=args.n, N=args.N, ell=args.ell)
    else:
        sc = sim.random_model(args.seed, n=args.n, N=args.N, m_pattern=args.m_pattern,
                              conditioning=args.conditioning, g_max=args.g_max,
                              ill_scale=args.ill_scale, rank_deficient=args.rank_deficient)
    _emit(formats.scenario_to_dict(sc), args.out)
    return EXIT_OK


def cmd_solve(args):
    sc = _scenario(args)
    algorithm = "twofilter" if args.algorithm == "mf" else args.algorithm
    sol, rep = checks.run_solve(sc, algorithm, parallel=args.parallel)
    if args.trace:
        formats.write_trace_csv(sol.trace, args.trace)
    if args.estimates:
        formats.write_estimates_csv(sol.e, args.estimates)
    doc = rep.to_dict()
    doc["e"] = sol.e[:, :, 0] if sol.e.shape[2] == 1 else sol.e
    if args.report:
        _emit(doc, args.report)
    if args.json:
        _emit(doc)
    else:
        print(rep.text())
    return EXIT_OK if rep.passed else EXIT_CHECK


def cmd_bounds(args):
    sc = _scenario(args)
    pos = sc.process_system()
    report = spectral.spectral_report(pos)
    try:
        cb = spectral.condition_bound(pos)
    except VacuousBound as err:
        print(f"warning: {err}", file=sys.stderr)
        cb = float("inf")
    doc = report.to_dict()
    doc["condition_bound"] = cb
    if args.report:
        _emit(doc, args.report)
    if args.json:
        _emit(doc)
    else:
        print(report.table())
        print(f"{'condition_bound':<20s} {cb!r:>24}")
        if report.weakest_link_flag:
            print(f"weakest link: sigma_max(G_N) >= 1, the last block is suspect "
                  f"(minimal eigenvector peaks at block {report.argmax_block})")
    return EXIT_OK


def cmd_compare(args):
    sc = _scenario(args)
    rep = checks.compare(sc)
    if args.report:
        _emit(rep.to_dict(), args.report)
    if args.json:
        _emit(rep.to_dict())
    else:
        print(rep.text())
    return EXIT_OK if rep.checks.get("agreement", False) else EXIT_CHECK


def cmd_paper_check(args):
    results = checks.paper_check(args.corpus_size, args.spectral_size)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<62} {r.detail}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_CHECK


def _add_scenario_args(p):
    p.add_argument("scenario", nargs="?", help="scenario, model or system JSON file")
    p.add_argument("--preset", choices=sorted(sim.PRESETS), help="use a built-in scenario instead of a file")
    p.add_argument("--report", metavar="PATH", help="also write the JSON report to PATH")
    p.add_argument("--json", action="store_true", help="print JSON instead of the text table")


def build_parser():
    parser = argparse.ArgumentParser(prog="blocksmooth", description=__doc__.split("\n\n")[0])
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("simulate", aliases=["sim"], help="write a scenario JSON file")
    p.add_argument("--list", action="store_true", help="list presets and exit")
    p.add_argument("--preset", choices=sorted(sim.PRESETS))
    p.add_argument("--stabilized", action="store_true", help="with --preset toy6: the stabilized variant")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=2, help="block size")
    p.add_argument("--N", type=int, default=10, help="number of blocks")
    p.add_argument("--m-pattern", choices=sim.M_PATTERNS, default="full")
    p.add_argument("--conditioning", choices=sim.CONDITIONING, default="well")
    p.add_argument("--g-max", type=float, default=0.9)
    p.add_argument("--ill-scale", type=float, default=1e4)
    p.add_argument("--rank-deficient", action="store_true")
    p.add_argument("--system", action="store_true", help="random SPD system instead of a model")
    p.add_argument("--ell", type=int, default=1, help="right-hand-side columns (with --system)")
    p.add_argument("-o", "--out", metavar="PATH", help="output file (default: stdout)")
    p.set_defaults(func=cmd_simulate)

    p = subs.add_parser("solve", help="run one solver")
    _add_scenario_args(p)
    p.add_argument("--algorithm", choices=["fbt", "bbt", "mf", "twofilter", "hybrid"], default="fbt")
    p.add_argument("--parallel", action="store_true", help="two workers (hybrid, twofilter)")
    p.add_argument("--trace", metavar="CSV", help="write per-pivot spectra")
    p.add_argument("--estimates", metavar="CSV", help="write the solution blocks")
    p.set_defaults(func=cmd_solve)

    p = subs.add_parser("bounds", help="spectral bounds and weakest-link diagnosis")
    _add_scenario_args(p)
    p.set_defaults(func=cmd_bounds)

    p = subs.add_parser("compare", help="cross-check every solver and smoother")
    _add_scenario_args(p)
    p.set_defaults(func=cmd_compare)

    p = subs.add_parser("paper-check", help="toy regression and theorem checks")
    p.add_argument("--corpus-size", type=int, default=20)
    p.add_argument("--spectral-size", type=int, default=50)
    p.set_defaults(func=cmd_paper_check)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (PivotNotPositiveDefinite, CovarianceNotPD, CombinedNotPD) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_PD
    except BadParameters as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, KeyError, TypeError, BlockSmoothError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
