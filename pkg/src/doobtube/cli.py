"""Command line entry point: ``doobtube <subcommand> --config scenario.yaml``.

Exit status is 0 when every stage ran (inconclusive verdicts included,
they are reported as flags on stderr), 1 on a stage or validation error.
"""
import argparse
import json
import sys
from pathlib import Path

from .classifier import classify
from .errors import DoobTubeError
from .experiment import (DICHOTOMY_COLUMNS, _jsonable, compare_regimes, load_scenario,
                         run_experiment, write_json)


def _common(p, multi=False):
    p.add_argument("--config", required=True, nargs="+" if multi else None,
                   help="scenario YAML file" + ("s" if multi else ""))
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--out", default=None, help="output directory (default: scenario output_dir)")
    p.add_argument("--workers", type=int, default=None,
                   help="worker threads (default: $DOOBTUBE_WORKERS or CPU count)")


def build_parser():
    parser = argparse.ArgumentParser(prog="doobtube", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("classify", help="integral tests and lifetime regime"))
    _common(sub.add_parser("solve-h", help="solve the discrete harmonic h, write h_layers.csv"))
    p = sub.add_parser("simulate", help="solve h and run the main path batch only")
    _common(p)
    p.add_argument("--n-paths", type=int, default=None, help="override n_paths")
    _common(sub.add_parser("experiment", help="full pipeline with every enabled analysis"))
    _common(sub.add_parser("compare", help="dichotomy table over several scenarios"), multi=True)
    return parser


def _finish(rep):
    for flag in rep.flags:
        print(f"flag: {flag}", file=sys.stderr)
    if not rep.ok:
        print(f"error in stage {rep.stage}: {rep.error}", file=sys.stderr)
        return 1
    return 0


def _strip(scn, keep=()):
    return scn.with_overrides(**{k: None for k in scn.enabled if k not in keep})


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "compare":
            scns = [load_scenario(c) for c in args.config]
        else:
            scn = load_scenario(args.config)
    except (DoobTubeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    if args.command == "classify":
        rep = classify(scn.profile).to_dict()
        print(json.dumps(_jsonable(rep), indent=2))
        if args.out:
            write_json(Path(args.out) / "regime.json", rep)
        return 0

    if args.command == "compare":
        rows, reports = compare_regimes(scns, args.out, args.workers, args.seed)
        print(",".join(DICHOTOMY_COLUMNS))
        for r in rows:
            print(",".join("" if r[c] is None else str(r[c]) for c in DICHOTOMY_COLUMNS))
        return max(_finish(rep) for rep in reports)

    if args.command == "solve-h":
        # same pipeline up to the solver; a one-path batch is cheap and keeps
        # report.json shaped like every other run
        scn = _strip(scn).with_overrides(n_paths=1, measure_indices=())
    elif args.command == "simulate":
        scn = _strip(scn)
        if args.n_paths is not None:
            scn = scn.with_overrides(n_paths=args.n_paths)
    rep = run_experiment(scn, args.out, args.workers, args.seed)
    summary = {"scenario": rep.scenario, "status": rep.status, "regime": (rep.regime or {}).get("regime"),
               "verdicts": rep.verdicts, "flags": rep.flags, "outputs": rep.outputs}
    print(json.dumps(_jsonable(summary), indent=2))
    return _finish(rep)


if __name__ == "__main__":
    sys.exit(main())
