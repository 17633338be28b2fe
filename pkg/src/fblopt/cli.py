"""Command-line front end.

Exit codes: 0 success, 2 validation/usage, 3 infeasible, 4 numerical or
resource failure, 5 I/O.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import bench
from .errors import FblError

EXIT_IO = 5

COMMANDS = {
    "eval": "eval",
    "region": "region_map",
    "allocate": "allocate",
    "fading": "fading",
    "relay": "relay",
    "compare": "compare",
}
FIGURES = ("fig1", "fig2", "fig5", "fig6", "fig8")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", help="JSON scenario file (defaults apply when omitted)")
    p.add_argument("--out", help="CSV output path (stdout when omitted)")
    p.add_argument("--seed", type=int, help="seed for every random draw")
    p.add_argument("--phi", type=int, help="number of fading quantization states")
    p.add_argument("--cap", type=int, help="enumeration cap for the integer solver")
    p.add_argument("--timing", action="store_true",
                   help="add wall-time columns (output is then not reproducible)")
    p.add_argument("-v", "--verbose", action="store_true", help="log one line per row to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fblopt",
        description="Short-packet error model, convexity checks and resource allocation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, tag in COMMANDS.items():
        _common(sub.add_parser(name, help=f"run the {tag} experiment"))
    exp = sub.add_parser("experiment", help="run a named figure experiment")
    exp.add_argument("figure", choices=FIGURES)
    _common(exp)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on bad usage, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    tag = args.figure if args.command == "experiment" else COMMANDS[args.command]
    try:
        if args.scenario:
            scenario = bench.load_scenario(args.scenario, experiment=tag)
        else:
            scenario = bench.default_scenario(tag)
        if args.phi is not None and args.phi < 1:
            raise bench.ValidationError("must be >= 1", "--phi")
        if args.cap is not None and args.cap < 1:
            raise bench.ValidationError("must be >= 1", "--cap")
        rows = bench.run_experiment(scenario, timing=args.timing, phi=args.phi,
                                    cap=args.cap, seed=args.seed)
        text = bench.format_csv(rows)
        out = args.out or scenario.output
        if out:
            with open(out, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
    except FblError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    failed = [r for r in rows if r.get("status") == "error"]
    if rows and len(failed) == len(rows):
        print(f"error: every row failed; first: {failed[0]['error']}", file=sys.stderr)
        return _code_for(failed[0]["error"])
    return 0


def _code_for(message: str) -> int:
    from . import errors

    name = message.split(":", 1)[0]
    cls = getattr(errors, name, None)
    return getattr(cls, "exit_code", 1)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
