"""Command-line entry point.

    qp4link run --scenario PATH --seed N [--cycles N] [--stop-after-successes K]
                [--out PATH] [--format json|csv-summary] [--figures DIR]
    qp4link validate --scenario PATH

``--scenario`` also accepts the name of a shipped scenario (``ideal``,
``lossy``, ``asymmetric``, ``mismatch``, ``misaligned``).

Exit codes: 0 success, 1 usage error, 2 invalid scenario, 3 trap budget
exceeded.
"""

from __future__ import annotations

import argparse
import sys
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigError, Scenario, load_scenario
from .harness import Simulation, TrapBudgetExceeded, emit_report

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_TRAPS = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage, which collides with ConfigError
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def shipped_scenarios():
    return sorted(p.name[:-5] for p in resources.files("qp4link.scenarios").iterdir()
                  if p.name.endswith(".toml"))


def _resolve(spec: str) -> Scenario:
    if not Path(spec).exists() and spec in shipped_scenarios():
        spec = str(resources.files("qp4link.scenarios") / f"{spec}.toml")
    return load_scenario(spec)


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError(f"{text} is not an unsigned 64-bit integer")
    return value


def _count(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"{text} must be non-negative")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qp4link", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="simulate a scenario and write a metrics report")
    run.add_argument("--scenario", required=True, help="scenario file or shipped scenario name")
    run.add_argument("--seed", required=True, type=_u64)
    run.add_argument("--cycles", type=_count, help="override run.max_cycles")
    run.add_argument("--stop-after-successes", type=_count, metavar="K")
    run.add_argument("--out", type=Path, help="report path (default: stdout)")
    run.add_argument("--format", choices=("json", "csv-summary"), default="json")
    run.add_argument("--figures", type=Path, metavar="DIR", help="also render PNG figures into DIR")

    check = sub.add_parser("validate", help="check a scenario without running it")
    check.add_argument("--scenario", required=True, help="scenario file or shipped scenario name")
    return parser


def _run(args) -> int:
    scenario = _resolve(args.scenario)
    changes = {}
    if args.cycles is not None:
        changes["max_cycles"] = args.cycles
    if args.stop_after_successes is not None:
        changes["stop_after_successes"] = args.stop_after_successes
    if changes:
        scenario = scenario.with_run(**changes)
    sim = Simulation(scenario, seed=args.seed, keep_logs=args.figures is not None)
    report = sim.run()
    blob = emit_report(report, args.format)
    if args.out is None:
        sys.stdout.buffer.write(blob)
        sys.stdout.flush()
    else:
        args.out.write_bytes(blob)
    if args.figures is not None:
        from .plotting import render_figures

        for path in render_figures(report, sim.logs, args.figures):
            print(f"wrote {path}", file=sys.stderr)
    return EXIT_OK


def _validate(args) -> int:
    scenario = _resolve(args.scenario)
    print(f"{scenario.name}: ok ({scenario.digest()})")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    try:
        return _run(args) if args.command == "run" else _validate(args)
    except ConfigError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrapBudgetExceeded as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return EXIT_TRAPS


if __name__ == "__main__":
    sys.exit(main())
