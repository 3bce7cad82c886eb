"""Command-line entry point: ``edgepower {steady,converge,compare,sweep,fleet} --config FILE``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ._validation import EdgePowerError
from .config import ExperimentConfig, load_config
from .experiments import COMMANDS

log = logging.getLogger("edgepower")

U64_MAX = 2**64 - 1


def _seed(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= value <= U64_MAX:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgepower",
        description="Power-state Markov models, Monte Carlo checks and power-policy experiments for edge nodes.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "steady": "stationary distribution, expected power and residual",
        "converge": "Monte Carlo convergence study with confidence intervals",
        "compare": "run several power policies on one workload trace",
        "sweep": "sensitivity sweep over one transition probability",
        "fleet": "multi-node fleet under each scheduling strategy",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", required=True, type=Path, help="YAML experiment config")
        p.add_argument("--seed", type=_seed, default=None, help="override simulation.seed")
        p.add_argument("--out", type=Path, default=None, help="directory for CSV and summary files (default: results/<command>)")
    return parser


def _print_report(command: str, cfg: ExperimentConfig, report) -> None:
    if command == "steady":
        pi = " ".join(f"{p:.6f}" for p in report.pi)
        print(f"pi = [{pi}]")
        print(f"expected power = {report.watts:.6f} W (residual {report.residual:.3e})")
    elif command == "converge":
        for (step, tvd), mean in zip(report.checkpoints, report.mean_tvd):
            print(f"{step:>9d} steps  tvd {tvd:.6f}  mean over {report.replicas} replicas {mean:.6f}")
    elif command == "compare":
        for r in report.results:
            print(
                f"{r.name:<14} {r.run.energy_joules:12.1f} J  overload {r.run.overload_fraction:.4f}  "
                f"late {r.run.late_service_fraction:.4f}  energy delta {100 * r.energy_reduction:+.1f}%"
            )
    elif command == "sweep":
        for p in report:
            line = f"{p.value:.4f}  {p.watts:.6f} W" if p.status == "ok" else f"{p.value:.4f}  {p.status}"
            print(line)
    elif command == "fleet":
        for s, r in report.items():
            print(f"{s:<18} total {r.total_energy:14.1f} J  cv {r.disparity_cv:.4f}  unserved {r.unserved_total}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    out = args.out if args.out is not None else Path("results") / args.command
    try:
        cfg = load_config(args.config).with_seed(args.seed)
        log.info("running %s from %s (seed %d)", args.command, cfg.source, cfg.simulation.seed)
        report = COMMANDS[args.command](cfg, out=out)
    except EdgePowerError as exc:
        print(f"edgepower {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"edgepower {args.command}: error: {exc}", file=sys.stderr)
        return 3
    _print_report(args.command, cfg, report)
    log.info("wrote results to %s", out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
