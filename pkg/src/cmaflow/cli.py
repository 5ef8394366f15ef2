"""Command-line entry point.

Subcommands ``solve-elliptic``, ``run-flow``, ``monitor`` and
``experiment {stationarity,cauchy,smoothing}``; each reads a JSON config and
writes ``report.json`` (plus series and snapshots) to ``--out``. The exit
code is 0 iff every verdict passes, 1 otherwise and 2 for bad input.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .harness import ConfigError, ExperimentConfig, run_config
from .snapshot import SnapshotError

_SINGLE = {"solve-elliptic": "elliptic", "run-flow": "flow", "monitor": "monitor"}
_EXPERIMENTS = ("stationarity", "cauchy", "smoothing")


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must fit in an unsigned 64-bit integer, got {v}")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="JSON configuration file")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--seed", type=_u64, help="override the configured seed")
    p.add_argument("--threads", type=_positive, help="worker threads for independent runs")
    p.add_argument("--emit-plots-data", action="store_true",
                   help="also write CSVs shaped for external plotting")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmaflow",
                                     description="Monge-Ampère flow experiments on flat tori")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [("solve-elliptic", "solve one elliptic problem"),
                        ("run-flow", "integrate the flow from an initial potential"),
                        ("monitor", "evaluate estimate monitors on snapshot files")]:
        _common(sub.add_parser(name, help=help_))
    exp = sub.add_parser("experiment", help="run a verification experiment")
    exp.add_argument("kind", choices=_EXPERIMENTS)
    _common(exp)
    return parser


def load_config(args) -> ExperimentConfig:
    kind = args.kind if args.command == "experiment" else _SINGLE[args.command]
    d = {}
    if args.config is not None:
        try:
            d = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"{args.config}: {err}") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{args.config}: top level must be an object")
    if d.get("kind", kind) != kind:
        raise ConfigError(f"config kind {d['kind']!r} does not match subcommand ({kind!r})")
    d["kind"] = kind
    if args.seed is not None:
        d["seed"] = args.seed
    if args.threads is not None:
        d["threads"] = args.threads
    if args.out is not None:
        d["out"] = str(args.out)
    if args.emit_plots_data:
        d["emit_plots_data"] = True
    return ExperimentConfig.from_dict(d)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        report = run_config(cfg)
    except (ConfigError, SnapshotError, OSError) as err:
        print(f"cmaflow: error: {err}", file=sys.stderr)
        return 2
    for name, v in report.verdicts.items():
        margin = "waived" if v.waived else f"margin {v.margin:.3e}"
        print(f"{'PASS' if v.passed else 'FAIL'} {name}: {v.inequality} ({margin})")
    if report.status != "complete":
        print(f"INCOMPLETE: {report.error}")
    if cfg.out is not None:
        print(f"report: {Path(cfg.out) / 'report.json'}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
