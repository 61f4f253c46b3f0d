"""Command-line entry point.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 numerical
failure (divergence, Jensen check), 4 I/O failure or corrupt snapshot.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import runner
from .metrics import rows_to_csv
from .config import ConfigError, load_config
from .data import DataFormatError
from .trainer import SnapshotError, TrainingDivergence

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("sebays")


def _add_config(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", type=Path, help="YAML run configuration")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, e.g. trainer.M=5 (repeatable)")
    p.add_argument("--out", type=Path, default=None, help="run directory, or target file for schedule-dump")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sebays", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_config(sub.add_parser("train", help="train the sequential ensemble and write snapshots"))

    p = sub.add_parser("eval", help="evaluate the snapshots of a run directory")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override an eval.* entry")

    p = sub.add_parser("diversity", help="pairwise disagreement and KL of a run's learners")
    p.add_argument("run_dir", type=Path)

    p = sub.add_parser("sweep", help="train and evaluate along one axis")
    _add_config(p)
    p.add_argument("--axis", required=True, choices=runner.SWEEP_AXES)
    p.add_argument("--values", required=True, help="comma-separated values")

    p = sub.add_parser("schedule-dump", help="print the per-epoch learning rate of every schedule")
    _add_config(p)
    return parser


def _run(args) -> None:
    if args.command == "train":
        cfg = load_config(args.config, args.overrides)
        out = runner.cmd_train(cfg, args.out)
        print(out)
    elif args.command == "eval":
        bad = [o for o in args.overrides if not o.startswith("eval.")]
        if bad:
            raise ConfigError(f"eval only accepts eval.* overrides, got {bad}")
        result = runner.cmd_eval(args.run_dir, args.overrides)
        ens = [r for r in result["rows"] if r["model"] == "ensemble"]
        print(json.dumps(ens, sort_keys=True, indent=2))
    elif args.command == "diversity":
        print(json.dumps(runner.cmd_diversity(args.run_dir), sort_keys=True))
    elif args.command == "sweep":
        cfg = load_config(args.config, args.overrides)
        values = [v.strip() for v in args.values.split(",") if v.strip()]
        rows = runner.cmd_sweep(cfg, args.axis, values, args.out)
        print(rows_to_csv(rows), end="")
    else:
        cfg = load_config(args.config, args.overrides)
        text = runner.cmd_schedule_dump(cfg)
        if args.out is not None:
            args.out.parent.mkdir(parents=True, exist_ok=True)
            args.out.write_text(text)
        else:
            sys.stdout.write(text)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _run(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (TrainingDivergence, runner.JensenViolation, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except (OSError, DataFormatError, SnapshotError) as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except ValueError as exc:
        log.error("invalid input: %s", exc)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
