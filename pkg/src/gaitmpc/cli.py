"""Command-line driver.

Subcommands: learn (collect/train cycles), eval (frozen model under a
chosen reward), ablate (one-axis sweeps), report (plot-ready CSVs from a
run directory). Exit codes: 0 success, 1 configuration error, 2 runtime
failure. The output root defaults to ./runs or $GAITMPC_RUNS.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from .config import ConfigError, ExperimentConfig
from .orchestrator import ABLATION_AXES, run_ablate, run_eval, run_learn, run_report


def output_root() -> Path:
    return Path(os.environ.get("GAITMPC_RUNS", "runs"))


def _load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    return ExperimentConfig.load(path)


def _default_run_dir(prefix: str) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    return output_root() / f"{prefix}-{stamp}"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gaitmpc", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="info-level logging")
    sub = p.add_subparsers(dest="command", required=True)

    pl = sub.add_parser("learn", help="run the collect/train loop")
    pl.add_argument("--config", help="experiment config JSON (defaults built in)")
    pl.add_argument("--seed", type=int, help="override the master seed")
    pl.add_argument("--out", help="run directory (default: under the output root)")

    pe = sub.add_parser("eval", help="evaluate a trained run under a reward")
    pe.add_argument("run", help="run directory containing manifest.json and model.ckpt")
    pe.add_argument("--task", default="forward", choices=["forward", "backward", "turn"])
    pe.add_argument("--turn-rate", type=float, default=0.26,
                    help="target yaw rate in rad/s for --task turn")
    pe.add_argument("--episodes", type=int, default=3)
    pe.add_argument("--seed", type=int, help="evaluation seed (default: run's seed)")
    pe.add_argument("--checkpoint", help="explicit checkpoint instead of model.ckpt")

    pa = sub.add_parser("ablate", help="sweep one axis with everything else fixed")
    pa.add_argument("axis", choices=sorted(ABLATION_AXES))
    pa.add_argument("--config", help="experiment config JSON")
    pa.add_argument("--seed", type=int, help="override the master seed")
    pa.add_argument("--out", help="output directory for the sweep")
    pa.add_argument("--source-run", help="reuse this run's model/buffer instead of a prep run")
    pa.add_argument("--episodes-per-cell", type=int, default=5)

    pr = sub.add_parser("report", help="emit plot-ready CSVs from a run directory")
    pr.add_argument("run")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "learn":
            config = _load_config(args.config)
            if args.seed is not None:
                config = config.replaced(master_seed=args.seed)
            out = Path(args.out) if args.out else _default_run_dir("learn")
            run_dir = run_learn(config, out, command="learn")
            print(run_dir)
        elif args.command == "eval":
            report = run_eval(args.run, args.task, episodes=args.episodes,
                              turn_rate=args.turn_rate, seed=args.seed,
                              checkpoint=args.checkpoint)
            print(json.dumps(report, indent=2))
        elif args.command == "ablate":
            config = _load_config(args.config)
            if args.seed is not None:
                config = config.replaced(master_seed=args.seed)
            out = Path(args.out) if args.out else _default_run_dir(f"ablate-{args.axis}")
            table = run_ablate(config, args.axis, out, source_run=args.source_run,
                               episodes_per_cell=args.episodes_per_cell)
            print(table)
        elif args.command == "report":
            for path in run_report(args.run):
                print(path)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failure
        logging.getLogger(__name__).exception("command failed")
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
