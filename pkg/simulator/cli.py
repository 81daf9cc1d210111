#!/usr/bin/env python3
"""Command-line entry point for the RIS-assisted OTFS simulator.

    python simulator/cli.py gain-sweep --config configs/gain_sweep_desk.yaml
    python simulator/cli.py ber --config configs/ber_unequal_desk.yaml --workers 4

Exit status: 0 on success, 2 for invalid input or configuration, 1 otherwise.
"""

from __future__ import annotations

import argparse
import logging
import sys

from config import ENV_LOG_LEVEL, ENV_WORKERS, env_setting, parse_config
from experiments import RUNNERS, realize_channel
from phase_optimizer import gram_matrix, optimize_phases, write_trace_csv
from results import emit_results

logger = logging.getLogger("cli")

SUBCOMMANDS = {
    "gain-sweep": "gain_sweep",
    "convergence": "convergence",
    "ber": "ber_sweep",
    "tdl": "tdl",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cli.py", description="RIS-assisted OTFS downlink experiments"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--seed", type=int, help="master seed (overrides run.master_seed)")
        p.add_argument("--out", help="output CSV path (default: results/<name>.csv)")
        p.add_argument("--realizations", type=int, help="overrides run.realizations")
        p.add_argument("--workers", type=int, help=f"worker processes (env {ENV_WORKERS}, default 1)")
        p.add_argument("--log-level", help=f"logging level (env {ENV_LOG_LEVEL}, default INFO)")
        if name == "convergence":
            p.add_argument("--trace-out", help="also write the first realization's trace as CSV")
    return parser


def _write_first_trace(cfg, path: str) -> None:
    _, mats = realize_channel(cfg, cfg.L_values[0], 0)
    _, trace = optimize_phases(gram_matrix(mats), None, cfg.epsilon, cfg.max_iterations)
    write_trace_csv(trace, path)
    logger.info("Wrote optimizer trace to %s", path)


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        level = str(env_setting(args.log_level, ENV_LOG_LEVEL, "INFO")).upper()
        logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
        workers = int(env_setting(args.workers, ENV_WORKERS, 1))
        if workers < 1:
            raise ValueError(f"workers must be >= 1, got {workers}")

        cfg = parse_config(
            args.config,
            {
                "scenario": SUBCOMMANDS[args.command],
                "run.master_seed": args.seed,
                "run.realizations": args.realizations,
            },
        )
        logger.info("Running %s (%s) with %d worker(s)", cfg.name, cfg.scenario, workers)
        table = RUNNERS[cfg.scenario](cfg, workers)
        emit_results(table, args.out or f"results/{cfg.name}.csv")
        if getattr(args, "trace_out", None):
            _write_first_trace(cfg, args.trace_out)
    except ValueError as e:
        logger.error("%s", e)
        return 2
    except Exception:
        logger.exception("Run failed")
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
