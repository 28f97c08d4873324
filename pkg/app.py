# app.py - command-line front end: validate a config, or run it through the experiment graph

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from config import Config
from dynamics.errors import ConfigError, LabError, NumericalError, OutputLockedError
from dynamics.experiment_config import load, validation_report
from dynamics.graph_builder import build_experiment_graph
from dynamics.state import ExperimentState, create_initial_state, get_state_summary
from utils.artifacts import OutputLock, to_jsonable, write_json
from utils.rng import SEED_MODULUS

logger = logging.getLogger("app")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


# ==================== LOGGING ====================
def configure_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="[%(levelname)s] %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


# ==================== ARGUMENTS ====================
def _seed(value: str) -> int:
    seed = int(value, 0)
    if not 0 <= seed < SEED_MODULUS:
        raise argparse.ArgumentTypeError(f"seed must lie in [0, 2**64), got {value}")
    return seed


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="app.py",
        description="Noisy non-unitary free-boson experiments: spectral gaps, relaxation times, bunching.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run an experiment and write its artifacts")
    run.add_argument("config", type=Path, help="experiment JSON document")
    run.add_argument("--out", type=Path, default=None, help="output directory (overrides the config)")
    run.add_argument("--threads", type=int, default=None, help="ensemble worker processes")
    run.add_argument("--seed", type=_seed, default=None, help="base seed in [0, 2**64) (overrides the config)")

    validate = commands.add_parser("validate", help="check a config without running it")
    validate.add_argument("config", type=Path, help="experiment JSON document")
    return parser


# ==================== ERROR RECORDS ====================
def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    return EXIT_FAILURE


def error_record(exc: BaseException) -> Dict:
    record = {
        "status": "error",
        "error": type(exc).__name__,
        "message": str(exc),
        "exit_code": exit_code_for(exc),
    }
    for attribute in ("violations", "residual", "iterations", "bound", "value", "path"):
        if hasattr(exc, attribute):
            record[attribute] = getattr(exc, attribute)
    return to_jsonable(record)


def report_error(exc: BaseException, destination: Optional[Path] = None) -> int:
    """Print the JSON error record on stderr and drop error.json in the output directory if possible."""
    record = error_record(exc)
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    if destination is not None and not isinstance(exc, OutputLockedError):
        try:
            destination.mkdir(parents=True, exist_ok=True)
            write_json(destination / "error.json", record)
        except OSError as write_error:
            logger.warning("Could not write error record to %s: %s", destination, write_error)
    return record["exit_code"]


# ==================== GRAPH STREAM HELPER ====================
def process_graph_stream(state: ExperimentState) -> ExperimentState:
    """Stream the experiment graph, folding every node's update back into the state."""
    graph = build_experiment_graph()
    for event in graph.stream(state):
        for node_name, update in event.items():
            logger.debug("Node finished: %s", node_name)
            if update:
                state.update(update)
    return state


# ==================== COMMANDS ====================
def run_command(args: argparse.Namespace) -> int:
    destination = None
    try:
        config = load(args.config).with_overrides(seed=args.seed, output_dir=args.out, threads=args.threads)
        destination = config.destination
        with OutputLock(destination):
            state = process_graph_stream(create_initial_state(config))
    except LabError as exc:
        return report_error(exc, destination)
    except (np.linalg.LinAlgError, ArithmeticError) as exc:
        return report_error(NumericalError(f"{type(exc).__name__}: {exc}"), destination)
    except ValueError as exc:
        return report_error(ConfigError([str(exc)]), destination)
    except Exception as exc:
        logger.exception("Run failed")
        return report_error(exc, destination)

    logger.info(get_state_summary(state))
    print(json.dumps({
        "status": "ok",
        "experiment": state["experiment"],
        "config_hash": state["config_hash"],
        "output_dir": str(destination),
        "files": [Path(p).name for p in state["written"]],
    }, sort_keys=True))
    return EXIT_OK


def validate_command(args: argparse.Namespace) -> int:
    report = validation_report(args.config)
    if report["valid"]:
        print("valid")
        return EXIT_OK
    print("invalid")
    for violation in report["violations"]:
        print(f"  - {violation}")
    return EXIT_CONFIG


# ==================== MAIN ====================
def main(argv: Optional[List[str]] = None) -> int:
    """Main application entry point"""
    args = build_parser().parse_args(argv)
    try:
        Config.validate()
    except ValueError as exc:
        problems = [line.lstrip("- ") for line in str(exc).splitlines()[1:]]
        return report_error(ConfigError(problems or [str(exc)]))
    configure_logging(Config.LOG_LEVEL)

    if args.command == "validate":
        return validate_command(args)
    return run_command(args)


if __name__ == "__main__":
    sys.exit(main())
