"""State definition for the experiment workflow."""

import time
from typing import Any, Dict, List, Optional, TypedDict

from dynamics.experiment_config import ExperimentConfig
from utils.artifacts import config_hash


class ExperimentState(TypedDict):
    """State carried from the experiment node to the artifact writer."""

    # ========== CONFIGURATION ==========
    config: ExperimentConfig
    experiment: str
    config_hash: str

    # ========== RESULTS ==========
    tables: Dict[str, Dict[str, Any]]  # file name -> {"header": [...], "rows": [...]}
    results: Dict[str, Any]
    seeds: Dict[str, Any]

    # ========== PROGRESS ==========
    experiment_complete: bool
    artifacts_written: bool
    written: List[str]

    # ========== TIMING ==========
    start_time: Optional[float]
    wall_time: Optional[float]


def create_initial_state(config: ExperimentConfig) -> ExperimentState:
    """
    Create the initial workflow state for one experiment run.

    Args:
        config: Validated experiment configuration (overrides already applied)

    Returns:
        Initialized ExperimentState
    """
    return {
        # Configuration
        "config": config,
        "experiment": config.experiment,
        "config_hash": config_hash(config.data_dict()),

        # Results
        "tables": {},
        "results": {},
        "seeds": {},

        # Progress
        "experiment_complete": False,
        "artifacts_written": False,
        "written": [],

        # Timing
        "start_time": time.time(),
        "wall_time": None,
    }


def get_state_summary(state: ExperimentState) -> str:
    """
    Generate a human-readable summary of the current state.

    Args:
        state: Current experiment state

    Returns:
        Formatted state summary string
    """
    config = state.get("config")
    model = config.model if config is not None else None
    wall_time = state.get("wall_time")
    return f"""
╔═══════════════════════════════════════════════════════════════╗
│                    EXPERIMENT STATE SUMMARY                    │
╚═══════════════════════════════════════════════════════════════╝

Experiment: {state.get('experiment', 'N/A')}
Config hash: {state.get('config_hash', 'N/A')[:16]}
Model: {f'{model.kind.value} X={model.size} beta={model.beta:g} seed={model.seed}' if model else 'N/A'}

─────────────────────────────────────────────────────────────────

RESULTS:
  Tables: {', '.join(sorted(state.get('tables', {}))) or 'none'}
  Complete: {'✓' if state.get('experiment_complete') else '✗'}

OUTPUT:
  Written: {len(state.get('written', []))} files
  Complete: {'✓' if state.get('artifacts_written') else '✗'}
  Wall time: {f'{wall_time:.2f}s' if wall_time is not None else 'N/A'}

╚═══════════════════════════════════════════════════════════════╝
"""


# Export the State type alias for convenience
State = ExperimentState
