"""Graph construction - one experiment node, then the artifact writer."""

import logging

from langgraph.graph import END, START, StateGraph

from dynamics.experiment_config import EXPERIMENTS
from dynamics.nodes.experiment_nodes import ExperimentNodes
from dynamics.state import ExperimentState

logger = logging.getLogger(__name__)

nodes_handler = ExperimentNodes()


def route_from_start(state: ExperimentState) -> str:
    """Route from START based on current state."""
    experiment = state.get("experiment")
    complete = state.get("experiment_complete", False)
    written = state.get("artifacts_written", False)

    logger.debug("Router: experiment=%s, complete=%s, written=%s", experiment, complete, written)

    if not complete:
        if experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {experiment!r}")
        return experiment
    if not written:
        return "write_artifacts"
    return "__end__"


def build_experiment_graph():
    """Build the experiment graph: START -> experiment -> write_artifacts -> END."""
    workflow = StateGraph(ExperimentState)

    for experiment in EXPERIMENTS:
        workflow.add_node(experiment, nodes_handler.node_for(experiment))
    workflow.add_node("write_artifacts", nodes_handler.write_artifacts_node)

    routes = {experiment: experiment for experiment in EXPERIMENTS}
    routes.update({"write_artifacts": "write_artifacts", "__end__": END})
    workflow.add_conditional_edges(START, route_from_start, routes)

    # Every experiment hands straight to the writer - NO LOOPS
    for experiment in EXPERIMENTS:
        workflow.add_edge(experiment, "write_artifacts")
    workflow.add_edge("write_artifacts", END)

    return workflow.compile(debug=False)
