# dynamics/experiment_config.py

"""JSON experiment documents: schema, defaults, validation and the resolved echo.

Every violation in a document is collected (with its field path) before
anything is reported, so a single `validate` call lists them all.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from config import Config
from dynamics.ensemble import MEASURED_KINDS, RelaxationKind
from dynamics.errors import ConfigError
from dynamics.fock import MAX_BOSONS, FockConfiguration
from dynamics.models import ModelSpec, _is_int, _is_real

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

EXPERIMENTS = (
    "gap-convergence",
    "lyapunov",
    "decay-curves",
    "trajectories",
    "relaxation-scan",
    "size-scan",
    "bound-scan",
    "bunching-distribution",
    "ipr-scan",
)

DEFAULT_INPUTS = {
    "decay-curves": [[-5, 5], [-1, 0]],
    "relaxation-scan": [[-5, 5], [-1, 0]],
    "trajectories": [[-6, 1, 8], [-1, 0, 1], [-6, -5, 6]],
    "bunching-distribution": [[-6, 1, 8]],
}

CONFIG_KEYS = (
    "version", "experiment", "model", "t_max", "n_samples", "c", "betas", "sizes", "inputs",
    "record_every", "block_length", "block_count", "burn_in", "repeats", "window", "kinds",
    "with_bound", "output_dir", "threads",
)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    model: ModelSpec
    t_max: int = 10_000
    n_samples: int = 100
    c: float = 1e-6
    betas: Tuple[float, ...] = (0.05, 0.1, 0.2, 0.4)
    sizes: Tuple[int, ...] = (10, 20, 40)
    inputs: Tuple[Tuple[int, ...], ...] = ()
    record_every: Optional[int] = None
    block_length: int = 1000
    block_count: int = 1000
    burn_in: int = 10
    repeats: int = 10
    window: int = 100
    kinds: Tuple[str, ...] = tuple(k.value for k in MEASURED_KINDS)
    with_bound: bool = True
    output_dir: Optional[str] = None
    threads: Optional[int] = None
    version: int = SCHEMA_VERSION

    @property
    def relaxation_kinds(self) -> List[RelaxationKind]:
        return [RelaxationKind(k) for k in self.kinds]

    @property
    def n_jobs(self) -> int:
        return self.threads or Config.THREADS

    @property
    def destination(self) -> Path:
        return Path(self.output_dir or Config.OUTPUT_DIR)

    def input_configurations(self, size: Optional[int] = None) -> List[FockConfiguration]:
        return [FockConfiguration(positions, size or self.model.size) for positions in self.inputs]

    def with_overrides(self, seed: Optional[int] = None, output_dir: Optional[str] = None,
                       threads: Optional[int] = None) -> "ExperimentConfig":
        """Command-line overrides; the seed is reduced modulo 2**64."""
        config = self
        if seed is not None:
            config = replace(config, model=config.model.with_seed(seed))
        if output_dir is not None:
            config = replace(config, output_dir=str(output_dir))
        if threads is not None:
            if threads < 1:
                raise ConfigError([f"threads: must be >= 1 (got {threads})"])
            config = replace(config, threads=threads)
        return config

    def to_dict(self) -> Dict[str, Any]:
        """Fully resolved document, suitable for echoing and hashing."""
        document = asdict(self)
        document["model"] = self.model.to_dict()
        document["betas"] = list(self.betas)
        document["sizes"] = list(self.sizes)
        document["inputs"] = [list(p) for p in self.inputs]
        document["kinds"] = list(self.kinds)
        return document

    def data_dict(self) -> Dict[str, Any]:
        """The resolved document without run-placement keys; it determines the data files."""
        document = self.to_dict()
        document.pop("output_dir")
        document.pop("threads")
        return document


# ========== VALIDATION ==========

def _positive_int(document, key, problems, minimum=1, optional=False):
    value = document.get(key)
    if optional and value is None:
        return
    if not _is_int(value) or value < minimum:
        problems.append(f"{key}: must be an integer >= {minimum} (got {value!r})")


def _check_inputs(inputs, model: Optional[ModelSpec], problems: List[str]) -> None:
    if not isinstance(inputs, list):
        problems.append(f"inputs: must be a list of coordinate lists (got {inputs!r})")
        return
    for i, positions in enumerate(inputs):
        where = f"inputs[{i}]"
        if not isinstance(positions, list) or not all(_is_int(x) for x in positions):
            problems.append(f"{where}: must be a list of integer coordinates (got {positions!r})")
            continue
        if not 1 <= len(positions) <= MAX_BOSONS:
            problems.append(f"{where}: boson count must lie in [1, {MAX_BOSONS}] (got {len(positions)})")
            continue
        if model is not None:
            try:
                FockConfiguration(tuple(positions), model.size)
            except ValueError as exc:
                problems.append(f"{where}: {exc}")


def _violations(document: Dict[str, Any]) -> Tuple[List[str], Optional[ModelSpec]]:
    problems = [f"{key}: unknown key" for key in document if key not in CONFIG_KEYS]

    version = document.get("version")
    if isinstance(version, bool) or version != SCHEMA_VERSION:
        problems.append(f"version: must be {SCHEMA_VERSION} (got {document.get('version')!r})")
    experiment = document.get("experiment")
    if not isinstance(experiment, str):
        experiment = repr(experiment)
    if experiment not in EXPERIMENTS:
        problems.append(f"experiment: must be one of {list(EXPERIMENTS)} (got {experiment!r})")

    model = None
    try:
        model = ModelSpec.from_dict(document.get("model", {}))
    except ConfigError as exc:
        problems.extend(exc.violations)

    for key in ("t_max", "n_samples", "block_length", "block_count", "repeats", "window"):
        if key in document:
            _positive_int(document, key, problems)
    if "burn_in" in document:
        _positive_int(document, "burn_in", problems, minimum=0)
    if "record_every" in document:
        _positive_int(document, "record_every", problems, optional=True)
        record_every, t_max = document.get("record_every"), document.get("t_max", ExperimentConfig.t_max)
        if _is_int(record_every) and _is_int(t_max) and record_every > t_max >= 1:
            problems.append(f"record_every: must not exceed t_max={t_max} (got {record_every})")
    if "threads" in document:
        _positive_int(document, "threads", problems, optional=True)

    c = document.get("c", 1e-6)
    if not _is_real(c) or not 0 < c < 1:
        problems.append(f"c: must lie in (0, 1) (got {c!r})")

    betas = document.get("betas", [0.05])
    if not isinstance(betas, list) or not betas:
        problems.append(f"betas: must be a non-empty list (got {betas!r})")
    else:
        for i, beta in enumerate(betas):
            if not _is_real(beta) or not math.isfinite(beta) or beta < 0:
                problems.append(f"betas[{i}]: must be a finite real >= 0 (got {beta!r})")

    sizes = document.get("sizes", [10])
    if not isinstance(sizes, list) or not sizes:
        problems.append(f"sizes: must be a non-empty list (got {sizes!r})")
    else:
        for i, size in enumerate(sizes):
            if not _is_int(size) or size < 4 or size % 2:
                problems.append(f"sizes[{i}]: must be an even integer >= 4 (got {size!r})")

    inputs = document.get("inputs", DEFAULT_INPUTS.get(experiment, []))
    _check_inputs(inputs, model, problems)

    kinds = document.get("kinds", [k.value for k in MEASURED_KINDS])
    measured = [k.value for k in MEASURED_KINDS]
    if not isinstance(kinds, list) or not kinds:
        problems.append(f"kinds: must be a non-empty list (got {kinds!r})")
    else:
        for i, kind in enumerate(kinds):
            if kind not in measured:
                problems.append(f"kinds[{i}]: must be one of {measured} (got {kind!r})")
        needs_pair = RelaxationKind.TAU_X.value in kinds and experiment in ("relaxation-scan", "decay-curves")
        if needs_pair and isinstance(inputs, list) and len(inputs) < 2:
            problems.append("inputs: tauX compares two input configurations; give at least two")

    if experiment in ("trajectories", "bunching-distribution") and isinstance(inputs, list) and not inputs:
        problems.append(f"inputs: {experiment} needs at least one input configuration")

    if not isinstance(document.get("with_bound", True), bool):
        problems.append(f"with_bound: must be true or false (got {document['with_bound']!r})")
    output_dir = document.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        problems.append(f"output_dir: must be a string path (got {output_dir!r})")
    return problems, model


def parse(document: Any) -> ExperimentConfig:
    """ExperimentConfig from a decoded JSON document; raises ConfigError listing every violation."""
    if not isinstance(document, dict):
        raise ConfigError(["document: must be a JSON object"])
    problems, model = _violations(document)
    if problems:
        raise ConfigError(problems)

    experiment = document["experiment"]
    defaults = ExperimentConfig(experiment=experiment, model=model)
    inputs = document.get("inputs", DEFAULT_INPUTS.get(experiment, []))
    return replace(
        defaults,
        t_max=document.get("t_max", defaults.t_max),
        n_samples=document.get("n_samples", defaults.n_samples),
        c=float(document.get("c", defaults.c)),
        betas=tuple(float(b) for b in document.get("betas", defaults.betas)),
        sizes=tuple(int(s) for s in document.get("sizes", defaults.sizes)),
        inputs=tuple(tuple(int(x) for x in p) for p in inputs),
        record_every=document.get("record_every"),
        block_length=document.get("block_length", defaults.block_length),
        block_count=document.get("block_count", defaults.block_count),
        burn_in=document.get("burn_in", defaults.burn_in),
        repeats=document.get("repeats", defaults.repeats),
        window=document.get("window", defaults.window),
        kinds=tuple(document.get("kinds", defaults.kinds)),
        with_bound=document.get("with_bound", defaults.with_bound),
        output_dir=document.get("output_dir"),
        threads=document.get("threads"),
    )


def load(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read ({exc.strerror or exc})"]) from exc
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from exc
    config = parse(document)
    logger.info("Loaded %s experiment from %s", config.experiment, path)
    return config


def validation_report(path) -> Dict[str, Any]:
    """{"valid": bool, "violations": [...]} without running anything."""
    try:
        load(path)
    except ConfigError as exc:
        return {"valid": False, "violations": exc.violations}
    return {"valid": True, "violations": []}


__all__ = [
    "EXPERIMENTS",
    "ExperimentConfig",
    "load",
    "parse",
    "validation_report",
]
