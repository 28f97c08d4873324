# utils/artifacts.py

"""Result files: config hashing, CSV and JSON writers, and the output-directory lock."""

import csv
import hashlib
import json
import logging
import math
import os
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from dynamics.errors import OutputLockedError

logger = logging.getLogger(__name__)

LOCK_NAME = ".lock"


def canonical_json(document: Any) -> str:
    return json.dumps(to_jsonable(document), sort_keys=True, separators=(",", ":"))


def config_hash(document: Any) -> str:
    return hashlib.sha256(canonical_json(document).encode("utf-8")).hexdigest()


def to_jsonable(value: Any) -> Any:
    """Plain JSON types; non-finite floats become the strings "inf", "-inf", "nan"."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isfinite(value):
            return value
        return "nan" if math.isnan(value) else ("inf" if value > 0 else "-inf")
    if isinstance(value, (complex, np.complexfloating)):
        return [to_jsonable(value.real), to_jsonable(value.imag)]
    return value


def _cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence[Any]], digest: str) -> Path:
    """CSV with a leading `# config_hash=` line, a header row and RFC-4180 quoting."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        handle.write(f"# config_hash={digest}\r\n")
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    logger.debug("Wrote %s", path)
    return path


def write_json(path, payload: Any) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        json.dump(to_jsonable(payload), handle, indent=2, sort_keys=True)
        handle.write("\n")
    logger.debug("Wrote %s", path)
    return path


class OutputLock:
    """Exclusive ownership of an output directory for the lifetime of a run."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.path = self.directory / LOCK_NAME
        self._held = False

    def __enter__(self) -> "OutputLock":
        self.directory.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise OutputLockedError(self.directory) from None
        with os.fdopen(fd, "w") as handle:
            handle.write(str(os.getpid()))
        self._held = True
        return self

    def __exit__(self, exc_type, exc, tb):
        if self._held:
            try:
                self.path.unlink()
            except FileNotFoundError:
                logger.warning("Lock file %s vanished before release", self.path)
            self._held = False
        return False
