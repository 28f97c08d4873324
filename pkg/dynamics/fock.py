# dynamics/fock.py

"""n-boson output statistics of a single-particle evolution matrix.

Output configurations are enumerated exhaustively (multisets of sites); the
weight of each is |Per W|^2 / prod n_x^out!, with W the n x n submatrix of the
evolution matrix picked by output rows and input columns, repeated according to
occupation. Weights are normalized at the end, so the global scale of V never
matters and the core of a ScaledProduct can be used directly.
"""

import logging
import math
from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np

from dynamics.errors import EnumerationLimitError, NumericalError
from utils.linalg import ScaledProduct
from utils.permanent import batched_permanent

logger = logging.getLogger(__name__)

MAX_BOSONS = 6
MAX_CONFIGURATIONS = 1_000_000
_BATCH = 65_536


@dataclass(frozen=True)
class SiteGrid:
    """Sites 0..X-1 carry coordinates x = index - X/2 + 1, i.e. x in [-X/2+1, X/2]."""

    size: int

    def __post_init__(self):
        if self.size < 2 or self.size % 2:
            raise ValueError(f"grid size must be even and >= 2, got {self.size}")

    @property
    def coordinates(self) -> np.ndarray:
        return np.arange(self.size) - self.size // 2 + 1

    def coordinate(self, index: int) -> int:
        if not 0 <= index < self.size:
            raise ValueError(f"site index {index} outside grid of size {self.size}")
        return index - self.size // 2 + 1

    def index(self, x: int) -> int:
        i = x + self.size // 2 - 1
        if not 0 <= i < self.size:
            raise ValueError(
                f"coordinate {x} outside [{-self.size // 2 + 1}, {self.size // 2}]"
            )
        return i


@dataclass(frozen=True)
class FockConfiguration:
    positions: Tuple[int, ...]
    size: int

    def __post_init__(self):
        grid = SiteGrid(self.size)
        positions = tuple(sorted(int(x) for x in self.positions))
        for x in positions:
            grid.index(x)
        object.__setattr__(self, "positions", positions)

    @classmethod
    def from_indices(cls, indices: Iterable[int], size: int) -> "FockConfiguration":
        grid = SiteGrid(size)
        return cls(tuple(grid.coordinate(int(i)) for i in indices), size)

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def indices(self) -> np.ndarray:
        grid = SiteGrid(self.size)
        return np.array([grid.index(x) for x in self.positions], dtype=np.int64)

    def occupations(self) -> np.ndarray:
        return np.bincount(self.indices, minlength=self.size)

    def label(self) -> str:
        return ",".join(str(x) for x in self.positions)


def _factorial_products(outputs: np.ndarray) -> np.ndarray:
    """prod_x n_x! for each sorted row of site indices."""
    result = np.ones(len(outputs))
    run = np.ones(len(outputs))
    for q in range(1, outputs.shape[1]):
        run = np.where(outputs[:, q] == outputs[:, q - 1], run + 1, 1.0)
        result *= run
    return result


@dataclass(frozen=True)
class OutputDistribution:
    size: int
    n: int
    outputs: np.ndarray
    probs: np.ndarray

    def configurations(self) -> List[FockConfiguration]:
        return [FockConfiguration.from_indices(row, self.size) for row in self.outputs]

    def labels(self) -> List[str]:
        coordinates = SiteGrid(self.size).coordinates
        return [",".join(str(x) for x in coordinates[row]) for row in self.outputs]

    def total_variation(self, other: "OutputDistribution") -> float:
        if (self.size, self.n) != (other.size, other.n):
            raise ValueError("distributions over different configuration spaces")
        return 0.5 * float(np.sum(np.abs(self.probs - other.probs)))

    def rows(self, t: int) -> List[Tuple[int, str, float]]:
        return [(t, label, float(p)) for label, p in zip(self.labels(), self.probs)]


def enumerate_outputs(size: int, n: int) -> np.ndarray:
    """All C(X+n-1, n) sorted output site multisets, in lexicographic order."""
    if n > MAX_BOSONS:
        raise EnumerationLimitError(f"n <= {MAX_BOSONS}", n)
    count = math.comb(size + n - 1, n)
    if count > MAX_CONFIGURATIONS:
        raise EnumerationLimitError(f"C(X+n-1, n) <= {MAX_CONFIGURATIONS}", count)
    rows = np.fromiter(
        (i for combo in combinations_with_replacement(range(size), n) for i in combo),
        dtype=np.int64,
        count=count * n,
    )
    return rows.reshape(count, n)


def _as_matrix(source: Union[ScaledProduct, np.ndarray]) -> np.ndarray:
    return source.core if isinstance(source, ScaledProduct) else np.asarray(source, dtype=np.complex128)


def output_distribution(source: Union[ScaledProduct, np.ndarray],
                        inputs: FockConfiguration) -> OutputDistribution:
    m = _as_matrix(source)
    size = m.shape[0]
    if inputs.size != size:
        raise ValueError(f"input configuration on grid {inputs.size} for a {size}-site matrix")
    outputs = enumerate_outputs(size, inputs.n)
    columns = inputs.indices

    permanents = np.empty(len(outputs), dtype=np.complex128)
    for start in range(0, len(outputs), _BATCH):
        chunk = outputs[start:start + _BATCH]
        stack = m[chunk[:, :, None], columns[None, None, :]]
        permanents[start:start + _BATCH] = batched_permanent(stack)

    weights = np.abs(permanents) ** 2 / _factorial_products(outputs)
    total = float(np.sum(weights))
    if not total > 0 or not math.isfinite(total):
        raise NumericalError(f"output weights sum to {total}")
    return OutputDistribution(size, inputs.n, outputs, weights / total)


def mean_x_squared(dist: OutputDistribution) -> float:
    x2 = SiteGrid(dist.size).coordinates.astype(np.float64) ** 2
    per_config = x2[dist.outputs].sum(axis=1) / dist.n
    return float(np.dot(dist.probs, per_config))


def ipr(mode: Sequence[complex]) -> float:
    weights = np.abs(np.asarray(mode)) ** 2
    total = float(np.sum(weights))
    if total == 0.0:
        raise ValueError("inverse participation ratio of a zero vector")
    return float(np.sum(weights ** 2) / total ** 2)


def bunching_prediction(mode: Sequence[complex], n: int) -> OutputDistribution:
    """Site statistics of n bosons all in `mode`: n!/prod n_x! prod |phi_x|^(2 n_x)."""
    weights = np.abs(np.asarray(mode)) ** 2
    total = float(np.sum(weights))
    if total == 0.0:
        raise ValueError("bunching prediction for a zero mode")
    weights = weights / total
    outputs = enumerate_outputs(len(weights), n)
    probs = math.factorial(n) / _factorial_products(outputs) * np.prod(weights[outputs], axis=1)
    return OutputDistribution(len(weights), n, outputs, probs / probs.sum())
