# dynamics/models.py

"""One-step evolution matrices Q_t = G_t U of the two loss models.

Sites are paired into two-site cells in two staggered ways: zeta-cells
(2k, 2k+1) and eta-cells (2k+1, 2k+2 mod X), with periodic wrap.

BrickworkLoss: U is one layer of identical 2x2 blocks on zeta-cells; the noise
layer is exp(beta z sigma_1) on every eta-cell, one z per eta-cell.
DiagonalLoss:  U = U2 U1 with U1 on zeta-cells and U2 on eta-cells; the noise
layer is diag(exp(beta z_x)), one z per site.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from dynamics.errors import ConfigError
from utils.linalg import PairLayers, ScaledProduct, advance_rows
from utils.rng import SEED_MODULUS, NoiseStream, noise_block

logger = logging.getLogger(__name__)


class ModelKind(str, Enum):
    BRICKWORK = "BrickworkLoss"
    DIAGONAL = "DiagonalLoss"


ANGLE_COUNT = {ModelKind.BRICKWORK: 3, ModelKind.DIAGONAL: 6}

ANGLE_PRESETS: Dict[str, Dict[ModelKind, Tuple[float, ...]]] = {
    "default": {
        ModelKind.BRICKWORK: (0.37 * math.pi, 0.19 * math.pi, 0.25 * math.pi),
        ModelKind.DIAGONAL: (
            0.33 * math.pi, 0.41 * math.pi, 0.25 * math.pi,
            0.22 * math.pi, 0.13 * math.pi, 0.25 * math.pi,
        ),
    },
    # lossless-limit couplers of the earlier non-unitary boson-sampling model
    "balanced": {
        ModelKind.BRICKWORK: (0.0, math.pi / 2, math.pi / 4),
        ModelKind.DIAGONAL: (0.0, math.pi / 2, math.pi / 4, 0.0, math.pi / 2, math.pi / 4),
    },
}

MODEL_KEYS = ("kind", "X", "beta", "angles", "seed")


def _is_int(value) -> bool:
    return isinstance(value, (int, np.integer)) and not isinstance(value, bool)


def _is_real(value) -> bool:
    return isinstance(value, (int, float, np.integer, np.floating)) and not isinstance(value, bool)


def spec_violations(kind, size, beta, angles, seed, prefix: str = "model") -> List[str]:
    """Every reason the given model fields are invalid, each prefixed with its field path."""
    problems = []
    if not isinstance(kind, ModelKind):
        problems.append(f"{prefix}.kind: must be one of {[k.value for k in ModelKind]} (got {kind!r})")
    if not _is_int(size) or size < 4 or size % 2:
        problems.append(f"{prefix}.X: must be an even integer >= 4 (got {size!r})")
    if not _is_real(beta) or not math.isfinite(beta) or beta < 0:
        problems.append(f"{prefix}.beta: must be a finite real >= 0 (got {beta!r})")
    if not isinstance(angles, (tuple, list)) or not all(_is_real(a) and math.isfinite(a) for a in angles):
        problems.append(f"{prefix}.angles: must be a list of finite reals (got {angles!r})")
    elif isinstance(kind, ModelKind) and len(angles) != ANGLE_COUNT[kind]:
        problems.append(
            f"{prefix}.angles: {kind.value} takes {ANGLE_COUNT[kind]} angles (got {len(angles)})"
        )
    if not _is_int(seed) or not 0 <= seed < SEED_MODULUS:
        problems.append(f"{prefix}.seed: must be an integer in [0, 2**64) (got {seed!r})")
    return problems


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    size: int
    beta: float
    angles: Tuple[float, ...]
    seed: int = 0

    def __post_init__(self):
        kind = self.kind
        if isinstance(kind, str) and kind in ModelKind._value2member_map_:
            kind = ModelKind(kind)
        object.__setattr__(self, "kind", kind)
        if isinstance(self.angles, list):
            object.__setattr__(self, "angles", tuple(self.angles))
        problems = spec_violations(self.kind, self.size, self.beta, self.angles, self.seed)
        if problems:
            raise ConfigError(problems)
        object.__setattr__(self, "size", int(self.size))
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))
        object.__setattr__(self, "seed", int(self.seed))

    @classmethod
    def default(cls, kind: ModelKind = ModelKind.BRICKWORK, size: int = 20,
                beta: float = 0.3, seed: int = 0) -> "ModelSpec":
        return cls(ModelKind(kind), size, beta, ANGLE_PRESETS["default"][ModelKind(kind)], seed)

    @classmethod
    def from_dict(cls, data: Dict[str, Any], prefix: str = "model") -> "ModelSpec":
        if not isinstance(data, dict):
            raise ConfigError([f"{prefix}: must be an object"])
        problems = [f"{prefix}.{key}: unknown key" for key in data if key not in MODEL_KEYS]

        raw_kind = data.get("kind", ModelKind.BRICKWORK.value)
        try:
            kind = ModelKind(raw_kind)
        except ValueError:
            kind = raw_kind

        angles = data.get("angles", "default")
        if isinstance(angles, str):
            if angles not in ANGLE_PRESETS:
                problems.append(
                    f"{prefix}.angles: unknown preset {angles!r} (choose from {sorted(ANGLE_PRESETS)})"
                )
                angles = ()
            elif isinstance(kind, ModelKind):
                angles = ANGLE_PRESETS[angles][kind]
            else:
                angles = ()

        size = data.get("X", 20)
        beta = data.get("beta", 0.3)
        seed = data.get("seed", 0)
        problems.extend(spec_violations(kind, size, beta, angles, seed, prefix))
        if problems:
            raise ConfigError(problems)
        return cls(kind, size, beta, tuple(angles), seed)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "X": self.size,
            "beta": self.beta,
            "angles": list(self.angles),
            "seed": self.seed,
        }

    @property
    def noise_width(self) -> int:
        return self.size // 2 if self.kind is ModelKind.BRICKWORK else self.size

    def with_beta(self, beta: float) -> "ModelSpec":
        return replace(self, beta=beta)

    def with_size(self, size: int) -> "ModelSpec":
        return replace(self, size=size)

    def with_seed(self, seed: int) -> "ModelSpec":
        return replace(self, seed=int(seed) % SEED_MODULUS)

    def stream(self) -> NoiseStream:
        return NoiseStream(self.seed, self.noise_width)


@dataclass(frozen=True)
class NoiseSample:
    t: int
    z: np.ndarray

    def __post_init__(self):
        z = np.array(self.z, dtype=np.float64, copy=True)
        if np.any(z < -0.5) or np.any(z > 0.5):
            raise ValueError("noise values must lie in [-1/2, 1/2]")
        z.flags.writeable = False
        object.__setattr__(self, "z", z)


@dataclass(frozen=True)
class PerturbationParts:
    """Q = A + beta B + beta^2 C + O(beta^3)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray


# ========== MATRIX BUILDERS ==========

def two_site_block(theta_a: float, theta_b: float, theta_c: float) -> np.ndarray:
    c, s = math.cos(theta_c), math.sin(theta_c)
    return np.array(
        [
            [np.exp(1j * theta_a) * c, -np.exp(1j * theta_b) * s],
            [np.exp(-1j * theta_b) * s, np.exp(-1j * theta_a) * c],
        ],
        dtype=np.complex128,
    )


def cell_pairs(size: int, offset: int) -> List[Tuple[int, int]]:
    """Site pairs of the zeta (offset 0) or eta (offset 1) cells."""
    return [(2 * k + offset, (2 * k + offset + 1) % size) for k in range(size // 2)]


def pair_layer_matrix(size: int, offset: int, block: np.ndarray) -> np.ndarray:
    m = np.zeros((size, size), dtype=np.complex128)
    for a, b in cell_pairs(size, offset):
        m[a, a], m[a, b] = block[0, 0], block[0, 1]
        m[b, a], m[b, b] = block[1, 0], block[1, 1]
    return m


def _layer_blocks(spec: ModelSpec) -> List[Tuple[int, np.ndarray]]:
    if spec.kind is ModelKind.BRICKWORK:
        return [(0, two_site_block(*spec.angles))]
    return [(0, two_site_block(*spec.angles[:3])), (1, two_site_block(*spec.angles[3:]))]


def build_unitary(spec: ModelSpec) -> np.ndarray:
    return build_model(spec).unitary.copy()


def noise_generator(spec: ModelSpec, z: np.ndarray) -> np.ndarray:
    """Z with G = expm(beta Z): sigma_1 blocks on eta-cells, or diag(z)."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (spec.noise_width,):
        raise ValueError(f"{spec.kind.value} takes {spec.noise_width} noise values, got {z.shape}")
    if spec.kind is ModelKind.DIAGONAL:
        return np.diag(z).astype(np.complex128)
    generator = np.zeros((spec.size, spec.size), dtype=np.complex128)
    for k, (a, b) in enumerate(cell_pairs(spec.size, 1)):
        generator[a, b] = generator[b, a] = z[k]
    return generator


def noise_layer(spec: ModelSpec, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (spec.noise_width,):
        raise ValueError(f"{spec.kind.value} takes {spec.noise_width} noise values, got {z.shape}")
    return noise_layers(spec, z[None, :])[0]


def noise_layers(spec: ModelSpec, z: np.ndarray) -> np.ndarray:
    """Stack of noise layers for a (count, width) block of noise."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != spec.noise_width:
        raise ValueError(f"noise block of shape (count, {spec.noise_width}) expected, got {z.shape}")
    count = z.shape[0]
    g = np.zeros((count, spec.size, spec.size), dtype=np.complex128)
    if spec.kind is ModelKind.DIAGONAL:
        sites = np.arange(spec.size)
        g[:, sites, sites] = np.exp(spec.beta * z)
        return g
    for k, (a, b) in enumerate(cell_pairs(spec.size, 1)):
        g[:, a, a] = g[:, b, b] = np.cosh(spec.beta * z[:, k])
        g[:, a, b] = g[:, b, a] = np.sinh(spec.beta * z[:, k])
    return g


def sample_noise_layer(spec: ModelSpec, t: int,
                       stream: Optional[NoiseStream] = None) -> Tuple[np.ndarray, NoiseSample]:
    stream = stream or spec.stream()
    sample = NoiseSample(t, stream.step(t))
    return noise_layer(spec, sample.z), sample


def step_matrix(spec: ModelSpec, t: int, stream: Optional[NoiseStream] = None) -> np.ndarray:
    g, _ = sample_noise_layer(spec, t, stream)
    return g @ build_model(spec).unitary


def parts_from_noise(spec: ModelSpec, z: np.ndarray) -> PerturbationParts:
    u = build_model(spec).unitary
    generator = noise_generator(spec, z)
    zu = generator @ u
    return PerturbationParts(A=u.copy(), B=zu, C=generator @ zu / 2)


def perturbation_parts(spec: ModelSpec, sample: NoiseSample) -> PerturbationParts:
    return parts_from_noise(spec, sample.z)


# ========== FAST EVOLUTION ==========

@dataclass(frozen=True)
class NoisyModel:
    """Seed-independent structure of a model, shared by all ensemble members."""

    spec: ModelSpec
    unitary: np.ndarray = field(repr=False)
    layers: PairLayers = field(repr=False)

    def advance(self, acc: ScaledProduct, seed: int, count: int) -> ScaledProduct:
        """Multiply the next `count` step matrices onto acc (steps acc.t+1 ..)."""
        if count == 0:
            return acc
        z = noise_block(seed, self.spec.noise_width, acc.t + 1, count)
        core, log_scale = advance_rows(acc.core, self.layers, z)
        return ScaledProduct(core, acc.log_scale + log_scale, acc.t + count)

    def evolve(self, w: np.ndarray, seed: int, t0: int, count: int) -> Tuple[np.ndarray, float]:
        """Apply steps t0 .. t0+count-1 to the columns of w; returns (w', ln scale)."""
        z = noise_block(seed, self.spec.noise_width, t0, count)
        return advance_rows(w, self.layers, z)


@lru_cache(maxsize=64)
def _build_model(spec: ModelSpec) -> NoisyModel:
    blocks = _layer_blocks(spec)
    unitary = np.eye(spec.size, dtype=np.complex128)
    for offset, block in blocks:
        unitary = pair_layer_matrix(spec.size, offset, block) @ unitary
    unitary.flags.writeable = False
    layers = PairLayers(
        offsets=np.array([offset for offset, _ in blocks], dtype=np.int64),
        blocks=np.ascontiguousarray(np.stack([block for _, block in blocks])),
        pair_noise=spec.kind is ModelKind.BRICKWORK,
        noise_offset=1 if spec.kind is ModelKind.BRICKWORK else 0,
        beta=spec.beta,
    )
    logger.debug("Built %s model X=%d beta=%g", spec.kind.value, spec.size, spec.beta)
    return NoisyModel(spec, unitary, layers)


def build_model(spec: ModelSpec) -> NoisyModel:
    return _build_model(spec.with_seed(0))
