# dynamics/spectral.py

"""Spectral diagnostics of a running product V_t.

All quantities here are ratios, so they are computed from the normalized core of
a ScaledProduct. Lyapunov exponents use block renormalization: two vectors are
pushed through M steps at a time, the first is renormalized and the second is
orthogonalized against it, and the logs of the growth of the length and of the
spanned area are accumulated.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

from dynamics.errors import NumericalError
from dynamics.models import ModelSpec, build_model
from utils.linalg import ScaledProduct, SpectralSnapshot, eig_sorted, svd_sorted
from utils.rng import auxiliary_generator

logger = logging.getLogger(__name__)

ZERO_TRACE_ULPS = 64
SIN_FLOOR = 1e-150
DEFAULT_BLOCK_LENGTH = 1000
DEFAULT_BLOCK_COUNT = 1000
DEFAULT_BURN_IN = 10
_LYAPUNOV_TAG = 0x1A9


@dataclass(frozen=True)
class GapEstimate:
    t: int
    delta: float
    log_ratio: float
    flagged: bool = False


@dataclass(frozen=True)
class OmegaPair:
    t: int
    omega_eig: float
    omega_sv: float


@dataclass(frozen=True)
class LyapunovEstimate:
    t: int
    e1: float
    e2: float
    block_length: int
    block_count: int
    burn_in: int = 0
    clamped: int = 0
    history: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)), repr=False)

    @property
    def gap(self) -> float:
        return self.e1 - self.e2


# ========== GAP AND OMEGA ==========

def _steps(acc: ScaledProduct, t: Optional[int]) -> int:
    t = acc.t if t is None else t
    if t < 1:
        raise ValueError(f"spectral diagnostics need t >= 1, got {t}")
    return t


def gap_from_snapshot(snapshot: SpectralSnapshot, t: int) -> GapEstimate:
    moduli = np.abs(snapshot.eigenvalues)
    if moduli[0] == 0.0:
        raise NumericalError("leading eigenvalue vanished")
    second = max(moduli[1], np.finfo(float).tiny)
    log_ratio = math.log(second) - math.log(moduli[0])
    return GapEstimate(t, -log_ratio / t, log_ratio, snapshot.flagged)


def gap_at(acc: ScaledProduct, t: Optional[int] = None) -> GapEstimate:
    """Delta_t = -ln|lambda_2 / lambda_1| / t."""
    t = _steps(acc, t)
    snapshot = eig_sorted(acc.core, with_left=True, t=t, modes=2, strict=False)
    return gap_from_snapshot(snapshot, t)


def _second_elementary(values: np.ndarray) -> complex:
    """sum_{i<j} v_i v_j without the cancellation of (sum v)^2 - sum v^2."""
    partial = np.concatenate(([0], np.cumsum(values)[:-1]))
    return complex(np.sum(values * partial))


def omega_eig_from(eigenvalues: np.ndarray, t: int = 0) -> float:
    """|tr(V)^2 - tr(V^2)|^2 / |tr V|^4, NaN (with a warning) when tr V = 0."""
    eigenvalues = np.asarray(eigenvalues, dtype=np.complex128)
    trace = complex(np.sum(eigenvalues))
    if abs(trace) <= ZERO_TRACE_ULPS * np.finfo(np.float64).eps * float(np.sum(np.abs(eigenvalues))):
        logger.warning("Omega^lambda undefined at t=%d: trace vanishes to rounding", t)
        return float("nan")
    return abs(2 * _second_elementary(eigenvalues)) ** 2 / abs(trace) ** 4


def omega_sv_from(singular_values: np.ndarray) -> float:
    squares = np.asarray(singular_values, dtype=np.float64) ** 2
    total = float(np.sum(squares))
    if total == 0.0:
        return float("nan")
    return 2 * _second_elementary(squares).real / total ** 2


def omega_pair(acc: ScaledProduct, t: Optional[int] = None) -> OmegaPair:
    t = _steps(acc, t)
    eigenvalues = eig_sorted(acc.core, t=t).eigenvalues
    singular_values = svd_sorted(acc.core, t=t).singular_values
    return OmegaPair(t, omega_eig_from(eigenvalues, t), omega_sv_from(singular_values))


# ========== LYAPUNOV EXPONENTS ==========

BlockMap = Callable[[int, np.ndarray], Tuple[np.ndarray, float]]


def lyapunov_from_blocks(
    apply_block: BlockMap,
    size: int,
    block_length: int,
    block_count: int,
    seed: int,
    burn_in: int = DEFAULT_BURN_IN,
) -> LyapunovEstimate:
    """Top two Lyapunov exponents from any block map.

    `apply_block(s, w)` pushes the columns of the X x 2 array w through block s
    (steps (s-1)M+1 .. sM) and returns (w', ln scale) with the true image equal
    to exp(ln scale) * w'.
    """
    if block_length < 1 or block_count < 1:
        raise ValueError(f"block length and count must be >= 1 (got {block_length}, {block_count})")
    if burn_in >= block_count:
        logger.warning("Burn-in of %d blocks truncated to %d", burn_in, block_count - 1)
        burn_in = block_count - 1
    burn_in = max(burn_in, 0)

    rng = auxiliary_generator(seed, _LYAPUNOV_TAG)
    start = rng.standard_normal((size, 2)) + 1j * rng.standard_normal((size, 2))
    frame, _ = np.linalg.qr(start)

    sum_vol1 = sum_vol2 = 0.0
    used = clamped = 0
    history = []
    for s in range(1, block_count + 1):
        image, log_scale = apply_block(s, frame)
        u, v = image[:, 0], image[:, 1]
        u_norm = float(np.linalg.norm(u))
        if u_norm == 0.0:
            raise NumericalError(f"first Lyapunov vector vanished in block {s}")
        w1 = u / u_norm
        v_perp = v - w1 * np.vdot(w1, v)
        v_norm = float(np.linalg.norm(v))
        perp_norm = float(np.linalg.norm(v_perp))
        sin = perp_norm / v_norm if v_norm > 0 else 0.0
        if sin < SIN_FLOOR:
            clamped += 1
            logger.warning("sin(theta) underflow in block %d clamped to %.0e", s, SIN_FLOOR)
            sin = SIN_FLOOR
            v_perp = rng.standard_normal(size) + 1j * rng.standard_normal(size)
            v_perp = v_perp - w1 * np.vdot(w1, v_perp)
            perp_norm = float(np.linalg.norm(v_perp))
            v_norm = max(v_norm, np.finfo(float).tiny)
        frame = np.stack([w1, v_perp / perp_norm], axis=1)

        if s <= burn_in:
            continue
        ln_vol1 = log_scale + math.log(u_norm)
        ln_vol2 = ln_vol1 + log_scale + math.log(v_norm) + math.log(sin)
        sum_vol1 += ln_vol1
        sum_vol2 += ln_vol2
        used += 1
        steps = used * block_length
        history.append((s * block_length, sum_vol1 / steps, (sum_vol2 - sum_vol1) / steps))

    steps = used * block_length
    e1 = sum_vol1 / steps
    e2 = (sum_vol2 - sum_vol1) / steps
    return LyapunovEstimate(
        t=block_count * block_length,
        e1=e1,
        e2=e2,
        block_length=block_length,
        block_count=block_count,
        burn_in=burn_in,
        clamped=clamped,
        history=np.array(history),
    )


def lyapunov_pair(
    spec: ModelSpec,
    block_length: int = DEFAULT_BLOCK_LENGTH,
    block_count: int = DEFAULT_BLOCK_COUNT,
    burn_in: int = DEFAULT_BURN_IN,
) -> LyapunovEstimate:
    model = build_model(spec)

    def apply_block(s: int, w: np.ndarray) -> Tuple[np.ndarray, float]:
        return model.evolve(w, spec.seed, (s - 1) * block_length + 1, block_length)

    return lyapunov_from_blocks(apply_block, spec.size, block_length, block_count, spec.seed, burn_in)
