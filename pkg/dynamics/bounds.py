# dynamics/bounds.py

"""Noise-averaged tensor powers of the step matrix and what follows from them.

The noise layer of both models is G = H D(z) H with H a fixed orthogonal
"mixing" matrix (Hadamard on every eta-cell for BrickworkLoss, the identity for
DiagonalLoss) and D(z) = diag(exp(beta s_x z_cell(x))), where s_x = +-1 is the
site's sign inside its cell. The average of D over k tensor legs is therefore
diagonal, with entry prod_cells g(beta |S_cell|), S_cell the signed count of
legs sitting on that cell and g(a) = sinh(a/2)/(a/2) the box-noise moment.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from config import get_solver_options
from dynamics.models import (
    ModelKind,
    ModelSpec,
    build_model,
    cell_pairs,
    noise_layers,
    parts_from_noise,
)
from utils.linalg import apply_kron2, dense_from_operator, leading_eigenvalue
from utils.rng import auxiliary_generator, noise_block

logger = logging.getLogger(__name__)

BOX_SECOND_MOMENT = 1.0 / 12.0
RATE_ZERO_TOL = 1e-9
DENSE_TWOFOLD_LIMIT = 1024
_START_TAG = 0x5EED


def g_factor(beta):
    """sinh(beta/2)/(beta/2) with g(0) = 1; accepts scalars or arrays."""
    beta = np.asarray(beta, dtype=np.float64)
    if np.any(beta < 0):
        raise ValueError("g_factor needs beta >= 0")
    half = beta / 2
    with np.errstate(invalid="ignore", divide="ignore"):
        value = np.where(half == 0, 1.0, np.sinh(half) / np.where(half == 0, 1.0, half))
    return float(value) if value.ndim == 0 else value


@dataclass(frozen=True)
class CellStructure:
    """Mixing pairs, site signs and site-to-cell map of a model's noise layer."""

    size: int
    first: np.ndarray
    second: np.ndarray
    sign: np.ndarray
    cell: np.ndarray

    @property
    def cells(self) -> int:
        return int(self.cell.max()) + 1

    @property
    def mixing(self) -> np.ndarray:
        h = np.eye(self.size)
        if len(self.first):
            r = 1 / math.sqrt(2)
            h[self.first, self.first] = r
            h[self.first, self.second] = r
            h[self.second, self.first] = r
            h[self.second, self.second] = -r
        return h

    def mix_axis(self, tensor: np.ndarray, axis: int) -> np.ndarray:
        """Apply the mixing matrix along one tensor axis (identity for diagonal noise)."""
        if not len(self.first):
            return tensor
        moved = np.moveaxis(tensor, axis, 0)
        a, b = moved[self.first], moved[self.second]
        out = np.empty_like(moved)
        out[self.first] = (a + b) / math.sqrt(2)
        out[self.second] = (a - b) / math.sqrt(2)
        return np.moveaxis(out, 0, axis)


def cell_structure(spec: ModelSpec) -> CellStructure:
    size = spec.size
    if spec.kind is ModelKind.DIAGONAL:
        empty = np.zeros(0, dtype=np.int64)
        return CellStructure(size, empty, empty, np.ones(size, dtype=np.int64), np.arange(size))
    pairs = np.array(cell_pairs(size, 1), dtype=np.int64)
    sign = np.empty(size, dtype=np.int64)
    cell = np.empty(size, dtype=np.int64)
    sign[pairs[:, 0]], sign[pairs[:, 1]] = 1, -1
    cell[pairs[:, 0]] = cell[pairs[:, 1]] = np.arange(len(pairs))
    return CellStructure(size, pairs[:, 0], pairs[:, 1], sign, cell)


def noise_moment_diagonal(spec: ModelSpec, order: int) -> np.ndarray:
    """Average of the diagonal noise factor over `order` tensor legs, shape (X,)*order."""
    if order < 1:
        raise ValueError("order must be >= 1")
    structure = cell_structure(spec)
    table = g_factor(spec.beta * np.arange(order + 1))
    moment = np.ones((spec.size,) * order)
    for c in range(structure.cells):
        legs = np.where(structure.cell == c, structure.sign, 0)
        signed = legs
        for _ in range(order - 1):
            signed = np.add.outer(signed, legs)
        moment *= table[np.abs(signed)]
    return moment


# ========== TWO-FOLD OPERATOR ==========

@dataclass(frozen=True)
class TwoFoldOperator:
    """avg(Q kron Q*) acting on vectors of length X^2, applied matrix-free."""

    spec: ModelSpec
    unitary: np.ndarray = field(repr=False)
    mixing: np.ndarray = field(repr=False)
    moment: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.spec.size ** 2

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = apply_kron2(self.unitary, self.unitary.conj(), v)
        v = apply_kron2(self.mixing, self.mixing, v)
        v = self.moment * v
        return apply_kron2(self.mixing, self.mixing, v)

    def dense(self) -> np.ndarray:
        if self.dim > DENSE_TWOFOLD_LIMIT:
            raise ValueError(f"dense two-fold operator of dimension {self.dim} exceeds {DENSE_TWOFOLD_LIMIT}")
        mixing = np.kron(self.mixing, self.mixing)
        return mixing @ np.diag(self.moment) @ mixing @ np.kron(self.unitary, self.unitary.conj())


def build_twofold(spec: ModelSpec) -> TwoFoldOperator:
    if not isinstance(spec.kind, ModelKind):
        raise ValueError(f"unsupported model kind {spec.kind!r}")
    structure = cell_structure(spec)
    return TwoFoldOperator(
        spec,
        build_model(spec).unitary,
        structure.mixing,
        noise_moment_diagonal(spec, 2).reshape(-1),
    )


def _start_vector(dim: int) -> np.ndarray:
    rng = auxiliary_generator(dim, _START_TAG)
    return rng.standard_normal(dim) + 1j * rng.standard_normal(dim)


def mu_of(op: TwoFoldOperator, **overrides) -> float:
    options = get_solver_options("mu", **overrides)
    return leading_eigenvalue(op.apply, op.dim, v0=_start_vector(op.dim), **options)


# ========== FOUR-FOLD OPERATOR ==========

@dataclass(frozen=True)
class FourFoldOperator:
    """avg((Q kron Q) kron (Q kron Q)*) on vectors of length X^4, plus the swap projector."""

    spec: ModelSpec
    unitary: np.ndarray = field(repr=False)
    structure: CellStructure = field(repr=False)
    moment: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.spec.size ** 4

    def _tensor(self, v: np.ndarray) -> np.ndarray:
        size = self.spec.size
        v = np.asarray(v, dtype=np.complex128)
        if v.shape != (size ** 4,):
            raise ValueError(f"vector of length {size ** 4} expected, got {v.shape}")
        return v.reshape(size, size, size, size)

    def apply(self, v: np.ndarray) -> np.ndarray:
        t = self._tensor(v)
        u, uc = self.unitary, self.unitary.conj()
        t = np.einsum("ai,bj,ck,dl,ijkl->abcd", u, u, uc, uc, t, optimize=True)
        for axis in range(4):
            t = self.structure.mix_axis(t, axis)
        t = t * self.moment
        for axis in range(4):
            t = self.structure.mix_axis(t, axis)
        return t.reshape(-1)

    def project(self, v: np.ndarray) -> np.ndarray:
        """S/4 = (1 - swap of legs 0,1)(1 - swap of legs 2,3)/4, a projector."""
        t = self._tensor(v)
        t = t - t.transpose(1, 0, 2, 3)
        t = t - t.transpose(0, 1, 3, 2)
        return (t / 4).reshape(-1)

    def apply_projected(self, v: np.ndarray) -> np.ndarray:
        return self.apply(self.project(v))


def build_fourfold(spec: ModelSpec) -> FourFoldOperator:
    return FourFoldOperator(
        spec,
        build_model(spec).unitary,
        cell_structure(spec),
        noise_moment_diagonal(spec, 4),
    )


def nu_of(spec: ModelSpec, **overrides) -> float:
    op = build_fourfold(spec)
    options = get_solver_options("nu", **overrides)
    v0 = op.project(_start_vector(op.dim))
    return leading_eigenvalue(op.apply_projected, op.dim, v0=v0, **options)


# ========== RATES AND CLOSED FORMS ==========

def check_threshold(c: float) -> None:
    if not 0 < c < 1:
        raise ValueError(f"threshold c must lie in (0, 1), got {c}")


def cs_bound_rate(mu: float, nu: float) -> float:
    """ln(sqrt(nu)/mu), the per-step decay rate of the eigenvalue-ratio bound."""
    if mu <= 0 or nu <= 0:
        raise ValueError(f"mu and nu must be positive (got {mu}, {nu})")
    return 0.5 * math.log(nu) - math.log(mu)


def tau_omega_eig(mu: float, nu: float, c: float, zero_tol: float = RATE_ZERO_TOL) -> float:
    check_threshold(c)
    rate = cs_bound_rate(mu, nu)
    if abs(rate) <= zero_tol:
        return math.inf
    return abs(math.log(c) / rate)


def perturbative_trace(spec: ModelSpec, n_samples: Optional[int] = None) -> float:
    """tr[2 avg(B^+B) + avg((A^+B)^2) + avg((B^+A)^2)].

    Exact by default: the expression is quadratic in independent zero-mean noise,
    so its average is the box second moment times the sum over unit noise on each
    cell. With `n_samples`, a Monte Carlo average over sampled noise instead.
    """

    def trace_of(z: np.ndarray) -> float:
        parts = parts_from_noise(spec, z)
        a, b = parts.A, parts.B
        ab = a.conj().T @ b
        ba = b.conj().T @ a
        return float(np.real(np.trace(2 * b.conj().T @ b + ab @ ab + ba @ ba)))

    width = spec.noise_width
    if n_samples is None:
        return BOX_SECOND_MOMENT * sum(trace_of(row) for row in np.eye(width))
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    z = noise_block(spec.seed, width, 1, n_samples)
    return float(np.mean([trace_of(row) for row in z]))


@dataclass(frozen=True)
class PerturbationPrediction:
    slope: float
    trace: float
    tau_omega_sv: float
    tau_omega_eig: Optional[float] = None
    c: float = 1e-6


def tau_omega_sv(slope: float, c: float) -> float:
    """First t at which the small-noise line slope*t/2 - ln(sqrt 2) reaches ln c."""
    check_threshold(c)
    if slope == 0:
        return math.inf
    return 2 * abs(math.log(c) + math.log(math.sqrt(2))) / abs(slope)


def perturbative_slope(spec: ModelSpec, c: float = 1e-6,
                       bound: Optional[Tuple[float, float]] = None) -> PerturbationPrediction:
    """Small-noise slope of avg ln Omega^Lambda in t: -trace * beta^2 / X^2.

    `bound` = (mu, nu) adds the eigenvalue-ratio relaxation-time bound.
    """
    trace = perturbative_trace(spec)
    slope = -trace * spec.beta ** 2 / spec.size ** 2
    tau_eig = tau_omega_eig(*bound, c) if bound is not None else None
    return PerturbationPrediction(slope, trace, tau_omega_sv(slope, c), tau_eig, c)


# ========== MONTE CARLO CROSS-CHECKS ==========

def sample_twofold(spec: ModelSpec, n_samples: int, chunk: int = 10_000) -> Tuple[np.ndarray, np.ndarray]:
    """Monte Carlo mean of Q kron Q* and its standard error (real and imaginary parts separately).

    Returns (mean, stderr) with stderr = se(Re) + 1j * se(Im).
    """
    if n_samples < 2:
        raise ValueError("need at least two samples for a standard error")
    unitary = build_model(spec).unitary
    dim = spec.size ** 2
    total = np.zeros((dim, dim), dtype=np.complex128)
    square_re = np.zeros((dim, dim))
    square_im = np.zeros((dim, dim))
    for start in range(0, n_samples, chunk):
        count = min(chunk, n_samples - start)
        z = noise_block(spec.seed, spec.noise_width, start + 1, count)
        q = noise_layers(spec, z) @ unitary
        kron = np.einsum("nij,nkl->nikjl", q, q.conj()).reshape(count, dim, dim)
        total += kron.sum(axis=0)
        square_re += (kron.real ** 2).sum(axis=0)
        square_im += (kron.imag ** 2).sum(axis=0)
    mean = total / n_samples
    var_re = np.maximum(square_re / n_samples - mean.real ** 2, 0) * n_samples / (n_samples - 1)
    var_im = np.maximum(square_im / n_samples - mean.imag ** 2, 0) * n_samples / (n_samples - 1)
    stderr = np.sqrt(var_re / n_samples) + 1j * np.sqrt(var_im / n_samples)
    return mean, stderr


def second_order_twofold(spec: ModelSpec) -> np.ndarray:
    """(Q2(beta) - Q2(0)) / beta^2 for the dense two-fold operator."""
    if spec.beta == 0:
        raise ValueError("second-order coefficient needs beta > 0")
    return (build_twofold(spec).dense() - build_twofold(spec.with_beta(0.0)).dense()) / spec.beta ** 2


def dense_fourfold_projected(spec: ModelSpec) -> np.ndarray:
    """Q4 S/4 as an explicit matrix (tiny X only)."""
    op = build_fourfold(spec)
    return dense_from_operator(op.apply_projected, op.dim)
