# utils/linalg.py

"""Dense complex linear algebra shared by the laboratory.

Long products are carried as a ScaledProduct: a matrix whose largest column has
unit 2-norm plus the natural log of the factor that was divided out. Every ratio
the diagnostics use (eigenvalue moduli, singular values, traces over traces) is
scale invariant, so the core alone is enough for them.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numba as nb
import numpy as np
import scipy.linalg
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigs

from dynamics.errors import ConvergenceError, NearDefectiveError, NumericalError

logger = logging.getLogger(__name__)

NORM_TOLERANCE = 1e-12
DEFECT_THRESHOLD = 1e-6


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.complex128, copy=True)
    array.flags.writeable = False
    return array


def _require_finite(m: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(m)):
        raise NumericalError(f"{what} has non-finite entries")


def max_column_norm(m: np.ndarray) -> float:
    return float(np.max(np.linalg.norm(m, axis=0))) if m.size else 0.0


def normalize_columns(m: np.ndarray) -> Tuple[np.ndarray, float]:
    """Divide m by its largest column norm; return (core, ln factor)."""
    norm = max_column_norm(m)
    if norm == 0.0 or not math.isfinite(norm):
        raise NumericalError(f"cannot normalize matrix with max column norm {norm}")
    return m / norm, math.log(norm)


# ========== SCALED PRODUCTS ==========

@dataclass(frozen=True)
class ScaledProduct:
    """V = exp(log_scale) * core after t factors."""

    core: np.ndarray
    log_scale: float = 0.0
    t: int = 0

    def __post_init__(self):
        core = _readonly(self.core)
        if core.ndim != 2:
            raise ValueError(f"core must be a matrix, got shape {core.shape}")
        _require_finite(core, "core")
        if not math.isfinite(self.log_scale):
            raise NumericalError(f"log scale is not finite: {self.log_scale}")
        norm = max_column_norm(core)
        if abs(norm - 1.0) > NORM_TOLERANCE:
            raise ValueError(f"core is not normalized (max column norm {norm!r})")
        object.__setattr__(self, "core", core)
        object.__setattr__(self, "log_scale", float(self.log_scale))

    @classmethod
    def identity(cls, size: int) -> "ScaledProduct":
        return cls(np.eye(size, dtype=np.complex128), 0.0, 0)

    @classmethod
    def from_matrix(cls, m: np.ndarray, t: int = 0) -> "ScaledProduct":
        m = np.asarray(m, dtype=np.complex128)
        _require_finite(m, "matrix")
        core, log_norm = normalize_columns(m)
        return cls(core, log_norm, t)

    @property
    def size(self) -> int:
        return self.core.shape[0]

    def matrix(self) -> np.ndarray:
        """The represented product; overflows once log_scale leaves the float range."""
        return math.exp(self.log_scale) * self.core


def scaled_multiply(acc: ScaledProduct, q: np.ndarray) -> ScaledProduct:
    """Left-multiply the running product by one step matrix: V <- q V."""
    q = np.asarray(q, dtype=np.complex128)
    if q.ndim != 2 or q.shape[0] != q.shape[1] or q.shape[1] != acc.core.shape[0]:
        raise ValueError(f"cannot multiply {q.shape} by product of shape {acc.core.shape}")
    _require_finite(q, "step matrix")
    core, log_norm = normalize_columns(q @ acc.core)
    return ScaledProduct(core, acc.log_scale + log_norm, acc.t + 1)


@nb.njit(cache=True)
def _advance_rows(core, offsets, blocks, pair_noise, noise_offset, beta, z):
    # core: (n, m) complex, updated in place. One step = unitary pair layers,
    # then the noise layer, then max-column renormalization.
    n = core.shape[0]
    m = core.shape[1]
    half = n // 2
    log_total = 0.0
    for step in range(z.shape[0]):
        for layer in range(offsets.shape[0]):
            off = offsets[layer]
            b00 = blocks[layer, 0, 0]
            b01 = blocks[layer, 0, 1]
            b10 = blocks[layer, 1, 0]
            b11 = blocks[layer, 1, 1]
            for k in range(half):
                a = 2 * k + off
                b = (a + 1) % n
                for j in range(m):
                    x = core[a, j]
                    y = core[b, j]
                    core[a, j] = b00 * x + b01 * y
                    core[b, j] = b10 * x + b11 * y
        if beta != 0.0:
            if pair_noise:
                for k in range(half):
                    a = 2 * k + noise_offset
                    b = (a + 1) % n
                    ch = math.cosh(beta * z[step, k])
                    sh = math.sinh(beta * z[step, k])
                    for j in range(m):
                        x = core[a, j]
                        y = core[b, j]
                        core[a, j] = ch * x + sh * y
                        core[b, j] = sh * x + ch * y
            else:
                for a in range(n):
                    f = math.exp(beta * z[step, a])
                    for j in range(m):
                        core[a, j] *= f
        best = 0.0
        for j in range(m):
            s = 0.0
            for a in range(n):
                s += core[a, j].real ** 2 + core[a, j].imag ** 2
            if s > best:
                best = s
        if not (best > 0.0) or not math.isfinite(best):
            return -math.inf
        norm = math.sqrt(best)
        inv = 1.0 / norm
        for a in range(n):
            for j in range(m):
                core[a, j] *= inv
        log_total += math.log(norm)
    return log_total


@dataclass(frozen=True)
class PairLayers:
    """Step structure of a two-site-cell model, consumed by `advance_rows`.

    Unitary layers act on row pairs (2k+offset, 2k+offset+1 mod n) with one 2x2
    block each; the noise layer is either cosh/sinh pair blocks starting at
    `noise_offset` or a diagonal exp(beta z_x).
    """

    offsets: np.ndarray
    blocks: np.ndarray
    pair_noise: bool
    noise_offset: int
    beta: float


def advance_rows(w: np.ndarray, layers: PairLayers, z: np.ndarray) -> Tuple[np.ndarray, float]:
    """Apply len(z) steps to the rows of w; returns (new w with unit max column, ln scale)."""
    w = np.array(w, dtype=np.complex128, order="C", copy=True)
    if w.ndim == 1:
        w = w[:, None]
    z = np.ascontiguousarray(z, dtype=np.float64)
    log_scale = _advance_rows(
        w, layers.offsets, layers.blocks, layers.pair_noise,
        layers.noise_offset, layers.beta, z,
    )
    if not math.isfinite(log_scale):
        raise NumericalError("product collapsed to zero or overflowed during advance")
    return w, log_scale


# ========== DECOMPOSITIONS ==========

@dataclass(frozen=True)
class SpectralSnapshot:
    eigenvalues: np.ndarray
    right_modes: np.ndarray
    left_modes: Optional[np.ndarray] = None
    t: int = 0
    residual: float = float("nan")
    flagged: bool = False

    def modulus_ratio(self, i: int = 1) -> float:
        """|lambda_{i+1} / lambda_1| (zero-based i)."""
        top = abs(self.eigenvalues[0])
        return abs(self.eigenvalues[i]) / top if top > 0 else float("nan")

    def reconstruct(self) -> np.ndarray:
        if self.left_modes is None:
            raise ValueError("reconstruction needs left modes")
        return (self.right_modes * self.eigenvalues) @ self.left_modes


@dataclass(frozen=True)
class SingularSnapshot:
    singular_values: np.ndarray
    t: int = 0

    def ratio(self, i: int = 1) -> float:
        top = self.singular_values[0]
        return float(self.singular_values[i] / top) if top > 0 else float("nan")


def eigen_order(values: np.ndarray) -> np.ndarray:
    """Descending modulus, then descending real part, imaginary part, original index."""
    index = np.arange(len(values))
    return np.lexsort((index, -values.imag, -values.real, -np.abs(values)))


def eig_sorted(
    m: np.ndarray,
    with_left: bool = False,
    t: int = 0,
    modes: Optional[int] = None,
    strict: bool = True,
) -> SpectralSnapshot:
    """Sorted eigen-decomposition of a square matrix.

    With `with_left`, left modes are returned as rows scaled so that
    left_modes @ right_modes is the identity. The residual of that identity over
    the leading `modes` (all when None) decides whether the snapshot is flagged
    near-defective; `strict` turns the flag into NearDefectiveError.
    """
    m = np.asarray(m, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"eigen-decomposition needs a square matrix, got {m.shape}")
    _require_finite(m, "matrix")

    if with_left:
        values, vl, vr = scipy.linalg.eig(m, left=True, right=True)
    else:
        values, vr = scipy.linalg.eig(m)
    order = eigen_order(values)
    values = values[order]
    right = vr[:, order]
    right = right / np.linalg.norm(right, axis=0)

    left = None
    residual = float("nan")
    flagged = False
    if with_left:
        vl = vl[:, order]
        overlaps = np.einsum("ij,ij->j", vl.conj(), right)
        with np.errstate(divide="ignore", invalid="ignore"):
            left = vl.conj().T / overlaps[:, None]
        k = len(values) if modes is None else min(modes, len(values))
        check = left[:k] @ right[:, :k]
        residual = float(np.max(np.abs(check - np.eye(k)))) if np.all(np.isfinite(check)) else math.inf
        flagged = residual > DEFECT_THRESHOLD
        if flagged:
            if strict:
                raise NearDefectiveError(residual)
            logger.warning("Near-defective snapshot at t=%d (residual %.3e)", t, residual)

    return SpectralSnapshot(values, right, left, t, residual, flagged)


def svd_sorted(m: np.ndarray, t: int = 0) -> SingularSnapshot:
    m = np.asarray(m, dtype=np.complex128)
    _require_finite(m, "matrix")
    values = scipy.linalg.svd(m, compute_uv=False)
    return SingularSnapshot(np.sort(values)[::-1], t)


# ========== KRONECKER-STRUCTURED OPERATORS ==========

def _side(length: int) -> int:
    side = math.isqrt(length)
    if side * side != length:
        raise ValueError(f"vector length {length} is not a perfect square")
    return side


def apply_kron2(a: np.ndarray, b: np.ndarray, v: np.ndarray) -> np.ndarray:
    """(a kron b) v without forming the X^2 x X^2 matrix."""
    v = np.asarray(v)
    side = a.shape[0]
    if a.shape != (side, side) or b.shape != (side, side):
        raise ValueError(f"factors must be square and equal, got {a.shape} and {b.shape}")
    if v.shape != (side * side,):
        raise ValueError(f"vector of length {side * side} expected, got {v.shape}")
    return (a @ v.reshape(side, side) @ b.T).reshape(-1)


def apply_swap2(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v)
    side = _side(v.shape[0])
    return v.reshape(side, side).T.reshape(-1).copy()


# ========== LEADING EIGENVALUES ==========

@dataclass
class PowerResult:
    value: float
    vector: np.ndarray = field(repr=False)
    iterations: int
    converged: bool


def power_iteration(
    apply: Callable[[np.ndarray], np.ndarray],
    v0: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 100_000,
) -> PowerResult:
    """Spectral radius by repeated application, stopping on the relative norm-ratio change."""
    vector = np.asarray(v0, dtype=np.complex128)
    vector = vector / np.linalg.norm(vector)
    previous = None
    for iteration in range(1, max_iter + 1):
        image = apply(vector)
        value = float(np.linalg.norm(image))
        if value == 0.0 or not math.isfinite(value):
            raise NumericalError(f"power iteration hit norm {value}")
        vector = image / value
        if previous is not None and abs(value - previous) < tol * value:
            return PowerResult(value, vector, iteration, True)
        previous = value
    raise ConvergenceError(abs(value - previous), max_iter)


def dense_from_operator(apply: Callable[[np.ndarray], np.ndarray], dim: int) -> np.ndarray:
    columns = [apply(column) for column in np.eye(dim, dtype=np.complex128)]
    return np.stack(columns, axis=1)


def leading_eigenvalue(
    apply: Callable[[np.ndarray], np.ndarray],
    dim: int,
    method: str = "arnoldi",
    tol: float = 1e-10,
    max_iter: int = 100_000,
    dense_limit: int = 1024,
    v0: Optional[np.ndarray] = None,
) -> float:
    """Largest eigenvalue modulus of a matrix-free operator."""
    if method not in ("arnoldi", "power", "dense"):
        raise ValueError(f"unknown eigensolver {method!r}")
    if method == "dense" or dim <= 3:
        if dim > max(dense_limit, 3):
            raise ValueError(f"dense solve of dimension {dim} exceeds limit {dense_limit}")
        values = scipy.linalg.eigvals(dense_from_operator(apply, dim))
        return float(np.max(np.abs(values)))

    if v0 is None:
        v0 = np.ones(dim, dtype=np.complex128)

    if method == "arnoldi":
        operator = LinearOperator((dim, dim), matvec=apply, dtype=np.complex128)
        try:
            values = eigs(operator, k=1, which="LM", v0=v0, tol=tol, maxiter=max_iter,
                          return_eigenvectors=False)
            return float(np.abs(values[0]))
        except ArpackNoConvergence as exc:
            logger.warning("Arnoldi did not converge (%s); falling back to power iteration", exc)

    return power_iteration(apply, v0, tol=tol, max_iter=max_iter).value
