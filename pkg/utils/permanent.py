# utils/permanent.py

"""Matrix permanents by Ryser's formula with Gray-code subset order."""

import numba as nb
import numpy as np

MAX_ORDER = 20


@nb.njit(cache=True)
def _ryser(a):
    n = a.shape[0]
    if n == 0:
        return 1.0 + 0.0j

    row_sums = np.zeros(n, dtype=np.complex128)
    total = 0.0 + 0.0j
    subset = 0
    size = 0
    for k in range(1, 1 << n):
        # column whose membership flips between consecutive Gray codes
        j = 0
        bits = k
        while (bits & 1) == 0:
            bits >>= 1
            j += 1
        if (subset >> j) & 1:
            subset ^= 1 << j
            size -= 1
            for i in range(n):
                row_sums[i] -= a[i, j]
        else:
            subset |= 1 << j
            size += 1
            for i in range(n):
                row_sums[i] += a[i, j]

        product = 1.0 + 0.0j
        for i in range(n):
            product *= row_sums[i]
        if (n - size) % 2 == 0:
            total += product
        else:
            total -= product
    return total


@nb.njit(cache=True)
def _ryser_batch(stack):
    out = np.empty(stack.shape[0], dtype=np.complex128)
    for b in range(stack.shape[0]):
        out[b] = _ryser(stack[b])
    return out


def _check_order(n: int) -> None:
    if n > MAX_ORDER:
        raise ValueError(f"permanent of order {n} exceeds the supported limit {MAX_ORDER}")


def permanent(m) -> complex:
    m = np.ascontiguousarray(m, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"permanent needs a square matrix, got shape {m.shape}")
    _check_order(m.shape[0])
    if not np.all(np.isfinite(m)):
        raise ValueError("permanent of a matrix with non-finite entries")
    return complex(_ryser(m))


def batched_permanent(stack) -> np.ndarray:
    """Permanents of a stack of n x n matrices, shape (batch, n, n)."""
    stack = np.ascontiguousarray(stack, dtype=np.complex128)
    if stack.ndim != 3 or stack.shape[1] != stack.shape[2]:
        raise ValueError(f"expected a stack of square matrices, got shape {stack.shape}")
    _check_order(stack.shape[1])
    return _ryser_batch(stack)
