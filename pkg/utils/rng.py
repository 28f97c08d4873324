# utils/rng.py

"""Counter-based noise streams.

Every step t of a trajectory owns a fixed window of the Philox counter, so the
noise for step t depends only on (seed, t). Drawing a block of steps at once
gives the same numbers as drawing them one at a time, and any step can be
reached without generating the ones before it.
"""

from dataclasses import dataclass

import numpy as np

SEED_MODULUS = 2 ** 64

# Philox 4x64 yields four 64-bit words per counter increment, one double per word.
_WORDS_PER_COUNTER = 4


def padded_width(width: int) -> int:
    """Round a per-step draw count up to a whole number of counter increments."""
    return -(-width // _WORDS_PER_COUNTER) * _WORDS_PER_COUNTER


def sample_seed(base_seed: int, index: int) -> int:
    """Seed of ensemble member `index` (wraps modulo 2**64)."""
    return (int(base_seed) + int(index)) % SEED_MODULUS


def noise_block(seed: int, width: int, t0: int, count: int) -> np.ndarray:
    """Box-distributed noise z in [-1/2, 1/2) for steps t0 .. t0+count-1.

    Returns an array of shape (count, width); row i holds the sample of step t0+i.
    """
    if t0 < 1:
        raise ValueError(f"steps are numbered from 1, got t0={t0}")
    if count < 0 or width < 1:
        raise ValueError(f"invalid block shape (count={count}, width={width})")

    padded = padded_width(width)
    stride = padded // _WORDS_PER_COUNTER
    bit_generator = np.random.Philox(key=int(seed) % SEED_MODULUS, counter=(t0 - 1) * stride)
    draws = np.random.Generator(bit_generator).random((count, padded))
    return draws[:, :width] - 0.5


@dataclass(frozen=True)
class NoiseStream:
    """Noise of one trajectory: `width` box variables per step, keyed by `seed`."""

    seed: int
    width: int

    def step(self, t: int) -> np.ndarray:
        return noise_block(self.seed, self.width, t, 1)[0]

    def block(self, t0: int, count: int) -> np.ndarray:
        return noise_block(self.seed, self.width, t0, count)


def auxiliary_generator(seed: int, tag: int) -> np.random.Generator:
    """Independent generator for draws that are not per-step noise (initial vectors, probes)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) % SEED_MODULUS, int(tag)]))
