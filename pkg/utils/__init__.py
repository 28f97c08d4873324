# utils/__init__.py

from .linalg import ScaledProduct, eig_sorted, leading_eigenvalue, svd_sorted
from .permanent import batched_permanent, permanent
from .rng import NoiseStream, sample_seed

__all__ = [
    'ScaledProduct',
    'eig_sorted',
    'svd_sorted',
    'leading_eigenvalue',
    'permanent',
    'batched_permanent',
    'NoiseStream',
    'sample_seed',
]
