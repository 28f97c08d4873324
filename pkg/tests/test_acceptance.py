"""Long-running checks at published parameter values; deselected unless run with -m slow."""

import math

import numpy as np
import pytest

from dynamics.bounds import build_twofold, cs_bound_rate, mu_of, nu_of, sample_twofold
from dynamics.ensemble import (
    absorbed_ipr,
    cs_inequality,
    linear_slope,
    map_samples,
    power_law_fit,
    repeated_relaxation,
    run_ensemble,
)
from dynamics.experiment_config import DEFAULT_INPUTS
from dynamics.fock import FockConfiguration, bunching_prediction, mean_x_squared, output_distribution
from dynamics.models import ModelKind, ModelSpec, build_model
from dynamics.spectral import gap_at, lyapunov_pair
from utils.linalg import ScaledProduct, eig_sorted

pytestmark = pytest.mark.slow


def test_noisy_gap_at_default_parameters():
    spec = ModelSpec.default(ModelKind.BRICKWORK, size=20, beta=0.3)
    estimates = map_samples(lyapunov_pair, spec, 10, progress=False,
                            block_length=1000, block_count=1000, burn_in=10)
    inside = [4e-4 <= est.gap <= 8e-4 for est in estimates]
    assert sum(inside) >= 9


@pytest.mark.parametrize("size", [10, 20, 40])
def test_gap_scales_inversely_with_size(size):
    spec = ModelSpec.default(ModelKind.BRICKWORK, size=size, beta=0.3, seed=1)
    estimate = lyapunov_pair(spec, block_length=1000, block_count=1000, burn_in=10)
    assert 5e-3 <= estimate.gap * size <= 2e-2


def test_small_noise_slope_of_log_omega():
    spec = ModelSpec.default(ModelKind.BRICKWORK, size=20, beta=0.1, seed=3)
    series = run_ensemble(spec, 2000, 1000, {"omegaSv"}, record_every=20, progress=False)
    slope = linear_slope(series["lnOmegaSv"].times, series["lnOmegaSv"].mean)
    assert slope == pytest.approx(-0.1 ** 2 / 60, rel=0.1)


@pytest.mark.parametrize("kind", ["tauLambdaSv", "tauDelta", "tauX"])
def test_relaxation_times_follow_inverse_square_law(kind):
    spec = ModelSpec.default(ModelKind.BRICKWORK, size=20, beta=0.3, seed=5)
    inputs = DEFAULT_INPUTS["relaxation-scan"] if kind == "tauX" else ()
    points = []
    for beta in (0.05, 0.1, 0.2, 0.4):
        t_max = int(3_000_000 * (0.05 / beta) ** 2)
        result = repeated_relaxation(spec.with_beta(beta), [kind], 1e-6, t_max, 16, 1, inputs=inputs,
                                     record_every=t_max // 2000, n_jobs=-1, progress=False)
        tau = next(iter(result.values())).mean
        assert math.isfinite(tau), beta
        points.append((beta, tau))
    assert power_law_fit(points).exponent == pytest.approx(-2.0, abs=0.3)


def test_cauchy_schwarz_with_large_ensemble():
    spec = ModelSpec.default(ModelKind.BRICKWORK, size=8, beta=0.3, seed=7)
    series = run_ensemble(spec, 200, 10_000, {"traceMoments"}, record_every=10, n_jobs=-1, progress=False)
    _, lhs, rhs = cs_inequality(series)
    assert np.all(lhs <= rhs + 1e-9)
    assert cs_bound_rate(mu_of(build_twofold(spec)), nu_of(spec)) <= 1e-12


@pytest.mark.parametrize("size", [4, 8])
def test_diagonal_noise_identity(size):
    spec = ModelSpec.default(ModelKind.DIAGONAL, size=size, beta=0.3, seed=2)
    mu = mu_of(build_twofold(spec), method="arnoldi", tol=1e-13)
    nu = nu_of(spec, method="arnoldi", tol=1e-13)
    assert abs(math.sqrt(nu) - mu) <= 1e-8
    if size == 4:
        assert mu_of(build_twofold(spec), method="dense") == pytest.approx(mu, abs=1e-9)
        assert nu_of(spec, method="dense") == pytest.approx(nu, abs=1e-9)


def test_twofold_against_large_monte_carlo():
    spec = ModelSpec.default(ModelKind.BRICKWORK, size=4, beta=0.3, seed=8)
    mean, stderr = sample_twofold(spec, 100_000)
    expected = build_twofold(spec).dense()
    assert np.all(np.abs(mean.real - expected.real) <= 5 * stderr.real + 1e-12)
    assert np.all(np.abs(mean.imag - expected.imag) <= 5 * stderr.imag + 1e-12)


def test_inputs_are_absorbed_into_the_bunched_state():
    spec = ModelSpec.default(ModelKind.BRICKWORK, size=20, beta=0.3, seed=0)
    model = build_model(spec)
    first, second = FockConfiguration((-6, 1, 8), 20), FockConfiguration((-1, 0, 1), 20)
    acc = ScaledProduct.identity(spec.size)
    checked_tv = False
    while acc.t < 1_000_000:
        acc = model.advance(acc, spec.seed, 100)
        ratio = math.exp(gap_at(acc).log_ratio)
        if ratio < 1e-3 and not checked_tv:
            mode = eig_sorted(acc.core, t=acc.t, modes=1, strict=False).right_modes[:, 0]
            predicted = bunching_prediction(mode, 3)
            assert output_distribution(acc, first).total_variation(predicted) < 1e-2
            assert output_distribution(acc, second).total_variation(predicted) < 1e-2
            checked_tv = True
        if ratio < 1e-5:
            spread = mean_x_squared(output_distribution(acc, first)) - mean_x_squared(output_distribution(acc, second))
            assert abs(spread) < 1e-3
            return
    pytest.fail("eigenvalue ratio never dropped below 1e-5")


def test_absorbed_ipr_barely_depends_on_size():
    values = []
    for size in (10, 20, 40):
        spec = ModelSpec.default(ModelKind.BRICKWORK, size=size, beta=0.3, seed=11)
        found = map_samples(absorbed_ipr, spec, 8, progress=False, c=1e-3, t_max=200_000, window=100,
                            record_every=100)
        values.append(np.mean([f.ipr for f in found]))
    assert max(values) / min(values) < 2
