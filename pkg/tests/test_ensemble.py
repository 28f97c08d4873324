import math

import numpy as np
import pytest

from dynamics.ensemble import (
    MomentAccumulator,
    RelaxationKind,
    RepeatedRelaxation,
    absorbed_ipr,
    cs_inequality,
    cs_onset,
    decay_function,
    fluctuation_report,
    linear_slope,
    map_samples,
    measure,
    power_law_fit,
    record_times,
    relaxation_time,
    repeated_relaxation,
    run_ensemble,
    series_names,
    tail_mean,
    tau_from_gap,
    trajectory_series,
)
from dynamics.fock import FockConfiguration
from dynamics.models import ModelKind, ModelSpec
from utils.linalg import ScaledProduct


def _series(name, times, samples):
    acc = MomentAccumulator(len(times))
    for row in samples:
        acc.add(row)
    return acc.finalize(name, np.asarray(times))


def _seed_of(spec):
    return spec.seed


@pytest.fixture
def small_spec():
    return ModelSpec.default(ModelKind.BRICKWORK, size=4, beta=0.5, seed=21)


# ========== ACCUMULATION ==========

def test_accumulator_skips_non_finite_values():
    series = _series("x", [1, 2], [[1.0, np.nan], [3.0, 2.0]])
    np.testing.assert_allclose(series.mean, [2.0, 2.0])
    np.testing.assert_array_equal(series.count, [2, 1])
    np.testing.assert_allclose(series.variance, [2.0, 0.0])
    assert series.log_mean_exp(1)[0] == pytest.approx(math.log((math.e + math.e ** 3) / 2))


def test_empty_records_have_no_mean():
    series = _series("x", [1], [[np.nan]])
    assert math.isnan(series.mean[0])
    assert series.count[0] == 0


def test_untracked_log_moment():
    with pytest.raises(ValueError):
        _series("x", [1], [[0.0]]).log_mean_exp(3)


def test_merge_equals_sequential_accumulation():
    rng = np.random.default_rng(0)
    samples = rng.standard_normal((13, 5)) * 30
    whole = MomentAccumulator(5)
    left, right = MomentAccumulator(5), MomentAccumulator(5)
    for i, row in enumerate(samples):
        whole.add(row)
        (left if i < 6 else right).add(row)
    merged = left.merge(right).finalize("x", np.arange(5))
    expected = whole.finalize("x", np.arange(5))
    np.testing.assert_allclose(merged.mean, expected.mean, rtol=1e-12)
    np.testing.assert_allclose(merged.variance, expected.variance, rtol=1e-10)
    for q in (-2.0, 1.0, 2.0):
        np.testing.assert_allclose(merged.log_mean_exp(q), expected.log_mean_exp(q), rtol=1e-12)


def test_large_exponents_do_not_overflow():
    series = _series("x", [1], [[800.0], [801.0]])
    expected = 2 * 800 + math.log((1 + math.exp(2)) / 2)
    assert series.log_mean_exp(2)[0] == pytest.approx(expected)


# ========== TRAJECTORIES ==========

def test_record_times():
    np.testing.assert_array_equal(record_times(10, 3), [3, 6, 9])
    assert len(record_times(100)) == 100
    times = record_times(50_000)
    assert times[0] == 5 and len(times) == 10_000
    with pytest.raises(ValueError):
        record_times(0)
    np.testing.assert_array_equal(record_times(5, 5), [5])
    with pytest.raises(ValueError):
        record_times(5, 6)


def test_series_names_order():
    names = series_names({"x2", "omegaSv", "gap", "traceMoments"}, n_inputs=2)
    assert names == [
        "flagged", "gap", "omegaSv", "lnOmegaSv", "x2[0]", "x2[1]", "x2Diff",
        "lnTraceSq", "lnTraceDiffSq", "lnInvOmegaEig",
    ]
    assert series_names({"lnSvRatio"}) == ["lnSvRatio"]


def test_measure_spreading_of_fixed_inputs():
    inputs = [FockConfiguration((-1, 0), 4), FockConfiguration((1, 2), 4)]
    values = measure(ScaledProduct.identity(4), {"x2"}, inputs)
    assert values["x2[0]"] == pytest.approx(0.5)
    assert values["x2[1]"] == pytest.approx(2.5)
    assert values["x2Diff"] == pytest.approx(2.0)


def test_measure_known_spectrum():
    acc = ScaledProduct.from_matrix(np.diag([1.0, 0.5, 0.25, 0.25]), t=4)
    values = measure(acc, {"gap", "lnSvRatio", "omegaSv", "ipr"})
    assert values["gap"] == pytest.approx(math.log(2) / 4)
    assert values["lnSvRatio"] == pytest.approx(math.log(0.5))
    assert values["ipr"] == pytest.approx(1.0)
    assert values["flagged"] == 0.0


def test_unitary_trajectory_keeps_singular_values_equal():
    spec = ModelSpec.default(ModelKind.DIAGONAL, size=4, beta=0.0, seed=2)
    table = trajectory_series(spec, spec.seed, record_times(30, 10), {"lnSvRatio"})
    np.testing.assert_allclose(table["lnSvRatio"], 0.0, atol=1e-10)


# ========== ENSEMBLES ==========

def test_ensemble_is_independent_of_worker_count(small_spec):
    kwargs = dict(t_max=20, n_samples=10, diagnostics={"gap", "lnSvRatio"}, progress=False)
    serial = run_ensemble(small_spec, n_jobs=1, **kwargs)
    parallel = run_ensemble(small_spec, n_jobs=2, **kwargs)
    for name in serial:
        np.testing.assert_array_equal(serial[name].mean, parallel[name].mean)
        np.testing.assert_array_equal(serial[name].variance, parallel[name].variance)
    assert serial["gap"].count[-1] == 10


def test_ensemble_arguments_are_checked(small_spec):
    with pytest.raises(ValueError):
        run_ensemble(small_spec, 10, 2, {"entropy"}, progress=False)
    with pytest.raises(ValueError):
        run_ensemble(small_spec, 10, 0, {"gap"}, progress=False)
    with pytest.raises(ValueError):
        run_ensemble(small_spec, 10, 2, {"x2"}, progress=False)


def test_ensemble_accepts_coordinate_lists(small_spec):
    series = run_ensemble(small_spec, 6, 3, {"x2"}, inputs=[[-1, 0], [1, 2]], progress=False)
    assert set(series) == {"x2[0]", "x2[1]", "x2Diff"}
    assert np.all(series["x2Diff"].mean >= 0)


def test_cauchy_schwarz_holds_at_every_record():
    spec = ModelSpec.default(ModelKind.BRICKWORK, size=6, beta=0.6, seed=5)
    series = run_ensemble(spec, 40, 12, {"traceMoments"}, progress=False)
    times, lhs, rhs = cs_inequality(series)
    assert len(times) == 40
    assert np.all(lhs <= rhs + 1e-9)
    assert cs_onset(times, lhs, rhs + 1e-9) == times[0]


@pytest.mark.parametrize(
    "holds, expected",
    [([False, True, True], 2.0), ([True, False, True], 3.0), ([True, True, False], math.inf), ([True] * 3, 1.0)],
)
def test_cs_onset(holds, expected):
    lhs = np.where(holds, 0.0, 1.0)
    assert cs_onset([1, 2, 3], lhs, np.zeros(3)) == expected


def test_map_samples_keeps_sample_order(small_spec):
    seeds = map_samples(_seed_of, small_spec, 19, progress=False)
    assert seeds == [small_spec.seed + i for i in range(19)]
    with pytest.raises(ValueError):
        map_samples(_seed_of, small_spec, 0)


def test_absorbed_ipr_is_a_participation_ratio():
    spec = ModelSpec.default(ModelKind.BRICKWORK, size=4, beta=1.0, seed=3)
    result = absorbed_ipr(spec, c=0.5, t_max=200, window=5)
    assert 0.25 - 1e-12 <= result.ipr <= 1.0 + 1e-12
    assert result.t_reached <= 200
    with pytest.raises(ValueError):
        absorbed_ipr(spec, c=0.5, t_max=10, window=0)


def test_linear_slope():
    t = np.arange(1.0, 11.0)
    values = 2 * t + 1
    values[3] = np.nan
    assert linear_slope(t, values) == pytest.approx(2.0)
    assert linear_slope(t, np.where(t <= 4, values, 0.0), t_limit=4) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        linear_slope(t, values, t_limit=1)


# ========== RELAXATION TIMES ==========

def test_relaxation_time_is_first_crossing():
    estimate = relaxation_time([10, 20, 30, 40], [0.0, -5.0, -20.0, -30.0], 1e-6)
    assert estimate.tau == 30.0 and estimate.bounded
    never = relaxation_time([10, 20], [0.0, -1.0], 1e-6)
    assert never.tau == math.inf and not never.bounded
    assert never.last_value == -1.0
    with pytest.raises(ValueError):
        relaxation_time([1], [0.0], 1.0)


def test_tau_from_gap():
    assert tau_from_gap(6e-4, 1e-2).tau == pytest.approx(7675.28, rel=1e-6)
    assert tau_from_gap(0.0, 1e-2).tau == math.inf


def test_decay_functions():
    times = [10, 20]
    series = {
        "gap": _series("gap", times, [[0.1, 0.1]]),
        "lnSvRatio": _series("lnSvRatio", times, [[-1.0, -3.0], [-3.0, -5.0]]),
        "lnEigRatio": _series("lnEigRatio", times, [[-2.0, -4.0]]),
        "x2Diff": _series("x2Diff", times, [[math.e, 1.0]]),
    }
    _, f = decay_function(RelaxationKind.TAU_DELTA, series)
    np.testing.assert_allclose(f, [-1.0, -2.0])
    _, f = decay_function("tauLambdaSv", series)
    np.testing.assert_allclose(f, [-2.0, -4.0])
    _, f = decay_function("tauLambdaEig", series)
    np.testing.assert_allclose(f, [-2.0, -4.0])
    _, f = decay_function("tauLambdaEigPrime", series)
    np.testing.assert_allclose(f, [-2.0, -4.0])
    _, f = decay_function("tauX", series)
    np.testing.assert_allclose(f, [1.0, 0.0])
    with pytest.raises(ValueError):
        decay_function("tauOmegaSv", series)


def test_tail_mean_and_fluctuations():
    series = _series("gap", [1, 2, 3, 4], [[0.0, 1.0, 2.0, 4.0], [0.0, 1.0, 2.0, 2.0]])
    assert tail_mean(series) == pytest.approx(3.0)
    report = fluctuation_report(series)
    assert report[0] == math.inf
    assert report[1] == 0.0


def test_power_law_fit_recovers_exponent():
    betas = [0.05, 0.1, 0.2, 0.4]
    fit = power_law_fit([(b, 5.0 * b ** -2) for b in betas])
    assert fit.exponent == pytest.approx(-2.0)
    assert fit.prefactor == pytest.approx(5.0)
    assert fit.residual < 1e-12 and fit.points == 4
    with pytest.raises(ValueError):
        power_law_fit([(0.1, 1.0), (0.2, 2.0)])
    with pytest.raises(ValueError):
        power_law_fit([(b, math.inf) for b in betas])


def test_repeated_relaxation_summary():
    summary = RepeatedRelaxation.from_taus("tauX", 1e-6, [10.0, math.inf, 30.0])
    assert summary.mean == 20.0 and summary.median == 20.0 and summary.unbounded == 1
    assert RepeatedRelaxation.from_taus("tauX", 1e-6, [math.inf]).mean == math.inf


def test_repeated_relaxation_runs_every_repeat():
    spec = ModelSpec.default(ModelKind.BRICKWORK, size=4, beta=1.0, seed=9)
    result = repeated_relaxation(spec, ["tauLambdaSv", "tauDelta"], 0.5, 50, 4, 2, progress=False)
    assert set(result) == {RelaxationKind.TAU_LAMBDA_SV, RelaxationKind.TAU_DELTA}
    assert all(len(r.taus) == 2 for r in result.values())
    with pytest.raises(ValueError):
        repeated_relaxation(spec, ["tauOmegaEig"], 0.5, 50, 4, 2, progress=False)
