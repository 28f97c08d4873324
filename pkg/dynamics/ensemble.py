# dynamics/ensemble.py

"""Monte Carlo ensembles of noisy trajectories and the relaxation times read off them.

Samples are grouped into fixed-size chunks; each chunk accumulates its own
moments and chunks are merged in chunk order. The grouping never depends on
the worker count, so results are bit-identical for any number of workers.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy import stats
from tqdm import tqdm

from config import Config
from dynamics.bounds import check_threshold
from dynamics.fock import FockConfiguration, ipr, mean_x_squared, output_distribution
from dynamics.models import ModelSpec, build_model
from dynamics.spectral import (
    _second_elementary,
    gap_from_snapshot,
    omega_eig_from,
    omega_sv_from,
)
from utils.linalg import ScaledProduct, eig_sorted, svd_sorted
from utils.rng import sample_seed

logger = logging.getLogger(__name__)

DIAGNOSTICS = ("gap", "lnEigRatio", "lnSvRatio", "omegaEig", "omegaSv", "x2", "traceMoments", "ipr")
LOG_MOMENT_ORDERS = (-2.0, 1.0, 2.0)
CHUNK_SIZE = 8
MAX_RECORDS = 10_000

_EIGEN_DIAGNOSTICS = {"gap", "lnEigRatio", "omegaEig", "traceMoments", "ipr"}
_TINY = np.finfo(float).tiny


# ========== ACCUMULATION ==========

class MomentAccumulator:
    """Running count, mean and M2 per record, plus ln sum exp(q x) for q in LOG_MOMENT_ORDERS.

    Non-finite values are skipped. Two accumulators merge associatively.
    """

    def __init__(self, length: int):
        self.count = np.zeros(length, dtype=np.int64)
        self.mean = np.zeros(length)
        self.m2 = np.zeros(length)
        self.log_max = {q: np.full(length, -np.inf) for q in LOG_MOMENT_ORDERS}
        self.log_sum = {q: np.zeros(length) for q in LOG_MOMENT_ORDERS}

    @staticmethod
    def _rescale(total, old_max, new_max):
        with np.errstate(invalid="ignore", over="ignore"):
            return np.where(np.isneginf(old_max), 0.0, total * np.exp(old_max - new_max))

    def add(self, values: np.ndarray) -> None:
        x = np.asarray(values, dtype=np.float64)
        ok = np.isfinite(x)
        x_ok = np.where(ok, x, 0.0)
        count = self.count + ok
        delta = np.where(ok, x_ok - self.mean, 0.0)
        mean = self.mean + delta / np.maximum(count, 1)
        self.m2 = self.m2 + np.where(ok, delta * (x_ok - mean), 0.0)
        self.mean, self.count = mean, count

        for q in LOG_MOMENT_ORDERS:
            y = q * x_ok
            old = self.log_max[q]
            new = np.where(ok, np.maximum(old, y), old)
            total = self._rescale(self.log_sum[q], old, new)
            with np.errstate(invalid="ignore", over="ignore"):
                self.log_sum[q] = total + np.where(ok, np.exp(y - new), 0.0)
            self.log_max[q] = new

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        merged = MomentAccumulator(len(self.count))
        count = self.count + other.count
        safe = np.maximum(count, 1)
        delta = other.mean - self.mean
        merged.count = count
        merged.mean = np.where(count > 0, self.mean + delta * other.count / safe, 0.0)
        merged.m2 = self.m2 + other.m2 + delta ** 2 * self.count * other.count / safe
        for q in LOG_MOMENT_ORDERS:
            new = np.maximum(self.log_max[q], other.log_max[q])
            merged.log_max[q] = new
            merged.log_sum[q] = (
                self._rescale(self.log_sum[q], self.log_max[q], new)
                + self._rescale(other.log_sum[q], other.log_max[q], new)
            )
        return merged

    def finalize(self, name: str, times: np.ndarray) -> "EnsembleSeries":
        with np.errstate(invalid="ignore", divide="ignore"):
            variance = np.where(self.count > 1, self.m2 / np.maximum(self.count - 1, 1), 0.0)
            mean = np.where(self.count > 0, self.mean, np.nan)
            log_moments = {
                q: np.where(self.count > 0, self.log_max[q] + np.log(self.log_sum[q] / np.maximum(self.count, 1)), np.nan)
                for q in LOG_MOMENT_ORDERS
            }
        return EnsembleSeries(name, np.asarray(times), mean, np.maximum(variance, 0.0), self.count.copy(), log_moments)


@dataclass(frozen=True)
class EnsembleSeries:
    name: str
    times: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    count: np.ndarray
    log_moments: Dict[float, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)

    @property
    def stderr(self) -> np.ndarray:
        return self.std / np.sqrt(np.maximum(self.count, 1))

    def log_mean_exp(self, q: float) -> np.ndarray:
        """ln of the ensemble average of exp(q x) at every recorded time."""
        if float(q) not in self.log_moments:
            raise ValueError(f"log-moment of order {q} not tracked (have {sorted(self.log_moments)})")
        return self.log_moments[float(q)]

    def rows(self) -> List[Tuple[int, float, float, int]]:
        return [
            (int(t), float(m), float(s), int(n))
            for t, m, s, n in zip(self.times, self.mean, self.std, self.count)
        ]


# ========== TRAJECTORIES ==========

def record_times(t_max: int, record_every: Optional[int] = None) -> np.ndarray:
    if t_max < 1:
        raise ValueError(f"t_max must be >= 1, got {t_max}")
    step = record_every or max(1, t_max // MAX_RECORDS)
    if step > t_max:
        raise ValueError(f"record_every={step} exceeds t_max={t_max}: nothing would be recorded")
    return np.arange(step, t_max + 1, step, dtype=np.int64)


def series_names(diagnostics: Iterable[str], n_inputs: int = 0) -> List[str]:
    names = []
    diagnostics = set(diagnostics)
    if diagnostics & _EIGEN_DIAGNOSTICS:
        names.append("flagged")
    for name in ("gap", "lnEigRatio", "lnSvRatio", "omegaEig", "omegaSv", "ipr"):
        if name in diagnostics:
            names.append(name)
    if "omegaSv" in diagnostics:
        names.append("lnOmegaSv")
    if "x2" in diagnostics:
        names.extend(f"x2[{i}]" for i in range(n_inputs))
        if n_inputs >= 2:
            names.append("x2Diff")
    if "traceMoments" in diagnostics:
        names.extend(["lnTraceSq", "lnTraceDiffSq", "lnInvOmegaEig"])
    return names


def _safe_log(value: float) -> float:
    return math.log(value) if value > 0 else -math.inf


def measure(acc: ScaledProduct, diagnostics: Iterable[str],
            inputs: Sequence[FockConfiguration] = ()) -> Dict[str, float]:
    """All requested diagnostics of one trajectory at its current time."""
    diagnostics = set(diagnostics)
    values: Dict[str, float] = {}
    core, t = acc.core, acc.t

    if diagnostics & _EIGEN_DIAGNOSTICS:
        snapshot = eig_sorted(core, with_left=True, t=t, modes=2, strict=False)
        gap = gap_from_snapshot(snapshot, t)
        values["flagged"] = float(snapshot.flagged)
        if "gap" in diagnostics:
            values["gap"] = gap.delta
        if "lnEigRatio" in diagnostics:
            values["lnEigRatio"] = gap.log_ratio
        if "omegaEig" in diagnostics:
            values["omegaEig"] = omega_eig_from(snapshot.eigenvalues, t)
        if "ipr" in diagnostics:
            values["ipr"] = ipr(snapshot.right_modes[:, 0])
        if "traceMoments" in diagnostics:
            ln_trace = _safe_log(abs(np.trace(core)) ** 2)
            ln_diff = _safe_log(abs(2 * _second_elementary(snapshot.eigenvalues)) ** 2)
            values["lnTraceSq"] = 2 * acc.log_scale + ln_trace
            values["lnTraceDiffSq"] = 4 * acc.log_scale + ln_diff
            values["lnInvOmegaEig"] = 2 * ln_trace - ln_diff

    if diagnostics & {"lnSvRatio", "omegaSv"}:
        singular = svd_sorted(core, t=t).singular_values
        if "lnSvRatio" in diagnostics:
            values["lnSvRatio"] = math.log(max(singular[1], _TINY)) - math.log(singular[0])
        if "omegaSv" in diagnostics:
            omega = omega_sv_from(singular)
            values["omegaSv"] = omega
            values["lnOmegaSv"] = _safe_log(omega) if math.isfinite(omega) else math.nan

    if "x2" in diagnostics:
        x2 = [mean_x_squared(output_distribution(acc, config)) for config in inputs]
        for i, value in enumerate(x2):
            values[f"x2[{i}]"] = value
        if len(x2) >= 2:
            values["x2Diff"] = abs(x2[0] - x2[1])
    return values


def trajectory_series(spec: ModelSpec, seed: int, times: np.ndarray, diagnostics: Iterable[str],
                      inputs: Sequence[FockConfiguration] = ()) -> Dict[str, np.ndarray]:
    """Diagnostics of the single trajectory `seed` at every recorded time."""
    model = build_model(spec)
    names = series_names(diagnostics, len(inputs))
    table = {name: np.full(len(times), np.nan) for name in names}
    acc = ScaledProduct.identity(spec.size)
    for r, t in enumerate(times):
        acc = model.advance(acc, seed, int(t) - acc.t)
        for name, value in measure(acc, diagnostics, inputs).items():
            table[name][r] = value
    return table


def _run_chunk(spec, seeds, times, diagnostics, inputs) -> Dict[str, MomentAccumulator]:
    accumulators = {name: MomentAccumulator(len(times)) for name in series_names(diagnostics, len(inputs))}
    for seed in seeds:
        for name, values in trajectory_series(spec, seed, times, diagnostics, inputs).items():
            accumulators[name].add(values)
    return accumulators


def _as_inputs(spec: ModelSpec, inputs) -> List[FockConfiguration]:
    return [
        config if isinstance(config, FockConfiguration) else FockConfiguration(tuple(config), spec.size)
        for config in (inputs or ())
    ]


def run_ensemble(
    spec: ModelSpec,
    t_max: int,
    n_samples: int,
    diagnostics: Iterable[str],
    inputs: Sequence = (),
    record_every: Optional[int] = None,
    n_jobs: int = 1,
    progress: Optional[bool] = None,
) -> Dict[str, EnsembleSeries]:
    """Ensemble statistics of the requested diagnostics; sample i uses seed spec.seed + i."""
    diagnostics = tuple(sorted(set(diagnostics)))
    unknown = [d for d in diagnostics if d not in DIAGNOSTICS]
    if unknown:
        raise ValueError(f"unknown diagnostics {unknown}; choose from {list(DIAGNOSTICS)}")
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    inputs = _as_inputs(spec, inputs)
    if "x2" in diagnostics and not inputs:
        raise ValueError("the x2 diagnostic needs at least one input configuration")

    times = record_times(t_max, record_every)
    seeds = [sample_seed(spec.seed, i) for i in range(n_samples)]
    chunks = [seeds[i:i + CHUNK_SIZE] for i in range(0, n_samples, CHUNK_SIZE)]
    progress = Config.PROGRESS if progress is None else progress

    logger.info(
        "Ensemble %s X=%d beta=%g: %d samples x %d steps (%d records), %s",
        spec.kind.value, spec.size, spec.beta, n_samples, t_max, len(times), ", ".join(diagnostics),
    )
    parallel = Parallel(n_jobs=n_jobs, return_as="generator")
    parts = parallel(delayed(_run_chunk)(spec, chunk, times, diagnostics, inputs) for chunk in chunks)

    total: Optional[Dict[str, MomentAccumulator]] = None
    for part in tqdm(parts, total=len(chunks), desc="samples", unit="chunk", disable=not progress):
        total = part if total is None else {name: total[name].merge(part[name]) for name in total}
    return {name: acc.finalize(name, times) for name, acc in total.items()}


def _map_chunk(function, spec, seeds, kwargs) -> list:
    return [function(spec.with_seed(seed), **kwargs) for seed in seeds]


def map_samples(function, spec: ModelSpec, n_samples: int, n_jobs: int = 1,
                progress: Optional[bool] = None, desc: str = "samples", **kwargs) -> list:
    """[function(spec with seed spec.seed + i, **kwargs) for i < n_samples], in sample order."""
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    seeds = [sample_seed(spec.seed, i) for i in range(n_samples)]
    chunks = [seeds[i:i + CHUNK_SIZE] for i in range(0, n_samples, CHUNK_SIZE)]
    progress = Config.PROGRESS if progress is None else progress
    parallel = Parallel(n_jobs=n_jobs, return_as="generator")
    parts = parallel(delayed(_map_chunk)(function, spec, chunk, kwargs) for chunk in chunks)
    results = []
    for part in tqdm(parts, total=len(chunks), desc=desc, unit="chunk", disable=not progress):
        results.extend(part)
    return results


@dataclass(frozen=True)
class AbsorbedIpr:
    ipr: float
    reached: bool
    t_reached: int


def absorbed_ipr(spec: ModelSpec, c: float, t_max: int, window: int = 100,
                 record_every: Optional[int] = None) -> AbsorbedIpr:
    """IPR of the dominant mode averaged over `window` steps after |lambda_2/lambda_1| first drops below c.

    The ratio is checked every recording step; if it never drops below c the
    window starts at t_max.
    """
    check_threshold(c)
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    model = build_model(spec)
    step = int(record_times(t_max, record_every)[0])
    acc = ScaledProduct.identity(spec.size)
    reached = False
    while acc.t < t_max:
        acc = model.advance(acc, spec.seed, min(step, t_max - acc.t))
        snapshot = eig_sorted(acc.core, with_left=True, t=acc.t, modes=2, strict=False)
        if gap_from_snapshot(snapshot, acc.t).log_ratio < math.log(c):
            reached = True
            break
    t_reached = acc.t

    values = []
    for _ in range(window):
        acc = model.advance(acc, spec.seed, 1)
        snapshot = eig_sorted(acc.core, t=acc.t, modes=1, strict=False)
        values.append(ipr(snapshot.right_modes[:, 0]))
    return AbsorbedIpr(float(np.mean(values)), reached, t_reached)


def linear_slope(times: Sequence[float], values: Sequence[float], t_limit: Optional[float] = None) -> float:
    """Least-squares slope of values against t over finite points with t <= t_limit."""
    times = np.asarray(times, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    keep = np.isfinite(values)
    if t_limit is not None:
        keep &= times <= t_limit
    if np.count_nonzero(keep) < 2:
        raise ValueError("a slope needs at least two finite points")
    return float(stats.linregress(times[keep], values[keep]).slope)


def cs_inequality(series: Dict[str, EnsembleSeries]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(times, lhs, rhs) in logs: ln[(avg|tr V|^2)^2 / avg|tr(V)^2 - tr(V^2)|^2] and ln avg(1/Omega^lambda)."""
    trace_sq = series["lnTraceSq"]
    lhs = 2 * trace_sq.log_mean_exp(1) - series["lnTraceDiffSq"].log_mean_exp(1)
    rhs = series["lnInvOmegaEig"].log_mean_exp(1)
    return trace_sq.times, lhs, rhs


def cs_onset(times: Sequence[float], lhs: Sequence[float], rhs: Sequence[float]) -> float:
    """First recorded t from which lhs <= rhs holds at every later record; inf if it fails at the end."""
    times = np.asarray(times)
    holds = np.asarray(lhs) <= np.asarray(rhs)
    if not len(holds) or not holds[-1]:
        return math.inf
    failing = np.flatnonzero(~holds)
    return float(times[failing[-1] + 1]) if len(failing) else float(times[0])


# ========== RELAXATION TIMES ==========

class RelaxationKind(str, Enum):
    TAU_DELTA = "tauDelta"
    TAU_LAMBDA_EIG = "tauLambdaEig"
    TAU_LAMBDA_SV = "tauLambdaSv"
    TAU_X = "tauX"
    TAU_LAMBDA_EIG_PRIME = "tauLambdaEigPrime"
    TAU_LAMBDA_SV_PRIME = "tauLambdaSvPrime"
    TAU_OMEGA_SV = "tauOmegaSv"
    TAU_OMEGA_EIG = "tauOmegaEig"


REQUIRED_DIAGNOSTIC = {
    RelaxationKind.TAU_DELTA: "gap",
    RelaxationKind.TAU_LAMBDA_EIG: "lnEigRatio",
    RelaxationKind.TAU_LAMBDA_SV: "lnSvRatio",
    RelaxationKind.TAU_X: "x2",
    RelaxationKind.TAU_LAMBDA_EIG_PRIME: "lnEigRatio",
    RelaxationKind.TAU_LAMBDA_SV_PRIME: "lnSvRatio",
}
MEASURED_KINDS = tuple(REQUIRED_DIAGNOSTIC)


@dataclass(frozen=True)
class RelaxationEstimate:
    kind: RelaxationKind
    c: float
    tau: float
    last_value: float = float("nan")
    resolution: int = 1

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.tau)


def decay_function(kind, series: Dict[str, EnsembleSeries]) -> Tuple[np.ndarray, np.ndarray]:
    """(times, f_t) of a measured relaxation-time kind."""
    kind = RelaxationKind(kind)
    if kind not in REQUIRED_DIAGNOSTIC:
        raise ValueError(f"{kind.value} has a closed form only")
    with np.errstate(divide="ignore", invalid="ignore"):
        if kind is RelaxationKind.TAU_LAMBDA_SV:
            s = series["lnSvRatio"]
            return s.times, s.mean
        if kind is RelaxationKind.TAU_LAMBDA_SV_PRIME:
            s = series["lnSvRatio"]
            return s.times, -0.5 * s.log_mean_exp(-2)
        if kind is RelaxationKind.TAU_LAMBDA_EIG:
            s = series["lnEigRatio"]
            return s.times, -0.5 * s.log_mean_exp(-2)
        if kind is RelaxationKind.TAU_LAMBDA_EIG_PRIME:
            s = series["lnEigRatio"]
            return s.times, 0.5 * s.log_mean_exp(2)
        if kind is RelaxationKind.TAU_X:
            s = series["x2Diff"]
            return s.times, np.log(s.mean)
        s = series["gap"]
        return s.times, -s.mean * s.times


def relaxation_time(times: Sequence[float], f: Sequence[float], c: float,
                    kind=RelaxationKind.TAU_LAMBDA_SV, resolution: int = 1) -> RelaxationEstimate:
    """Smallest recorded t with f_t <= ln c; unbounded (inf) if never reached."""
    check_threshold(c)
    times = np.asarray(times)
    f = np.asarray(f, dtype=np.float64)
    hits = np.flatnonzero(f <= math.log(c))
    last = float(f[-1]) if len(f) else float("nan")
    tau = float(times[hits[0]]) if len(hits) else math.inf
    return RelaxationEstimate(RelaxationKind(kind), c, tau, last, resolution)


def tau_from_gap(delta: float, c: float) -> RelaxationEstimate:
    """tau_Delta = |ln c| / Delta."""
    check_threshold(c)
    tau = abs(math.log(c)) / delta if delta > 0 else math.inf
    return RelaxationEstimate(RelaxationKind.TAU_DELTA, c, tau, -delta)


def tail_mean(series: EnsembleSeries, fraction: float = 0.25) -> float:
    """Average of the series mean over its last `fraction` of records."""
    records = max(1, int(round(len(series.mean) * fraction)))
    return float(np.nanmean(series.mean[-records:]))


@dataclass(frozen=True)
class PowerLawFit:
    exponent: float
    prefactor: float
    residual: float
    points: int


def power_law_fit(points: Sequence[Tuple[float, float]]) -> PowerLawFit:
    """Least-squares line through (ln beta, ln tau)."""
    points = list(points)
    if len(points) < 3:
        raise ValueError(f"a power-law fit needs at least 3 points, got {len(points)}")
    beta = np.array([p[0] for p in points], dtype=np.float64)
    tau = np.array([p[1] for p in points], dtype=np.float64)
    if not np.all(np.isfinite(tau)):
        raise ValueError("power-law fit over unbounded relaxation times")
    if np.any(beta <= 0) or np.any(tau <= 0):
        raise ValueError("power-law fit needs positive beta and tau")
    x, y = np.log(beta), np.log(tau)
    fit = stats.linregress(x, y)
    residual = float(np.sqrt(np.mean((y - (fit.intercept + fit.slope * x)) ** 2)))
    return PowerLawFit(float(fit.slope), float(math.exp(fit.intercept)), residual, len(points))


def fluctuation_report(series: EnsembleSeries) -> np.ndarray:
    """std/mean at every recorded time; infinite where the mean is zero."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = series.std / np.abs(series.mean)
    return np.where(series.mean == 0, np.inf, ratio)


@dataclass(frozen=True)
class RepeatedRelaxation:
    kind: RelaxationKind
    c: float
    taus: np.ndarray
    mean: float
    median: float
    unbounded: int

    @classmethod
    def from_taus(cls, kind, c: float, taus: Sequence[float]) -> "RepeatedRelaxation":
        taus = np.asarray(taus, dtype=np.float64)
        bounded = taus[np.isfinite(taus)]
        mean = float(np.mean(bounded)) if len(bounded) else math.inf
        median = float(np.median(bounded)) if len(bounded) else math.inf
        return cls(RelaxationKind(kind), c, taus, mean, median, int(len(taus) - len(bounded)))


def repeated_relaxation(
    spec: ModelSpec,
    kinds: Iterable,
    c: float,
    t_max: int,
    n_samples: int,
    repeats: int,
    inputs: Sequence = (),
    record_every: Optional[int] = None,
    n_jobs: int = 1,
    progress: Optional[bool] = None,
) -> Dict[RelaxationKind, RepeatedRelaxation]:
    """Two-level estimate: each repeat averages n_samples trajectories into f_t and reads one tau.

    Repeat r uses sample seeds spec.seed + r * n_samples + i.
    """
    check_threshold(c)
    kinds = [RelaxationKind(k) for k in kinds]
    closed = [k.value for k in kinds if k not in REQUIRED_DIAGNOSTIC]
    if closed:
        raise ValueError(f"closed-form kinds cannot be measured: {closed}")
    diagnostics = {REQUIRED_DIAGNOSTIC[k] for k in kinds}
    resolution = int(record_times(t_max, record_every)[0])

    taus: Dict[RelaxationKind, List[float]] = {k: [] for k in kinds}
    for r in range(repeats):
        series = run_ensemble(
            spec.with_seed(sample_seed(spec.seed, r * n_samples)), t_max, n_samples,
            diagnostics, inputs, record_every, n_jobs, progress,
        )
        for kind in kinds:
            if kind is RelaxationKind.TAU_DELTA:
                estimate = tau_from_gap(tail_mean(series["gap"]), c)
            else:
                times, f = decay_function(kind, series)
                estimate = relaxation_time(times, f, c, kind, resolution)
            taus[kind].append(estimate.tau)
        logger.debug("Repeat %d/%d done", r + 1, repeats)
    return {kind: RepeatedRelaxation.from_taus(kind, c, values) for kind, values in taus.items()}
