# experiment_nodes.py - one node per experiment, plus the artifact writer

import logging
import math
import time
from typing import Any, Callable, Dict, Iterable, List, Sequence

import numpy as np

from dynamics.bounds import (
    build_twofold,
    cs_bound_rate,
    mu_of,
    nu_of,
    perturbative_slope,
    tau_omega_eig,
)
from dynamics.ensemble import (
    RelaxationKind,
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
    tail_mean,
    tau_from_gap,
)
from dynamics.fock import bunching_prediction, output_distribution
from dynamics.models import build_model
from dynamics.spectral import lyapunov_pair
from utils.artifacts import write_csv, write_json
from utils.linalg import ScaledProduct, eig_sorted
from utils.rng import SEED_MODULUS

logger = logging.getLogger(__name__)

SNAPSHOTS = 10


def _table(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Dict[str, Any]:
    return {"header": list(header), "rows": [list(row) for row in rows]}


def _seed_record(config, count: int) -> Dict[str, Any]:
    return {
        "base": config.model.seed,
        "samples": count,
        "rule": f"sample i uses (base + i) mod {SEED_MODULUS}",
    }


class ExperimentNodes:
    """Experiment node logic - every node returns a partial state update."""

    def node_for(self, experiment: str) -> Callable[[dict], dict]:
        return getattr(self, experiment.replace("-", "_") + "_node")

    # ========== SPECTRAL GAP ==========

    def gap_convergence_node(self, state: dict) -> dict:
        """Ensemble Delta_t, ln|lambda2/lambda1| and ln(Lambda2/Lambda1) against t."""
        config = state["config"]
        spec = config.model
        series = run_ensemble(
            spec, config.t_max, config.n_samples, {"gap", "lnEigRatio", "lnSvRatio"},
            record_every=config.record_every, n_jobs=config.n_jobs,
        )
        gap = series["gap"]
        delta = tail_mean(gap)
        fluctuation = fluctuation_report(gap)

        rows = zip(
            gap.times, gap.mean, gap.std, gap.count,
            series["lnEigRatio"].mean, series["lnSvRatio"].mean, -delta * gap.times,
            series["flagged"].mean, fluctuation,
        )
        header = ["t", "gap_mean", "gap_std", "count", "lnEigRatio_mean", "lnSvRatio_mean",
                  "minus_delta_t", "flagged_fraction", "gap_fluctuation"]
        logger.info("Tail mean gap %.4e over %d samples", delta, config.n_samples)
        return {
            "tables": {"gap_convergence.csv": _table(header, rows)},
            "results": {
                "tail_delta": delta,
                "tau_delta": tau_from_gap(delta, config.c).tau,
                "final_fluctuation": float(fluctuation[-1]),
                "flagged_fraction": float(np.nanmean(series["flagged"].mean)),
            },
            "seeds": _seed_record(config, config.n_samples),
            "experiment_complete": True,
        }

    def lyapunov_node(self, state: dict) -> dict:
        """Block-renormalized e1, e2 per sample, with each sample's running estimate."""
        config = state["config"]
        estimates = map_samples(
            lyapunov_pair, config.model, config.n_samples, n_jobs=config.n_jobs, desc="lyapunov",
            block_length=config.block_length, block_count=config.block_count, burn_in=config.burn_in,
        )
        rows, history = [], []
        for i, est in enumerate(estimates):
            seed = (config.model.seed + i) % SEED_MODULUS
            rows.append((i, seed, est.t, est.e1, est.e2, est.gap, est.clamped))
            history.extend((i, int(t), e1, e2, e1 - e2) for t, e1, e2 in est.history)

        gaps = np.array([est.gap for est in estimates])
        return {
            "tables": {
                "lyapunov.csv": _table(["sample", "seed", "t", "e1", "e2", "gap", "clamped"], rows),
                "lyapunov_history.csv": _table(["sample", "t", "e1", "e2", "gap"], history),
            },
            "results": {
                "gap_mean": float(np.mean(gaps)),
                "gap_median": float(np.median(gaps)),
                "gap_std": float(np.std(gaps, ddof=1)) if len(gaps) > 1 else 0.0,
                "clamped_blocks": int(sum(est.clamped for est in estimates)),
            },
            "seeds": _seed_record(config, config.n_samples),
            "experiment_complete": True,
        }

    def size_scan_node(self, state: dict) -> dict:
        """Lyapunov gap e1 - e2 against the lattice size X."""
        config = state["config"]
        rows, results = [], {}
        for size in config.sizes:
            estimates = map_samples(
                lyapunov_pair, config.model.with_size(size), config.n_samples, n_jobs=config.n_jobs,
                desc=f"X={size}", block_length=config.block_length, block_count=config.block_count,
                burn_in=config.burn_in,
            )
            gaps = np.array([est.gap for est in estimates])
            mean = float(np.mean(gaps))
            std = float(np.std(gaps, ddof=1)) if len(gaps) > 1 else 0.0
            rows.append((size, mean, std, mean * size, len(gaps)))
            results[str(size)] = {"delta": mean, "delta_times_X": mean * size}
            logger.info("X=%d: Delta = %.4e (X*Delta = %.4e)", size, mean, mean * size)
        return {
            "tables": {"size_scan.csv": _table(["X", "delta_mean", "delta_std", "delta_times_X", "samples"], rows)},
            "results": results,
            "seeds": _seed_record(config, config.n_samples),
            "experiment_complete": True,
        }

    # ========== DECAY AND RELAXATION ==========

    def decay_curves_node(self, state: dict) -> dict:
        """Every measured f_t, ln Omega averages, the small-noise and bound lines, and both sides of Cauchy-Schwarz."""
        config = state["config"]
        spec = config.model
        kinds = config.relaxation_kinds
        inputs = config.input_configurations()
        diagnostics = {"gap", "lnEigRatio", "lnSvRatio", "omegaSv", "omegaEig", "traceMoments"}
        if RelaxationKind.TAU_X in kinds:
            diagnostics.add("x2")
        series = run_ensemble(
            spec, config.t_max, config.n_samples, diagnostics, inputs=inputs,
            record_every=config.record_every, n_jobs=config.n_jobs,
        )
        times = series["gap"].times
        curves = {kind.value: decay_function(kind, series)[1] for kind in kinds}
        prediction = perturbative_slope(spec, config.c)
        perturbative_line = 0.5 * prediction.slope * times - math.log(math.sqrt(2))
        _, lhs, rhs = cs_inequality(series)

        header = ["t"] + list(curves) + ["lnOmegaSv_mean", "ln_mean_omegaSv", "ln_mean_omegaEig",
                                         "perturbative_line", "cs_lhs", "cs_rhs"]
        with np.errstate(divide="ignore", invalid="ignore"):
            columns = [times] + list(curves.values()) + [
                series["lnOmegaSv"].mean,
                np.log(series["omegaSv"].mean),
                np.log(series["omegaEig"].mean),
                perturbative_line, lhs, rhs,
            ]
        results = {
            "perturbative_slope": prediction.slope,
            "tau_omega_sv": prediction.tau_omega_sv,
            "cs_onset": cs_onset(times, lhs, rhs),
            "relaxation": {
                kind: relaxation_time(times, f, config.c, kind).tau for kind, f in curves.items()
            },
        }
        try:
            results["ln_omega_sv_slope"] = linear_slope(times, series["lnOmegaSv"].mean)
        except ValueError:
            logger.warning("Too few finite records for the ln Omega^Lambda slope")

        if config.with_bound:
            mu = mu_of(build_twofold(spec))
            nu = nu_of(spec)
            rate = cs_bound_rate(mu, nu)
            header.append("bound_line")
            columns.append(rate * times)
            results.update({"mu": mu, "nu": nu, "bound_rate": rate,
                            "tau_omega_eig": tau_omega_eig(mu, nu, config.c)})

        return {
            "tables": {"decay_curves.csv": _table(header, zip(*columns))},
            "results": results,
            "seeds": _seed_record(config, config.n_samples),
            "experiment_complete": True,
        }

    def relaxation_scan_node(self, state: dict) -> dict:
        """Two-level relaxation times per beta, the closed forms, and power-law fits in beta."""
        config = state["config"]
        inputs = config.input_configurations()
        kinds = config.relaxation_kinds
        rows = []
        points: Dict[str, List] = {kind.value: [] for kind in kinds}
        points[RelaxationKind.TAU_OMEGA_SV.value] = []
        if config.with_bound:
            points[RelaxationKind.TAU_OMEGA_EIG.value] = []

        for beta in config.betas:
            spec = config.model.with_beta(beta)
            estimates = repeated_relaxation(
                spec, kinds, config.c, config.t_max, config.n_samples, config.repeats,
                inputs=inputs, record_every=config.record_every, n_jobs=config.n_jobs,
            )
            for kind, est in estimates.items():
                rows.append((beta, kind.value, est.mean, est.median, est.unbounded, config.repeats))
                points[kind.value].append((beta, est.mean))
                logger.info("beta=%g %s: mean %.4g, median %.4g, unbounded %d",
                            beta, kind.value, est.mean, est.median, est.unbounded)

            closed = {RelaxationKind.TAU_OMEGA_SV: perturbative_slope(spec, config.c).tau_omega_sv}
            if config.with_bound:
                closed[RelaxationKind.TAU_OMEGA_EIG] = tau_omega_eig(mu_of(build_twofold(spec)), nu_of(spec), config.c)
            for kind, tau in closed.items():
                rows.append((beta, kind.value, tau, tau, int(not math.isfinite(tau)), 0))
                points[kind.value].append((beta, tau))

        fits, fit_rows = {}, []
        for kind, pts in points.items():
            usable = [(b, tau) for b, tau in pts if b > 0 and math.isfinite(tau)]
            if len(usable) < 3:
                logger.warning("No power-law fit for %s: %d bounded points", kind, len(usable))
                continue
            fit = power_law_fit(usable)
            fits[kind] = {"exponent": fit.exponent, "prefactor": fit.prefactor, "residual": fit.residual}
            fit_rows.append((kind, fit.exponent, fit.prefactor, fit.residual, fit.points))

        return {
            "tables": {
                "relaxation_times.csv": _table(["beta", "kind", "mean", "median", "unbounded", "repeats"], rows),
                "power_law_fits.csv": _table(["kind", "exponent", "prefactor", "residual", "points"], fit_rows),
            },
            "results": {"fits": fits, "taus": {k: [tau for _, tau in v] for k, v in points.items()}},
            "seeds": {
                **_seed_record(config, config.n_samples * config.repeats),
                "repeats": config.repeats,
                "repeat_rule": "repeat r uses samples r*n_samples .. (r+1)*n_samples - 1",
            },
            "experiment_complete": True,
        }

    def bound_scan_node(self, state: dict) -> dict:
        """mu, nu and the closed-form relaxation times against beta."""
        config = state["config"]
        rows, results = [], {}
        for beta in config.betas:
            spec = config.model.with_beta(beta)
            mu = mu_of(build_twofold(spec))
            nu = nu_of(spec)
            rate = cs_bound_rate(mu, nu)
            tau_eig = tau_omega_eig(mu, nu, config.c)
            tau_sv = perturbative_slope(spec, config.c).tau_omega_sv
            rows.append((beta, mu, nu, rate, tau_eig, tau_sv, abs(math.sqrt(nu) - mu)))
            results[repr(beta)] = {"mu": mu, "nu": nu, "rate": rate,
                                   "tau_omega_eig": tau_eig, "tau_omega_sv": tau_sv}
        header = ["beta", "mu", "nu", "rate", "tauOmegaEig", "tauOmegaSv", "abs_sqrt_nu_minus_mu"]
        return {
            "tables": {"bound_scan.csv": _table(header, rows)},
            "results": results,
            "seeds": {"base": config.model.seed, "samples": 0},
            "experiment_complete": True,
        }

    # ========== BOSONS ==========

    def trajectories_node(self, state: dict) -> dict:
        """<x^2> of each input along one trajectory, with the distance to the bunching prediction."""
        config = state["config"]
        spec = config.model
        inputs = config.input_configurations()
        model = build_model(spec)
        times = record_times(config.t_max, config.record_every)

        rows = []
        acc = ScaledProduct.identity(spec.size)
        absorbed_at = None
        for t in times:
            acc = model.advance(acc, spec.seed, int(t) - acc.t)
            values = measure(acc, {"lnEigRatio", "x2"}, inputs)
            mode = eig_sorted(acc.core, t=acc.t, modes=1, strict=False).right_modes[:, 0]
            distances = [
                output_distribution(acc, config_in).total_variation(bunching_prediction(mode, config_in.n))
                for config_in in inputs
            ]
            if absorbed_at is None and values["lnEigRatio"] < math.log(1e-3):
                absorbed_at = int(t)
            rows.append([int(t), values["lnEigRatio"]]
                        + [values[f"x2[{i}]"] for i in range(len(inputs))] + distances)

        header = (["t", "lnEigRatio"] + [f"x2_{i}" for i in range(len(inputs))]
                  + [f"tv_{i}" for i in range(len(inputs))])
        final = rows[-1]
        x2_final = final[2:2 + len(inputs)]
        return {
            "tables": {"trajectories.csv": _table(header, rows)},
            "results": {
                "inputs": [c.label() for c in inputs],
                "absorbed_at": absorbed_at,
                "final_x2_spread": float(max(x2_final) - min(x2_final)),
                "final_tv": final[2 + len(inputs):],
            },
            "seeds": _seed_record(config, 1),
            "experiment_complete": True,
        }

    def bunching_distribution_node(self, state: dict) -> dict:
        """Full output distributions and the bunching prediction at a few snapshot times."""
        config = state["config"]
        spec = config.model
        inputs = config.input_configurations()
        model = build_model(spec)
        times = record_times(config.t_max, config.record_every or max(1, config.t_max // SNAPSHOTS))

        rows = []
        acc = ScaledProduct.identity(spec.size)
        distances = {}
        for t in times:
            acc = model.advance(acc, spec.seed, int(t) - acc.t)
            mode = eig_sorted(acc.core, t=acc.t, modes=1, strict=False).right_modes[:, 0]
            for i, config_in in enumerate(inputs):
                dist = output_distribution(acc, config_in)
                predicted = bunching_prediction(mode, config_in.n)
                rows.extend(
                    (int(t), i, label, p, q)
                    for label, p, q in zip(dist.labels(), dist.probs, predicted.probs)
                )
                distances[f"{int(t)}:{i}"] = dist.total_variation(predicted)
        return {
            "tables": {"bunching_distribution.csv": _table(
                ["t", "input_index", "config", "prob", "bunching_prob"], rows)},
            "results": {"total_variation": distances},
            "seeds": _seed_record(config, 1),
            "experiment_complete": True,
        }

    def ipr_scan_node(self, state: dict) -> dict:
        """Dominant-mode IPR after absorption, averaged over samples, against X."""
        config = state["config"]
        rows, results = [], {}
        for size in config.sizes:
            found = map_samples(
                absorbed_ipr, config.model.with_size(size), config.n_samples, n_jobs=config.n_jobs,
                desc=f"X={size}", c=config.c, t_max=config.t_max, window=config.window,
                record_every=config.record_every,
            )
            values = np.array([f.ipr for f in found])
            reached = float(np.mean([f.reached for f in found]))
            std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
            rows.append((size, float(np.mean(values)), std, reached, len(values)))
            results[str(size)] = {"ipr": float(np.mean(values)), "reached_fraction": reached}
            if reached < 1.0:
                logger.warning("X=%d: only %.0f%% of samples reached the threshold", size, 100 * reached)
        return {
            "tables": {"ipr_scan.csv": _table(["X", "ipr_mean", "ipr_std", "reached_fraction", "samples"], rows)},
            "results": results,
            "seeds": _seed_record(config, config.n_samples),
            "experiment_complete": True,
        }

    # ========== OUTPUT ==========

    def write_artifacts_node(self, state: dict) -> dict:
        """Config echo, one CSV per table, and the JSON summary."""
        config = state["config"]
        digest = state["config_hash"]
        destination = config.destination
        destination.mkdir(parents=True, exist_ok=True)

        written = [str(write_json(destination / "config.json", config.to_dict()))]
        for name, table in sorted(state.get("tables", {}).items()):
            written.append(str(write_csv(destination / name, table["header"], table["rows"], digest)))

        start = state.get("start_time")
        wall_time = time.time() - start if start is not None else None
        summary = {
            "experiment": config.experiment,
            "config_hash": digest,
            "seeds": state.get("seeds", {}),
            "results": state.get("results", {}),
            "wall_time": wall_time,
        }
        written.append(str(write_json(destination / "summary.json", summary)))
        logger.info("Wrote %d files to %s", len(written), destination)
        return {"written": written, "wall_time": wall_time, "artifacts_written": True}
