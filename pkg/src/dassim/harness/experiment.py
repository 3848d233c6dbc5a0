"""Twin experiments: truth simulation, the forecast/analysis cycle, metrics and output files."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .. import rng as rngmod
from ..filters import (
    Diagnostics,
    FilterState,
    enkf_perturbed_step,
    esrf_step,
    etkb_filter_step,
    guided_smc_step,
    kalman_forecast,
    kalman_update,
    meanfield_transform_step,
    nudged_gaussian_proposal,
    optimal_gaussian_proposal,
    sir_filter_step,
    transition_proposal,
)
from ..models import (
    deterministic_ensemble_step,
    euler_maruyama_step,
    gaussian_prior_ensemble,
    generate_twin_data,
    log_likelihood,
)
from ..prob import WeightedEnsemble, empirical_cov, empirical_mean
from .config import ExperimentConfig


@dataclass(frozen=True)
class MetricsRecord:
    """Per-step diagnostics for steps ``1..n_steps`` (column ``k`` is step ``k+1``)."""

    steps: np.ndarray
    times: np.ndarray
    truth: np.ndarray  # (N, T)
    means: np.ndarray  # (N, T)
    covariances: np.ndarray  # (T, N, N)
    spread: np.ndarray
    rmse: np.ndarray
    ess: np.ndarray
    resampled: np.ndarray
    oracle_means: Optional[np.ndarray] = None
    oracle_covariances: Optional[np.ndarray] = None
    oracle_gap: Optional[np.ndarray] = None

    @property
    def time_mean_rmse(self):
        return float(self.rmse.mean()) if self.rmse.size else float("nan")

    @property
    def time_mean_spread(self):
        return float(self.spread.mean()) if self.spread.size else float("nan")

    def summary(self):
        def clean(v):
            return None if v is None or not math.isfinite(v) else v

        out = {
            "n_steps": int(self.steps.size),
            "time_mean_rmse": clean(self.time_mean_rmse),
            "time_mean_spread": clean(self.time_mean_spread),
            "resample_count": int(self.resampled.sum()),
        }
        if self.oracle_gap is not None:
            out["max_oracle_gap"] = clean(float(self.oracle_gap.max()) if self.oracle_gap.size else None)
        return out


def compute_rmse(estimate, truth):
    """``sqrt(mean_n |est_n - truth_n|^2 / N)`` over sequences of N-vectors (rows)."""
    est = np.asarray(estimate, float)
    tru = np.asarray(truth, float)
    if est.ndim == 1:
        est = est[:, None]
    if tru.ndim == 1:
        tru = tru[:, None]
    if est.shape != tru.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {tru.shape}")
    if est.shape[0] == 0:
        raise ValueError("empty sequences")
    return math.sqrt(float(np.mean(np.sum((est - tru) ** 2, axis=1) / est.shape[1])))


def twin_data(cfg: ExperimentConfig):
    return generate_twin_data(cfg.model, cfg.observation, cfg.x0, cfg.n_steps, cfg.seed)


def kalman_reference_run(cfg: ExperimentConfig, data=None):
    """Exact filtering distributions for steps ``0..n_steps`` of a linear experiment."""
    if cfg.model.linear is None or not cfg.observation.is_linear:
        raise ValueError("the Kalman reference needs a linear model and a linear observation")
    data = twin_data(cfg) if data is None else data
    o = cfg.observation
    g = cfg.prior
    out = [g]
    for n in range(1, cfg.n_steps + 1):
        g = kalman_forecast(g, cfg.model)
        y = data.observation_at(n)
        if y is not None:
            g = kalman_update(g, o.H, o.noise_cov, y)
        out.append(g)
    return out


def _proposal(cfg):
    kind = cfg.options["proposal"]
    if kind == "optimal":
        return optimal_gaussian_proposal(cfg.model, cfg.observation)
    if kind == "transition":
        return transition_proposal(cfg.model)
    return nudged_gaussian_proposal(cfg.model, cfg.observation)


def _analysis(cfg, e, y, rng):
    o = cfg.observation
    name = cfg.filter_name
    opts = cfg.options
    if name == "enkf":
        return enkf_perturbed_step(e, o.H, o.noise_cov, y, rng)
    if name in ("esrf", "esrf-ot"):
        ll = log_likelihood(o, e.members, y) if opts["bias_correction"] else None
        return esrf_step(e, o.H, o.noise_cov, y, bias_correction=opts["bias_correction"],
                         transform="optimal" if name == "esrf-ot" else "symmetric", loglik=ll)
    if name == "etkbf":
        return etkb_filter_step(e, o.H, o.noise_cov, y, opts["n_substeps"])
    if name == "meanfield":
        return meanfield_transform_step(e, o, y, opts["n_substeps"], density=opts["density"])
    raise ValueError(f"unknown filter {name!r}")


def run_filter(cfg: ExperimentConfig, data):
    """Run the configured filter over ``data``; yields ``(step, FilterState)``."""
    m = cfg.model
    frng = rngmod.stream(cfg.seed if cfg.filter_seed is None else cfg.filter_seed, "filter")
    X0 = gaussian_prior_ensemble(cfg.prior, cfg.M, frng, matched=cfg.options["init"] == "matched")
    state = FilterState(WeightedEnsemble(X0), 0)
    prop = _proposal(cfg) if cfg.filter_name == "guided" else None
    opts = cfg.options
    for n in range(1, cfg.n_steps + 1):
        y = data.observation_at(n)
        if cfg.filter_name == "sir":
            state = sir_filter_step(state, m, cfg.observation, y, opts["scheme"], opts["ess_threshold"], frng)
        elif cfg.filter_name == "guided":
            state = guided_smc_step(state, m, cfg.observation, y, prop, opts["scheme"],
                                    opts["ess_threshold"], frng)
        else:
            e = state.ensemble
            if opts["forecast"] == "inflation":
                e = deterministic_ensemble_step(m, e)
            else:
                e = e.with_members(euler_maruyama_step(m, e.members, frng.standard_normal(e.members.shape)))
            forecast_mean = empirical_mean(e)
            if y is not None:
                e = _analysis(cfg, e, y, frng)
            incr = float(np.linalg.norm(empirical_mean(e) - forecast_mean))
            d = state.diagnostics
            state = FilterState(e, n, Diagnostics(float(e.size), d.last_resample_step, incr, False))
        yield n, state


def run_twin_experiment(cfg: ExperimentConfig, output=None) -> MetricsRecord:
    """Simulate truth and observations, run the filter, and write outputs.

    Files go to ``output`` (or ``cfg.output``) when set: ``metrics.csv`` and
    ``summary.json`` according to ``cfg.formats``.  The result is a pure
    function of the config.
    """
    data = twin_data(cfg)
    N, T = cfg.model.dim, cfg.n_steps
    means = np.empty((N, T))
    covs = np.empty((T, N, N))
    ess = np.empty(T)
    resampled = np.zeros(T, dtype=bool)
    for n, state in run_filter(cfg, data):
        e = state.estimate
        means[:, n - 1] = empirical_mean(e)
        covs[n - 1] = empirical_cov(e)
        ess[n - 1] = state.diagnostics.ess
        resampled[n - 1] = state.diagnostics.resampled
    truth = np.asarray(data.truth[:, 1:])
    spread = np.sqrt(np.trace(covs, axis1=1, axis2=2) / N)
    rmse = np.sqrt(np.sum((means - truth) ** 2, axis=0) / N)
    kw = {}
    if cfg.oracle:
        ref = kalman_reference_run(cfg, data)[1:]
        om = np.array([g.mean for g in ref]).T.reshape(N, T)
        kw["oracle_means"] = om
        kw["oracle_covariances"] = np.array([g.cov for g in ref]).reshape(T, N, N)
        kw["oracle_gap"] = np.max(np.abs(means - om), axis=0) if T else np.empty(0)
    rec = MetricsRecord(
        steps=np.arange(1, T + 1), times=np.asarray(data.times[1:]), truth=truth, means=means,
        covariances=covs, spread=spread, rmse=rmse, ess=ess, resampled=resampled, **kw,
    )
    out = output if output is not None else cfg.output
    if out is not None:
        write_outputs(rec, cfg, out)
    return rec


def _fmt(v):
    return "%.17g" % v


def write_metrics_csv(rec: MetricsRecord, path):
    N = rec.truth.shape[0]
    header = ["step", "time"] + [f"truth_{i}" for i in range(1, N + 1)] + [f"mean_{i}" for i in range(1, N + 1)]
    header += ["spread", "rmse", "ess", "resampled"]
    if rec.oracle_means is not None:
        header += [f"oracle_mean_{i}" for i in range(1, N + 1)] + ["oracle_gap"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in range(rec.steps.size):
            row = [str(int(rec.steps[k])), _fmt(rec.times[k])]
            row += [_fmt(v) for v in rec.truth[:, k]] + [_fmt(v) for v in rec.means[:, k]]
            row += [_fmt(rec.spread[k]), _fmt(rec.rmse[k]), _fmt(rec.ess[k]), str(int(rec.resampled[k]))]
            if rec.oracle_means is not None:
                row += [_fmt(v) for v in rec.oracle_means[:, k]] + [_fmt(rec.oracle_gap[k])]
            w.writerow(row)


def write_outputs(rec: MetricsRecord, cfg: ExperimentConfig, outdir):
    d = Path(outdir)
    d.mkdir(parents=True, exist_ok=True)
    if "csv" in cfg.formats:
        write_metrics_csv(rec, d / "metrics.csv")
    if "json" in cfg.formats:
        summary = {"filter": cfg.filter_name, "M": cfg.M, "seed": cfg.seed, **rec.summary()}
        (d / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def write_twin_data(data, outdir):
    """``truth.csv`` (step, time, truth_i) and ``observations.csv`` (step, time, y_k)."""
    d = Path(outdir)
    d.mkdir(parents=True, exist_ok=True)
    N = data.truth.shape[0]
    K = data.observations.shape[0]
    with open(d / "truth.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "time"] + [f"truth_{i}" for i in range(1, N + 1)])
        for n in range(data.truth.shape[1]):
            w.writerow([str(n), _fmt(data.times[n])] + [_fmt(v) for v in data.truth[:, n]])
    with open(d / "observations.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "time"] + [f"y_{k}" for k in range(1, K + 1)])
        for j, n in enumerate(data.obs_times):
            w.writerow([str(int(n)), _fmt(data.times[n])] + [_fmt(v) for v in data.observations[:, j]])
