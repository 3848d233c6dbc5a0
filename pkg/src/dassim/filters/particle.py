"""Importance weighting, bootstrap SIR and guided sequential Monte Carlo."""
from __future__ import annotations

import numpy as np

from ..errors import NumericalError
from ..models import (
    ModelSpec,
    ObservationModel,
    euler_maruyama_step,
    log_likelihood,
    transition_log_density,
)
from ..prob import LOG_2PI, WeightedEnsemble, empirical_mean
from ..resampling import effective_sample_size, resample
from .state import Diagnostics, FilterState, GuidedProposal


def _reweight(weights, log_increment):
    """``w_i exp(l_i)`` renormalised in the log domain."""
    with np.errstate(divide="ignore"):
        lw = np.log(weights) + log_increment
    top = np.max(lw)
    if not np.isfinite(top):
        raise NumericalError("weight collapse: all likelihoods underflow")
    w = np.exp(lw - top)
    w[np.isnan(w)] = 0.0
    return w / w.sum()


def bayes_importance_update(e: WeightedEnsemble, o: ObservationModel, y0) -> WeightedEnsemble:
    """Reweight by the likelihood of ``y0``; members are unchanged."""
    return e.with_weights(_reweight(e.weights, log_likelihood(o, e.members, y0)))


def incremental_bayes_weights(e: WeightedEnsemble, o: ObservationModel, y0, D) -> WeightedEnsemble:
    """Apply the likelihood in ``D`` tempered increments ``exp(l / D)``."""
    D = int(D)
    if D < 1:
        raise ValueError("D must be >= 1")
    inc = log_likelihood(o, e.members, y0) / D
    w = e.weights
    for _ in range(D):
        w = _reweight(w, inc)
    return e.with_weights(w)


def _finish(s: FilterState, X, w, forecast_mean, scheme, ess_threshold, rng) -> FilterState:
    M = X.shape[1]
    e = WeightedEnsemble(X, w)
    ess = effective_sample_size(w)
    thresh = 0.5 * M if ess_threshold is None else float(ess_threshold)
    step = s.time_index + 1
    incr = float(np.linalg.norm(empirical_mean(e) - forecast_mean))
    last = s.diagnostics.last_resample_step
    resampled = ess < thresh
    weighted = None
    if resampled:
        weighted = e
        e, _ = resample(e, rng, scheme)
        last = step
    return FilterState(e, step, Diagnostics(ess, last, incr, resampled), weighted)


def _forecast_only(s: FilterState, X) -> FilterState:
    e = s.ensemble.with_members(X)
    ess = effective_sample_size(e.weights)
    d = s.diagnostics
    return FilterState(e, s.time_index + 1, Diagnostics(ess, d.last_resample_step, 0.0, False))


def sir_filter_step(s: FilterState, m: ModelSpec, o: ObservationModel, y0, scheme="residual",
                    ess_threshold=None, rng=None) -> FilterState:
    """Bootstrap particle filter step.

    Members are propagated by Euler-Maruyama, reweighted by the likelihood of
    ``y0`` (skipped when ``y0`` is None) and resampled when the effective
    sample size falls below ``ess_threshold`` (default M/2).
    """
    e = s.ensemble
    X = euler_maruyama_step(m, e.members, rng.standard_normal(e.members.shape))
    if y0 is None:
        return _forecast_only(s, X)
    w = _reweight(e.weights, log_likelihood(o, X, y0))
    return _finish(s, X, w, X @ e.weights, scheme, ess_threshold, rng)


# ---------------------------------------------------------------------------
# proposals


def transition_proposal(m: ModelSpec) -> GuidedProposal:
    """The model transition itself; guided SMC then reduces to the bootstrap filter."""

    def sample(X, y0, rng):
        return euler_maruyama_step(m, X, rng.standard_normal(np.shape(X)))

    def log_density(Xp, X, y0):
        return transition_log_density(m, X, Xp)

    return GuidedProposal(sample, log_density)


def _gaussian_proposal(mean_fn, cov):
    """Proposal ``N(mean_fn(X, y0), cov)`` with a fixed covariance."""
    cov = 0.5 * (cov + cov.T)
    lam, V = np.linalg.eigh(cov)
    if lam.min() <= 1e-14 * max(float(lam.max()), 0.0):
        raise NumericalError("proposal covariance is singular")
    root = (V * np.sqrt(lam)) @ V.T
    whiten = (V / np.sqrt(lam)) @ V.T
    logdet = float(np.sum(np.log(lam)))
    n = cov.shape[0]

    def sample(X, y0, rng):
        return mean_fn(X, y0) + root @ rng.standard_normal(np.shape(X))

    def log_density(Xp, X, y0):
        z = whiten @ (Xp - mean_fn(X, y0))
        return -0.5 * (np.sum(z * z, axis=0) + n * LOG_2PI + logdet)

    return GuidedProposal(sample, log_density)


def optimal_gaussian_proposal(m: ModelSpec, o: ObservationModel) -> GuidedProposal:
    """Conditional law of ``x'`` given ``x`` and ``y0`` for a linear observation.

    With this proposal the incremental weight is the predictive likelihood
    ``N(y0; H(x + dt f(x)), H C H^T + R)`` where ``C = 2 dt Q``.
    """
    if not o.is_linear:
        raise ValueError("optimal Gaussian proposal needs a linear observation operator")
    H, R = o.H, o.noise_cov
    C = 2.0 * m.dt * m.diffusion_cov
    S = H @ C @ H.T + R
    K = np.linalg.solve(S, H @ C).T
    cov = C - K @ H @ C

    def mean_fn(X, y0):
        mu = m.mean_step(X)
        return mu + K @ (np.atleast_1d(y0)[:, None] - H @ mu)

    return _gaussian_proposal(mean_fn, cov)


def nudged_gaussian_proposal(m: ModelSpec, o: ObservationModel) -> GuidedProposal:
    """Forecast nudged towards ``y0`` by an ensemble Kalman gain.

    Mean ``x_f + K (y0 - h(x_f))`` with ``x_f = x + dt f(x)``, covariance
    ``2 dt Q``.  The gain is recomputed from the ensemble passed in, using the
    equally weighted covariance of ``x_f`` plus ``2 dt Q`` (linear ``H``), or
    ensemble cross-covariances of ``(x_f, h(x_f))`` for nonlinear ``h``.
    """
    C = 2.0 * m.dt * m.diffusion_cov
    R = o.noise_cov

    def mean_fn(X, y0):
        Xf = m.mean_step(X)
        M = Xf.shape[1]
        dX = Xf - Xf.mean(axis=1, keepdims=True)
        if o.is_linear:
            P = dX @ dX.T / (M - 1) + C
            K = np.linalg.solve(o.H @ P @ o.H.T + R, o.H @ P).T
        else:
            HX = o.apply(Xf)
            dY = HX - HX.mean(axis=1, keepdims=True)
            K = np.linalg.solve(dY @ dY.T / (M - 1) + R, dY @ dX.T / (M - 1)).T
        return Xf + K @ (np.atleast_1d(y0)[:, None] - o.apply(Xf))

    return _gaussian_proposal(mean_fn, C)


def guided_smc_step(s: FilterState, m: ModelSpec, o: ObservationModel, y0, prop: GuidedProposal = None,
                    scheme="residual", ess_threshold=None, rng=None) -> FilterState:
    """Sequential importance sampling with a data-dependent proposal.

    ``w_i' ~ w_i pi_Y(y0 | x_i') pi(x_i' | x_i) / q(x_i' | x_i, y0)``.  The
    default proposal is :func:`nudged_gaussian_proposal`.  Without an
    observation the step is a plain model forecast.
    """
    e = s.ensemble
    X = e.members
    if y0 is None:
        return _forecast_only(s, euler_maruyama_step(m, X, rng.standard_normal(X.shape)))
    if prop is None:
        prop = nudged_gaussian_proposal(m, o)
    Xp = np.asarray(prop.sample(X, y0, rng), float)
    if Xp.shape != X.shape:
        raise ValueError("proposal returned the wrong shape")
    log_q = np.asarray(prop.log_density(Xp, X, y0), float)
    if not np.all(np.isfinite(log_q)):
        raise NumericalError("proposal log-density is not finite at a sampled point")
    log_inc = log_likelihood(o, Xp, y0) + (transition_log_density(m, X, Xp) - log_q)
    w = _reweight(e.weights, log_inc)
    return _finish(s, Xp, w, m.mean_step(X) @ e.weights, scheme, ess_threshold, rng)
