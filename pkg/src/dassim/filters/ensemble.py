"""Ensemble Kalman analysis steps: perturbed observations, square-root transforms
and the ensemble transform Kalman-Bucy flow.

All of these act on equally weighted (N, M) ensembles and use the empirical
moments with the ``1/(M-1)`` normalisation.
"""
from __future__ import annotations

import numpy as np

from ..errors import NumericalError
from ..prob import WeightedEnsemble, as_matrix, ensemble_moments, matrix_sqrt, pinv_sqrt


def _uniform_members(e: WeightedEnsemble):
    if not e.is_uniform:
        raise ValueError("ensemble Kalman steps need uniform weights")
    if e.size < 2:
        raise ValueError("need at least two members")
    return e.members


def _obs_args(H, R, y0, N):
    H = as_matrix(H, "H")
    R = as_matrix(R, "R_cov")
    y0 = np.atleast_1d(np.asarray(y0, float))
    if H.shape != (y0.size, N) or R.shape != (y0.size, y0.size):
        raise ValueError("H, R and y0 have inconsistent shapes")
    return H, R, y0


def _ensemble_gain(dX, dY, R):
    """``P H^T (H P H^T + R)^{-1}`` from anomalies, without forming P."""
    M = dX.shape[1]
    S = dY @ dY.T / (M - 1) + R
    lam = np.linalg.eigvalsh(S)
    if lam.min() <= 1e-14 * max(float(np.abs(lam).max()), 1e-300):
        raise NumericalError("singular innovation covariance")
    return np.linalg.solve(S, dY @ dX.T / (M - 1)).T


def enkf_perturbed_step(e: WeightedEnsemble, H, R, y0, rng=None, perturbations=None) -> WeightedEnsemble:
    """EnKF analysis with perturbed observations.

    ``perturbations`` (K, M) overrides the draws ``xi_i ~ N(0, R)``; passing
    zeros gives the deterministic mean update.
    """
    X = _uniform_members(e)
    H, R, y0 = _obs_args(H, R, y0, e.dim)
    xbar, dX, _ = ensemble_moments(X)
    K = _ensemble_gain(dX, H @ dX, R)
    if perturbations is None:
        if rng is None:
            raise ValueError("rng is required when perturbations are not given")
        xi = matrix_sqrt(R) @ rng.standard_normal((y0.size, e.size))
    else:
        xi = np.asarray(perturbations, float)
        if xi.shape != (y0.size, e.size):
            raise ValueError("perturbations must be K x M")
    return e.with_members(X - K @ (H @ X - y0[:, None] + xi))


def esrf_transform(e: WeightedEnsemble, H, R):
    """Symmetric square-root transform ``S = (I + dY^T R^-1 dY / (M-1))^{-1/2}``.

    Built from an M x M eigendecomposition.  ``S @ ones == ones`` since the
    output anomalies sum to zero.
    """
    X = _uniform_members(e)
    H = as_matrix(H, "H")
    R = as_matrix(R, "R_cov")
    _, dX, _ = ensemble_moments(X)
    dY = H @ dX
    M = e.size
    A = np.eye(M) + dY.T @ np.linalg.solve(R, dY) / (M - 1)
    lam, V = np.linalg.eigh(0.5 * (A + A.T))
    return (V / np.sqrt(lam)) @ V.T


def esrf_optimal_transform(e: WeightedEnsemble, H, R, S=None):
    """Transform with the same analysis covariance as ``S`` that maximises
    ``trace cov(dX, dX T)``, i.e. keeps the analysis members closest to their
    forecast counterparts.

    The bracketed matrix has rank at most M-1; its inverse square root is a
    pseudo-inverse with relative threshold 1e-12.  The projector ``11^T/M``
    is added so the ones vector is mapped to itself; it does not change
    ``dX @ T``.
    """
    X = _uniform_members(e)
    M = e.size
    if S is None:
        S = esrf_transform(e, H, R)
    _, dX, P = ensemble_moments(X)
    B = S @ dX.T @ P @ dX @ S
    T = S @ pinv_sqrt(0.5 * (B + B.T), rtol=1e-12) @ S @ (dX.T @ dX) / np.sqrt(M - 1)
    return T + np.full((M, M), 1.0 / M)


def esrf_step(e: WeightedEnsemble, H, R, y0, bias_correction=False, transform="symmetric",
              loglik=None) -> WeightedEnsemble:
    """Deterministic square-root analysis ``x_i <- xbar_a + dX S e_i``.

    ``transform`` is ``"symmetric"`` or ``"optimal"``.  With
    ``bias_correction`` the Kalman mean is replaced by the importance-weighted
    mean, which needs the member log-likelihoods ``loglik``; when omitted they
    are the Gaussian ones of the linear model.
    """
    X = _uniform_members(e)
    H, R, y0 = _obs_args(H, R, y0, e.dim)
    xbar, dX, _ = ensemble_moments(X)
    if bias_correction:
        if loglik is None:
            r = H @ X - y0[:, None]
            loglik = -0.5 * np.sum(r * np.linalg.solve(R, r), axis=0)
        lw = np.asarray(loglik, float) - np.max(loglik)
        w = np.exp(lw)
        xa = X @ (w / w.sum())
    else:
        xa = xbar - _ensemble_gain(dX, H @ dX, R) @ (H @ xbar - y0)
    S = esrf_transform(e, H, R)
    if transform == "optimal":
        S = esrf_optimal_transform(e, H, R, S=S)
    elif transform != "symmetric":
        raise ValueError(f"unknown transform {transform!r}")
    return e.with_members(xa[:, None] + dX @ S)


def _etkb_velocity(X, H, RiH, y0):
    xbar, dX, _ = ensemble_moments(X)
    M = X.shape[1]
    # P H^T R^-1 from anomalies
    PHtRi = dX @ (RiH @ dX).T / (M - 1)
    return -0.5 * PHtRi @ (H @ X + (H @ xbar - 2.0 * y0)[:, None])


def etkb_flow(e: WeightedEnsemble, H, R, y0, n_substeps=20, integrator="heun"):
    """Yield the ensemble after each substep of the Kalman-Bucy transform flow

    ``dx_i/ds = -1/2 P H^T R^-1 (H x_i + H xbar - 2 y0)``, ``s in [0, 1]``,

    with the empirical mean and covariance re-evaluated at every stage.
    """
    X = _uniform_members(e)
    H, R, y0 = _obs_args(H, R, y0, e.dim)
    if int(n_substeps) < 1:
        raise ValueError("n_substeps must be >= 1")
    RiH = np.linalg.solve(R, H)
    ds = 1.0 / int(n_substeps)
    for _ in range(int(n_substeps)):
        k1 = _etkb_velocity(X, H, RiH, y0)
        if integrator == "euler":
            X = X + ds * k1
        elif integrator == "heun":
            k2 = _etkb_velocity(X + ds * k1, H, RiH, y0)
            X = X + 0.5 * ds * (k1 + k2)
        else:
            raise ValueError(f"unknown integrator {integrator!r}")
        yield e.with_members(X)


def etkb_filter_step(e: WeightedEnsemble, H, R, y0, n_substeps=20, integrator="heun") -> WeightedEnsemble:
    out = e
    for out in etkb_flow(e, H, R, y0, n_substeps, integrator):
        pass
    return out
