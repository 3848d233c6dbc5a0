"""Exact Gaussian filtering: Kalman analysis, forecast and the Kalman-Bucy embedding."""
from __future__ import annotations

import numpy as np

from ..errors import NumericalError
from ..prob import GaussianDensity, as_matrix


def _innovation_gain(P, H, R):
    S = H @ P @ H.T + R
    lam = np.linalg.eigvalsh(0.5 * (S + S.T))
    if lam.size and lam.min() <= 1e-14 * max(float(np.abs(lam).max()), 1e-300):
        raise NumericalError("singular innovation covariance")
    return np.linalg.solve(S, H @ P).T


def kalman_update(prior: GaussianDensity, H, R, y0) -> GaussianDensity:
    """Posterior of a Gaussian prior under ``y = H x + N(0, R)``."""
    H = as_matrix(H, "H")
    R = as_matrix(R, "R_cov")
    y0 = np.atleast_1d(np.asarray(y0, float))
    if H.shape != (y0.size, prior.dim) or R.shape != (y0.size, y0.size):
        raise ValueError("H, R and y0 have inconsistent shapes")
    P = prior.cov
    K = _innovation_gain(P, H, R)
    mean = prior.mean - K @ (H @ prior.mean - y0)
    cov = P - K @ H @ P
    return GaussianDensity(mean, 0.5 * (cov + cov.T))


def kalman_forecast(g: GaussianDensity, model) -> GaussianDensity:
    """Propagate moments through one Euler-Maruyama step of a linear model."""
    if model.linear is None:
        raise ValueError("exact moment propagation needs a linear model")
    A, u = model.linear
    F = np.eye(model.dim) + model.dt * A
    cov = F @ g.cov @ F.T + 2.0 * model.dt * model.diffusion_cov
    return GaussianDensity(F @ g.mean + model.dt * u, 0.5 * (cov + cov.T))


def _kb_rhs(m, P, HtRi, H, y0):
    PHtRi = P @ HtRi
    return -PHtRi @ (H @ m - y0), -PHtRi @ H @ P


def kalman_bucy_moments(prior: GaussianDensity, H, R, y0, n_substeps=20, mode="ode",
                        integrator="heun") -> GaussianDensity:
    """Kalman analysis as a flow in artificial time ``s in [0, 1]``.

    ``mode="discrete"`` applies ``n_substeps`` Kalman analyses with the
    observation error covariance inflated to ``n_substeps * R``; the result is
    exactly the one-shot Kalman update.  ``mode="ode"`` integrates the
    Kalman-Bucy mean/covariance equations with forward Euler or Heun.
    """
    H = as_matrix(H, "H")
    R = as_matrix(R, "R_cov")
    y0 = np.atleast_1d(np.asarray(y0, float))
    D = int(n_substeps)
    if D < 1:
        raise ValueError("n_substeps must be >= 1")
    if mode == "discrete":
        g = prior
        for _ in range(D):
            g = kalman_update(g, H, D * R, y0)
        return g
    if mode != "ode":
        raise ValueError(f"unknown mode {mode!r}")
    HtRi = np.linalg.solve(R, H).T
    m, P = prior.mean.copy(), prior.cov.copy()
    ds = 1.0 / D
    for _ in range(D):
        dm1, dP1 = _kb_rhs(m, P, HtRi, H, y0)
        if integrator == "euler":
            m, P = m + ds * dm1, P + ds * dP1
        elif integrator == "heun":
            dm2, dP2 = _kb_rhs(m + ds * dm1, P + ds * dP1, HtRi, H, y0)
            m, P = m + 0.5 * ds * (dm1 + dm2), P + 0.5 * ds * (dP1 + dP2)
        else:
            raise ValueError(f"unknown integrator {integrator!r}")
        P = 0.5 * (P + P.T)
    return GaussianDensity(m, P)


def kalman_bucy_functional(mean, P, H, R, y0):
    """Quadratic potential whose gradient flow (metric P) is the ensemble Kalman-Bucy velocity.

    Evaluated on Gaussian moments:
    ``1/4 E[(Hx-y0)^T R^-1 (Hx-y0)] + 1/4 (H xbar - y0)^T R^-1 (H xbar - y0)``.
    """
    H = as_matrix(H, "H")
    R = as_matrix(R, "R_cov")
    r = H @ np.asarray(mean, float) - np.atleast_1d(y0)
    Ri_r = np.linalg.solve(R, r)
    spread = np.trace(np.linalg.solve(R, H @ P @ H.T))
    return 0.25 * (float(r @ Ri_r) + spread) + 0.25 * float(r @ Ri_r)
