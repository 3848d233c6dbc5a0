"""Continuous-time (artificial time ``s in [0, 1]``) transform filters in one
observed variable: the mean-field transform and Moser's interpolation flow.
"""
from __future__ import annotations

import numpy as np

from ..errors import NumericalError
from ..models import ObservationModel
from ..prob import GridDensity1D, WeightedEnsemble, cumulative_trapezoid

_ZERO_SPREAD = 1e-14


def _flux_velocity(x, density, source):
    """``(1/density) * int_{-inf}^x source`` for a zero-mass ``source``.

    The integral is taken from whichever end is closer in mass, so the
    quotient stays accurate in both tails.  Nodes where the density is
    exactly zero (grid ends) get velocity 0.
    """
    if np.any(density[1:-1] <= 0):
        raise NumericalError("density must be positive on the grid interior")
    left = cumulative_trapezoid(source, x)
    right = left - left[-1]
    mass = cumulative_trapezoid(density, x)
    flux = np.where(mass <= 0.5 * mass[-1], left, right)
    out = np.zeros_like(flux)
    pos = density > 0
    out[pos] = flux[pos] / density[pos]
    return out


def meanfield_y_velocity(piY: GridDensity1D, R, y0):
    """Velocity ``f_y`` on the nodes of ``piY`` solving ``d/dy (pi_Y f_y) = pi_Y (L - Lbar)``

    with ``L(y) = (y - y0)^2 / (2 R)``.  For Gaussian ``pi_Y`` this is
    ``-1/2 var_y R^-1 (y + ybar - 2 y0)``.
    """
    R = float(R)
    if not R > 0:
        raise ValueError("R must be positive")
    d = piY.normalized()
    y, p = d.nodes, d.values
    L = (y - float(y0)) ** 2 / (2.0 * R)
    Lbar = float(np.trapezoid(p * L, y))
    return _flux_velocity(y, p, p * (L - Lbar))


def _y_velocity(Y, R, y0, density):
    M = Y.size
    ybar = Y.mean()
    var = float(np.sum((Y - ybar) ** 2)) / (M - 1)
    if density == "gaussian":
        return -0.5 * var / R * (Y + ybar - 2.0 * y0), var
    if density == "kde":
        piY = GridDensity1D.from_samples(Y)
        return np.interp(Y, piY.nodes, meanfield_y_velocity(piY, R, y0)), var
    raise ValueError(f"unknown density estimate {density!r}")


def _meanfield_velocity(X, hk, R, y0, density):
    Y = hk(X)
    M = X.shape[1]
    dY = Y - Y.mean()
    fy, var = _y_velocity(Y, R, y0, density)
    if var < _ZERO_SPREAD:
        return np.zeros_like(X)
    dX = X - X.mean(axis=1, keepdims=True)
    # Gaussian-conditional regression of x on y
    beta = dX @ dY / ((M - 1) * var)
    return beta[:, None] * fy[None, :]


def meanfield_transform_step(e: WeightedEnsemble, o: ObservationModel, y0, n_substeps=20,
                             density="gaussian", integrator="heun") -> WeightedEnsemble:
    """Mean-field ensemble transform for scalar observations.

    Each substep estimates ``pi_Y`` from ``y_i = h(x_i)`` (Gaussian fit or
    kernel density), moves ``y`` with :func:`meanfield_y_velocity` and moves
    the states along the linear regression of ``x`` on ``y``.  Vector
    observations with diagonal ``R`` are assimilated one component at a time.
    """
    if not e.is_uniform:
        raise ValueError("mean-field transform needs uniform weights")
    if e.size < 2:
        raise ValueError("need at least two members")
    y0 = np.atleast_1d(np.asarray(y0, float))
    R = o.noise_cov
    if y0.shape != (o.dim_obs,):
        raise ValueError(f"observation must have length {o.dim_obs}")
    if np.count_nonzero(R - np.diag(np.diag(R))):
        raise ValueError("serial mean-field assimilation needs a diagonal R")
    D = int(n_substeps)
    if D < 1:
        raise ValueError("n_substeps must be >= 1")
    ds = 1.0 / D
    X = e.members
    for k in range(o.dim_obs):
        def hk(Z, k=k):
            return o.apply(Z)[k]

        Y = hk(X)
        if float(np.var(Y, ddof=1)) < _ZERO_SPREAD:
            continue
        Rk, yk = float(R[k, k]), float(y0[k])
        for _ in range(D):
            k1 = _meanfield_velocity(X, hk, Rk, yk, density)
            if integrator == "euler":
                X = X + ds * k1
            elif integrator == "heun":
                k2 = _meanfield_velocity(X + ds * k1, hk, Rk, yk, density)
                X = X + 0.5 * ds * (k1 + k2)
            else:
                raise ValueError(f"unknown integrator {integrator!r}")
    return e.with_members(X)


def moser_velocity_1d(prior: GridDensity1D, posterior: GridDensity1D, s):
    """Velocity ``g(., s)`` transporting the linear interpolant
    ``pi_s = (1 - s) pi_prior + s pi_post`` (``d pi_s/ds = -d/dy (pi_s g)``).

    Both densities must share nodes; they are normalised first.
    """
    if not 0.0 <= s <= 1.0:
        raise ValueError("s must lie in [0, 1]")
    if prior.nodes.shape != posterior.nodes.shape or np.any(prior.nodes != posterior.nodes):
        raise ValueError("prior and posterior must share grid nodes")
    p0 = prior.normalized().values
    p1 = posterior.normalized().values
    ps = (1.0 - s) * p0 + s * p1
    return -_flux_velocity(prior.nodes, ps, p1 - p0)


def moser_transport(prior: GridDensity1D, posterior: GridDensity1D, samples, n_substeps=100):
    """Push samples through the time-one flow of :func:`moser_velocity_1d` (RK4)."""
    x = np.asarray(samples, float).copy()
    nodes = prior.nodes
    ds = 1.0 / int(n_substeps)

    def g(z, s):
        return np.interp(z, nodes, moser_velocity_1d(prior, posterior, s))

    for n in range(int(n_substeps)):
        s = n * ds
        k1 = g(x, s)
        k2 = g(x + 0.5 * ds * k1, s + 0.5 * ds)
        k3 = g(x + 0.5 * ds * k2, s + 0.5 * ds)
        k4 = g(x + ds * k3, s + ds)
        x = x + ds / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x
