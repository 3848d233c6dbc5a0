"""Metropolis-adjusted Langevin (MALA) and Hamiltonian Monte Carlo samplers.

A proposal draws a fresh momentum ``p ~ N(0, I)``, runs ``L`` leapfrog steps
of the Hamiltonian ``E(x, p) = U(x) + |p|^2 / 2`` and is accepted with
probability ``min(1, exp(E - E'))``.  MALA is the case ``L = 1``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from .errors import NumericalError
from .prob import GaussianDensity, as_matrix


def _fd_gradient(log_density):
    def grad(x):
        x = np.asarray(x, float)
        g = np.empty_like(x)
        for k in range(x.size):
            h = 1e-6 * (1.0 + abs(x[k]))
            xp, xm = x.copy(), x.copy()
            xp[k] += h
            xm[k] -= h
            g[k] = (log_density(xp) - log_density(xm)) / (2 * h)
        return g
    return grad


@dataclass(frozen=True)
class TargetDensity:
    """Unnormalised target ``exp(log_density(x))`` with ``gradient = grad log_density``.

    Without an analytic gradient, central finite differences with step
    ``1e-6 (1 + |x_k|)`` are used.
    """

    log_density: Callable
    dim: int
    gradient: Optional[Callable] = None

    def __post_init__(self):
        if self.gradient is None:
            object.__setattr__(self, "gradient", _fd_gradient(self.log_density))

    def energy(self, x):
        return -float(self.log_density(x))


class ChainResult(NamedTuple):
    samples: np.ndarray  # (n, dim), one row per iteration
    acceptance_rate: float


def gaussian_target(mean, cov) -> TargetDensity:
    g = GaussianDensity(np.atleast_1d(mean), np.atleast_2d(cov))
    prec = np.linalg.inv(g.cov)

    def log_density(x):
        r = np.asarray(x, float) - g.mean
        return -0.5 * float(r @ prec @ r)

    def gradient(x):
        return -prec @ (np.asarray(x, float) - g.mean)

    return TargetDensity(log_density, g.dim, gradient)


def bayes_linear_target(prior: GaussianDensity, H, R, y0) -> TargetDensity:
    """Posterior of a Gaussian prior under ``y0 = H x + N(0, R)``, up to a constant."""
    H = as_matrix(H, "H")
    Ri = np.linalg.inv(as_matrix(R, "R_cov"))
    Pi = np.linalg.inv(prior.cov)
    y0 = np.atleast_1d(np.asarray(y0, float))

    def log_density(x):
        x = np.asarray(x, float)
        r0 = x - prior.mean
        r1 = H @ x - y0
        return -0.5 * float(r0 @ Pi @ r0 + r1 @ Ri @ r1)

    def gradient(x):
        x = np.asarray(x, float)
        return -Pi @ (x - prior.mean) - H.T @ Ri @ (H @ x - y0)

    return TargetDensity(log_density, prior.dim, gradient)


def _grad(t, x):
    g = np.asarray(t.gradient(x), float)
    if not np.all(np.isfinite(g)):
        raise NumericalError("non-finite gradient")
    return g


def leapfrog_step(t: TargetDensity, x, p, eps):
    """Half kick, drift, half kick; the second kick uses the updated position."""
    x = np.asarray(x, float)
    p = np.asarray(p, float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(p))):
        raise ValueError("non-finite leapfrog input")
    p_half = p + 0.5 * eps * _grad(t, x)
    x_new = x + eps * p_half
    return x_new, p_half + 0.5 * eps * _grad(t, x_new)


def hmc_chain(t: TargetDensity, x0, eps=0.25, L=1, n=1000, rng=None) -> ChainResult:
    """Hamiltonian Monte Carlo with ``L`` leapfrog steps per proposal.

    Each iteration draws the momentum and then the acceptance uniform, so
    ``L = 1`` consumes random numbers exactly like :func:`mala_chain`.
    """
    if int(L) < 1 or int(n) < 1:
        raise ValueError("L and n must be >= 1")
    x = np.asarray(x0, float).reshape(t.dim)
    E_x = t.energy(x)
    out = np.empty((int(n), t.dim))
    accepted = 0
    for i in range(int(n)):
        p = rng.standard_normal(t.dim)
        u = rng.random()
        xp, pp = x, p
        for _ in range(int(L)):
            xp, pp = leapfrog_step(t, xp, pp, eps)
        E_new = t.energy(xp)
        dE = (E_new + 0.5 * float(pp @ pp)) - (E_x + 0.5 * float(p @ p))
        if np.isfinite(dE) and u < np.exp(min(0.0, -dE)):
            x, E_x = xp, E_new
            accepted += 1
        out[i] = x
    return ChainResult(out, accepted / int(n))


def mala_chain(t: TargetDensity, x0, eps=0.25, n=1000, rng=None) -> ChainResult:
    return hmc_chain(t, x0, eps, 1, n, rng)


def burn_in(samples, fraction=0.1):
    """Drop the first ``fraction`` of a chain (default n/10)."""
    samples = np.asarray(samples)
    return samples[int(fraction * len(samples)):]


def integrated_autocorr_time(x, c=5.0):
    """Integrated autocorrelation time of a scalar chain, Sokal's adaptive window."""
    x = np.asarray(x, float).ravel()
    n = x.size
    if n < 2:
        return 1.0
    d = x - x.mean()
    f = np.fft.rfft(d, n=2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    if acf[0] <= 0:
        return 1.0
    rho = acf / acf[0]
    taus = 2.0 * np.cumsum(rho) - 1.0
    window = np.arange(n) >= c * taus
    k = int(np.argmax(window)) if window.any() else n - 1
    return max(float(taus[k]), 1.0)


def mc_standard_error(samples):
    """Per-component standard error of the chain mean, inflated by the autocorrelation time."""
    s = np.atleast_2d(np.asarray(samples, float).T).T
    n = s.shape[0]
    tau = np.array([integrated_autocorr_time(s[:, k]) for k in range(s.shape[1])])
    return np.sqrt(s.var(axis=0, ddof=1) * tau / n)
