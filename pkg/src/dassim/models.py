"""Forward and observation models.

Drift functions act column-wise: they accept a state vector of shape (N,) or
an ensemble of shape (N, M) and return an array of the same shape.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import rng as rngmod
from .errors import NumericalError
from .prob import (
    LOG_2PI,
    GaussianDensity,
    WeightedEnsemble,
    _frozen,
    ensemble_moments,
    inv_sqrt,
    matrix_sqrt,
    pinv_sym,
)


@dataclass(frozen=True)
class ModelSpec:
    """Stochastic difference equation ``x' = x + dt f(x) + sqrt(2 dt) Q^{1/2} z``."""

    dim: int
    drift: Callable
    diffusion_cov: np.ndarray
    dt: float
    name: str = "custom"
    # (A, u) when f(x) = A x + u; enables the exact Kalman reference
    linear: Optional[tuple] = None
    sqrt_q: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ValueError("dim must be positive")
        Q = np.asarray(self.diffusion_cov, float)
        if Q.ndim == 0:
            Q = Q * np.eye(self.dim)
        if Q.shape != (self.dim, self.dim):
            raise ValueError(f"Q must be {self.dim}x{self.dim}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "diffusion_cov", _frozen(Q))
        object.__setattr__(self, "sqrt_q", _frozen(matrix_sqrt(Q)))
        if self.linear is not None:
            A, u = self.linear
            object.__setattr__(self, "linear", (_frozen(A), _frozen(u)))

    def f(self, x):
        out = np.asarray(self.drift(x), float)
        if out.shape != np.shape(x):
            raise ValueError(f"drift returned shape {out.shape}, expected {np.shape(x)}")
        if not np.all(np.isfinite(out)):
            raise NumericalError("non-finite drift output")
        return out

    def mean_step(self, x):
        return x + self.dt * self.f(x)


def linear_model(A, u=None, Q=0.0, dt=0.1) -> ModelSpec:
    A = np.atleast_2d(np.asarray(A, float))
    n = A.shape[0]
    u = np.zeros(n) if u is None else np.asarray(u, float).reshape(n)

    def drift(x):
        return A @ x + (u if np.ndim(x) == 1 else u[:, None])

    return ModelSpec(n, drift, Q, dt, name="linear", linear=(A, u))


def lorenz63(Q=0.0, dt=0.01, sigma=10.0, rho=28.0, beta=8.0 / 3.0) -> ModelSpec:
    def drift(x):
        x1, x2, x3 = x[0], x[1], x[2]
        return np.stack([sigma * (x2 - x1), x1 * (rho - x3) - x2, x1 * x2 - beta * x3])

    return ModelSpec(3, drift, Q, dt, name="lorenz63")


def euler_maruyama_step(m: ModelSpec, x, noise):
    """One Euler-Maruyama step; ``noise`` is standard normal with the shape of ``x``."""
    x = np.asarray(x, float)
    noise = np.asarray(noise, float)
    if noise.shape != x.shape:
        raise ValueError("noise must have the same shape as the state")
    if not np.all(np.isfinite(x)):
        raise NumericalError("non-finite state")
    return x + m.dt * m.f(x) + math.sqrt(2.0 * m.dt) * (m.sqrt_q @ noise)


def transition_log_density(m: ModelSpec, x_from, x_to):
    """Log of the Gaussian one-step transition density ``N(x + dt f(x), 2 dt Q)``.

    Column-wise for (N, M) inputs.
    """
    lam, V = np.linalg.eigh(m.diffusion_cov)
    if lam.min() <= 1e-14 * max(float(lam.max()), 0.0):
        raise NumericalError("no transition density: Q is singular")
    x_from = np.asarray(x_from, float)
    x_to = np.asarray(x_to, float)
    single = x_to.ndim == 1
    mean = m.mean_step(x_from)
    r = (x_to - mean).reshape(m.dim, -1)
    z = V.T @ r
    var = 2.0 * m.dt * lam
    out = -0.5 * (np.sum(z * z / var[:, None], axis=0) + m.dim * LOG_2PI + np.sum(np.log(var)))
    return float(out[0]) if single else out


@dataclass(frozen=True)
class ObservationModel:
    """``y = h(x) + R^{1/2} xi``; ``h`` given either as a matrix ``H`` or a callable."""

    noise_cov: np.ndarray
    H: Optional[np.ndarray] = None
    h: Optional[Callable] = None
    dim_obs: Optional[int] = None
    interval: int = 1

    def __post_init__(self):
        if (self.H is None) == (self.h is None):
            raise ValueError("give exactly one of H (linear) or h (nonlinear)")
        R = np.atleast_2d(np.asarray(self.noise_cov, float))
        if self.H is not None:
            H = np.atleast_2d(np.asarray(self.H, float))
            object.__setattr__(self, "H", _frozen(H))
            object.__setattr__(self, "dim_obs", H.shape[0])
        elif self.dim_obs is None:
            object.__setattr__(self, "dim_obs", R.shape[0])
        if R.shape != (self.dim_obs, self.dim_obs):
            raise ValueError(f"R must be {self.dim_obs}x{self.dim_obs}")
        if np.max(np.abs(R - R.T)) > 1e-12 * max(1.0, float(np.abs(R).max())):
            raise ValueError("R must be symmetric")
        lam = np.linalg.eigvalsh(R)
        if lam.min() <= 0:
            raise NumericalError("R must be positive definite")
        if int(self.interval) < 1:
            raise ValueError("interval must be >= 1")
        object.__setattr__(self, "noise_cov", _frozen(R))

    @property
    def is_linear(self):
        return self.H is not None

    def apply(self, x):
        x = np.asarray(x, float)
        if self.H is not None:
            if x.shape[0] != self.H.shape[1]:
                raise ValueError(f"state has dimension {x.shape[0]}, H expects {self.H.shape[1]}")
            return self.H @ x
        y = np.asarray(self.h(x), float)
        if y.shape[0] != self.dim_obs:
            raise ValueError("h returned the wrong observation dimension")
        return y


def observe(o: ObservationModel, x, noise):
    """``h(x) + R^{1/2} noise`` for standard normal ``noise`` of length K."""
    hx = o.apply(x)
    noise = np.asarray(noise, float)
    if noise.shape != hx.shape:
        raise ValueError("noise must match the observation dimension")
    return hx + matrix_sqrt(o.noise_cov) @ noise


def log_likelihood(o: ObservationModel, x, y):
    """Gaussian log-likelihood ``log N(y; h(x), R)``; column-wise over an (N, M) ``x``."""
    y = np.atleast_1d(np.asarray(y, float))
    if y.shape != (o.dim_obs,):
        raise ValueError(f"observation must have length {o.dim_obs}")
    hx = o.apply(x)
    single = hx.ndim == 1
    r = (y[:, None] if not single else y) - hx
    r = r.reshape(o.dim_obs, -1)
    R = o.noise_cov
    sol = np.linalg.solve(R, r)
    _, logdet = np.linalg.slogdet(R)
    out = -0.5 * (np.sum(r * sol, axis=0) + o.dim_obs * LOG_2PI + logdet)
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# deterministic ensemble flow


def _inflation_velocity(m, X):
    xbar, dX, P = ensemble_moments(X)
    Pinv = pinv_sym(P, 1e-10 * float(np.trace(P)))
    return m.f(X) + m.diffusion_cov @ Pinv @ dX


def deterministic_ensemble_step(m: ModelSpec, e: WeightedEnsemble) -> WeightedEnsemble:
    """Heun step of ``dx_i/dt = f(x_i) + Q P^{-1} (x_i - xbar)``.

    Replaces the stochastic forcing by the Gaussian-closure diffusion term;
    mean and covariance are re-evaluated at both stages.  ``P`` is
    pseudo-inverted with eigenvalues below ``1e-10 * trace(P)`` dropped.
    """
    if not e.is_uniform:
        raise ValueError("deterministic ensemble step needs uniform weights")
    X = e.members
    k1 = _inflation_velocity(m, X)
    k2 = _inflation_velocity(m, X + m.dt * k1)
    return e.with_members(X + 0.5 * m.dt * (k1 + k2))


# ---------------------------------------------------------------------------
# twin experiments


@dataclass(frozen=True)
class TwinExperimentRecord:
    times: np.ndarray
    truth: np.ndarray
    obs_times: np.ndarray
    observations: np.ndarray
    seeds: dict

    def observation_at(self, step):
        """Observation vector at model step ``step``, or ``None``."""
        k = np.searchsorted(self.obs_times, step)
        if k < self.obs_times.size and self.obs_times[k] == step:
            return self.observations[:, k]
        return None


def generate_twin_data(m: ModelSpec, o: ObservationModel, x0, n_steps, seed, obs_seed=None):
    """Simulate a truth trajectory and noisy observations every ``o.interval`` steps.

    Model noise and observation noise come from separately labelled streams,
    so ``obs_seed`` can change the observations without touching the truth.
    """
    if int(n_steps) < 0:
        raise ValueError("n_steps must be nonnegative")
    n_steps = int(n_steps)
    obs_seed = seed if obs_seed is None else obs_seed
    truth_rng = rngmod.stream(seed, "truth")
    obs_rng = rngmod.stream(obs_seed, "obs")
    x = np.asarray(x0, float).reshape(m.dim)
    truth = np.empty((m.dim, n_steps + 1))
    truth[:, 0] = x
    obs_times = [n for n in range(1, n_steps + 1) if n % o.interval == 0]
    observations = np.empty((o.dim_obs, len(obs_times)))
    k = 0
    for n in range(1, n_steps + 1):
        x = euler_maruyama_step(m, x, truth_rng.standard_normal(m.dim))
        truth[:, n] = x
        if n % o.interval == 0:
            observations[:, k] = observe(o, x, obs_rng.standard_normal(o.dim_obs))
            k += 1
    return TwinExperimentRecord(
        times=_frozen(m.dt * np.arange(n_steps + 1)),
        truth=_frozen(truth),
        obs_times=np.asarray(obs_times, dtype=int),
        observations=_frozen(observations),
        seeds={"truth": int(seed), "obs": int(obs_seed)},
    )


def gaussian_prior_ensemble(prior: GaussianDensity, M, rng, matched=True):
    """Sample an (N, M) ensemble, optionally rescaled to match the prior moments exactly."""
    X = prior.sample(rng, M)
    if not matched:
        return X
    if M <= prior.dim:
        raise ValueError("moment matching needs M > N")
    xbar, dX, P = ensemble_moments(X)
    L = matrix_sqrt(prior.cov) @ inv_sqrt(P)
    return prior.mean[:, None] + L @ dX
