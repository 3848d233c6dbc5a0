"""Probability densities, weighted ensembles and shared linear algebra.

Ensembles are stored column-wise: ``members[:, i]`` is the state of member i,
so an ensemble of M states in R^N is an ``(N, M)`` array.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError

LOG_2PI = math.log(2.0 * math.pi)


def _frozen(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


def as_matrix(a, name="matrix"):
    """Coerce scalars/vectors/matrices to a 2-D float array."""
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        return a.reshape(1, 1)
    if a.ndim == 1:
        return np.diag(a) if name.endswith("cov") else a.reshape(1, -1)
    if a.ndim != 2:
        raise ValueError(f"{name} must be at most 2-D, got shape {a.shape}")
    return a


# ---------------------------------------------------------------------------
# symmetric matrix functions


def _symmetric_eig(S, tol=1e-10):
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise ValueError("matrix has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(S)))) if S.size else 1.0
    if np.max(np.abs(S - S.T), initial=0.0) > tol * scale:
        raise ValueError("matrix is not symmetric")
    return np.linalg.eigh(0.5 * (S + S.T))


def matrix_sqrt(S):
    """Symmetric positive semi-definite square root of ``S``.

    Eigenvalues below ``1e-14 * trace(S)`` are treated as zero; clearly
    negative ones (below ``-1e-10 * ||S||``) raise :class:`NumericalError`.
    """
    lam, V = _symmetric_eig(S)
    norm = float(np.max(np.abs(lam), initial=0.0))
    if lam.size and lam.min() < -1e-10 * norm:
        raise NumericalError("not PSD")
    floor = 1e-14 * float(np.sum(np.clip(lam, 0.0, None)))
    lam = np.where(lam > floor, lam, 0.0)
    R = (V * np.sqrt(lam)) @ V.T
    return 0.5 * (R + R.T)


def inv_sqrt(S):
    """Inverse symmetric square root of an SPD matrix."""
    lam, V = _symmetric_eig(S)
    if lam.size and lam.min() <= 1e-14 * max(float(lam.max()), 0.0):
        raise NumericalError("matrix is singular")
    R = (V / np.sqrt(lam)) @ V.T
    return 0.5 * (R + R.T)


def pinv_sqrt(S, rtol=1e-12):
    """Pseudo-inverse square root; eigenvalues below ``rtol * max`` map to zero."""
    lam, V = _symmetric_eig(S)
    top = float(lam.max()) if lam.size else 0.0
    keep = lam > rtol * top if top > 0 else np.zeros_like(lam, dtype=bool)
    d = np.zeros_like(lam)
    d[keep] = 1.0 / np.sqrt(lam[keep])
    R = (V * d) @ V.T
    return 0.5 * (R + R.T)


def pinv_sym(S, atol):
    """Symmetric pseudo-inverse dropping eigenvalues with ``|lam| <= atol``."""
    lam, V = _symmetric_eig(S)
    keep = np.abs(lam) > atol
    d = np.zeros_like(lam)
    d[keep] = 1.0 / lam[keep]
    return (V * d) @ V.T


# ---------------------------------------------------------------------------
# densities


@dataclass(frozen=True)
class GaussianDensity:
    """Multivariate normal ``N(mean, cov)``."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        if mean.ndim != 1:
            raise ValueError("mean must be a vector")
        cov = np.asarray(self.cov, dtype=float)
        if cov.ndim == 0:
            cov = cov.reshape(1, 1)
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"cov shape {cov.shape} does not match mean length {mean.size}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise ValueError("non-finite Gaussian parameters")
        scale = max(1.0, float(np.max(np.abs(cov))))
        if np.max(np.abs(cov - cov.T)) > 1e-12 * scale:
            raise ValueError("cov is not symmetric")
        lam = np.linalg.eigvalsh(cov)
        if lam.min() < -1e-10 * max(1.0, float(lam.max())):
            raise ValueError("cov is not positive semi-definite")
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "cov", _frozen(0.5 * (cov + cov.T)))

    @property
    def dim(self):
        return self.mean.size

    def log_pdf(self, x):
        return gaussian_log_pdf(self, x)

    def pdf(self, x):
        return np.exp(gaussian_log_pdf(self, x))

    def sample(self, rng, size):
        """Draw ``size`` samples as an ``(N, size)`` array."""
        z = rng.standard_normal((self.dim, size))
        return self.mean[:, None] + matrix_sqrt(self.cov) @ z


def gaussian_log_pdf(g: GaussianDensity, x):
    """Log density of ``g`` at ``x``.

    ``x`` is a length-N vector or an ``(N, M)`` array of column points, in
    which case a length-M array is returned.  Eigenvalues of the covariance
    are floored at ``1e-14 * trace`` so nearly singular covariances stay usable.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    X = x.reshape(-1, 1) if single else x
    if X.shape[0] != g.dim:
        raise ValueError(f"point has dimension {X.shape[0]}, density has {g.dim}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite evaluation point")
    lam, V = np.linalg.eigh(g.cov)
    floor = max(1e-14 * float(np.trace(g.cov)), np.finfo(float).tiny)
    lam = np.maximum(lam, floor)
    z = V.T @ (X - g.mean[:, None])
    maha = np.sum(z * z / lam[:, None], axis=0)
    out = -0.5 * (maha + g.dim * LOG_2PI + np.sum(np.log(lam)))
    return float(out[0]) if single else out


@dataclass(frozen=True)
class GaussianMixture:
    """Finite mixture ``sum_j weights[j] * components[j]``."""

    weights: np.ndarray
    components: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        comps = tuple(self.components)
        if w.ndim != 1 or w.size != len(comps) or w.size == 0:
            raise ValueError("need one weight per component")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must lie on the simplex")
        if len({c.dim for c in comps}) != 1:
            raise ValueError("components must share a dimension")
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "components", comps)

    @property
    def dim(self):
        return self.components[0].dim

    def pdf(self, x):
        return sum(w * c.pdf(x) for w, c in zip(self.weights, self.components))

    @property
    def mean(self):
        return sum(w * c.mean for w, c in zip(self.weights, self.components))

    @property
    def cov(self):
        m = self.mean
        return sum(
            w * (c.cov + np.outer(c.mean - m, c.mean - m))
            for w, c in zip(self.weights, self.components)
        )


def gaussian_conditional(joint: GaussianDensity, y: float) -> GaussianDensity:
    """Distribution of x given y for a bivariate Gaussian over ``(x, y)``."""
    if joint.dim != 2:
        raise ValueError("joint density must be bivariate (x, y)")
    xbar, ybar = joint.mean
    sxx, sxy, syy = joint.cov[0, 0], joint.cov[0, 1], joint.cov[1, 1]
    if syy <= 0:
        raise ValueError("variance of the conditioning variable must be positive")
    gain = sxy / syy
    var = max(sxx - gain * sxy, 0.0)
    return GaussianDensity([xbar + gain * (y - ybar)], [[var]])


def laplace_as_mixture(lam, sigmas) -> GaussianMixture:
    """Zero-mean Gaussian mixture approximating the Laplace density ``lam/2 exp(-lam|x|)``.

    The Laplace law is a normal scale mixture whose mixing variable, the
    component *variance*, is exponential with rate ``lam**2 / 2``.  ``sigmas``
    are the Riemann-sum nodes of that variable, so component j has variance
    ``sigmas[j]`` and weight proportional to
    ``lam**2/2 * exp(-lam**2 * sigmas[j] / 2) * (sigmas[j] - sigmas[j-1])``
    with ``sigmas[-1] := 0``.
    """
    s = np.asarray(sigmas, dtype=float)
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if s.ndim != 1 or s.size < 2:
        raise ValueError("need at least two quadrature nodes")
    if np.any(s <= 0) or np.any(np.diff(s) <= 0):
        raise ValueError("nodes must be positive and strictly increasing")
    widths = np.diff(np.concatenate([[0.0], s]))
    rate = 0.5 * lam**2
    logw = np.log(rate) - rate * s + np.log(widths)
    w = np.exp(logw - logw.max())
    w /= w.sum()
    comps = tuple(GaussianDensity([0.0], [[v]]) for v in s)
    return GaussianMixture(w, comps)


# ---------------------------------------------------------------------------
# ensembles


@dataclass(frozen=True)
class WeightedEnsemble:
    """M weighted state vectors; ``members`` has shape ``(N, M)``."""

    members: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        X = np.asarray(self.members, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.ndim != 2 or X.shape[1] < 1:
            raise ValueError("members must be an (N, M) array with M >= 1")
        M = X.shape[1]
        w = np.full(M, 1.0 / M) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.shape != (M,):
            raise ValueError(f"expected {M} weights, got shape {w.shape}")
        if np.any(w < 0) or not np.all(np.isfinite(w)) or abs(w.sum() - 1.0) > 1e-10:
            raise ValueError("weights must be nonnegative and sum to one")
        object.__setattr__(self, "members", _frozen(X))
        object.__setattr__(self, "weights", _frozen(w))

    @property
    def dim(self):
        return self.members.shape[0]

    @property
    def size(self):
        return self.members.shape[1]

    @property
    def is_uniform(self):
        return bool(np.all(self.weights == self.weights[0]))

    def with_members(self, members):
        return WeightedEnsemble(members, self.weights)

    def with_weights(self, weights):
        return WeightedEnsemble(self.members, weights)


def empirical_mean(e: WeightedEnsemble):
    return e.members @ e.weights


def empirical_cov(e: WeightedEnsemble):
    """Unbiased weighted covariance, ``sum w_i d_i d_i^T / (1 - sum w_i^2)``.

    For uniform weights this is the familiar ``1/(M-1)`` estimator.
    """
    w = e.weights
    denom = 1.0 - float(w @ w)
    if e.size < 2 or denom <= 1e-15:
        raise NumericalError("degenerate ensemble")
    D = e.members - empirical_mean(e)[:, None]
    P = (D * w) @ D.T / denom
    return 0.5 * (P + P.T)


def ensemble_moments(X):
    """Uniform-weight mean, deviation matrix and covariance of an (N, M) array."""
    M = X.shape[1]
    if M < 2:
        raise NumericalError("degenerate ensemble")
    xbar = X.mean(axis=1)
    dX = X - xbar[:, None]
    return xbar, dX, dX @ dX.T / (M - 1)


def point_estimate(e: WeightedEnsemble, loss="mean"):
    """Bayesian point estimate from a weighted ensemble.

    ``"mean"`` minimises squared loss, ``"median"`` is the componentwise
    weighted median (smallest value whose cumulative weight reaches 1/2), and
    ``"map"`` returns the member carrying the largest weight.
    """
    if loss == "mean":
        return empirical_mean(e)
    if loss == "map":
        return e.members[:, int(np.argmax(e.weights))].copy()
    if loss == "median":
        out = np.empty(e.dim)
        for k in range(e.dim):
            order = np.argsort(e.members[k], kind="stable")
            cw = np.cumsum(e.weights[order])
            j = int(np.searchsorted(cw, 0.5 - 1e-12, side="left"))
            out[k] = e.members[k, order[min(j, e.size - 1)]]
        return out
    raise ValueError(f"unknown loss {loss!r}")


# ---------------------------------------------------------------------------
# 1-D grid densities


def cumulative_trapezoid(y, x):
    out = np.zeros_like(y, dtype=float)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(x))
    return out


@dataclass(frozen=True)
class GridDensity1D:
    """Piecewise-linear density tabulated on strictly increasing nodes."""

    nodes: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.nodes, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if x.ndim != 1 or x.size < 2 or v.shape != x.shape:
            raise ValueError("nodes and values must be equal-length vectors (>= 2 points)")
        if np.any(np.diff(x) <= 0):
            raise ValueError("nodes must be strictly increasing")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("density values must be finite and nonnegative")
        object.__setattr__(self, "nodes", _frozen(x))
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def from_pdf(cls, pdf, nodes):
        x = np.asarray(nodes, dtype=float)
        return cls(x, np.asarray(pdf(x), dtype=float)).normalized()

    @classmethod
    def from_samples(cls, samples, weights=None, n_nodes=1024, width=6.0, bandwidth=None):
        """Gaussian kernel density estimate on ``mean +/- width*std`` (Silverman bandwidth)."""
        s = np.asarray(samples, dtype=float).ravel()
        w = np.full(s.size, 1.0 / s.size) if weights is None else np.asarray(weights, float)
        m = float(w @ s)
        sd = math.sqrt(max(float(w @ (s - m) ** 2), 0.0))
        if sd == 0.0:
            raise NumericalError("samples have zero spread")
        h = silverman_bandwidth(s, w) if bandwidth is None else bandwidth
        lo = min(m - width * sd, s.min() - 4 * h)
        hi = max(m + width * sd, s.max() + 4 * h)
        x = np.linspace(lo, hi, n_nodes)
        return cls(x, kde_pdf(x, s, w, h)).normalized()

    def integral(self):
        return float(np.trapezoid(self.values, self.nodes))

    def normalized(self):
        z = self.integral()
        if z <= 0:
            raise NumericalError("density has zero mass")
        return GridDensity1D(self.nodes, self.values / z)

    def cdf(self):
        """Cumulative trapezoid at the nodes, scaled to end at exactly 1."""
        c = cumulative_trapezoid(self.values, self.nodes)
        if c[-1] <= 0:
            raise NumericalError("density has zero mass")
        c = c / c[-1]
        c[-1] = 1.0
        return c

    def __call__(self, x):
        return np.interp(x, self.nodes, self.values, left=0.0, right=0.0)

    def mean(self):
        d = self.normalized()
        return float(np.trapezoid(d.nodes * d.values, d.nodes))

    def var(self):
        d = self.normalized()
        m = d.mean()
        return float(np.trapezoid((d.nodes - m) ** 2 * d.values, d.nodes))


def silverman_bandwidth(samples, weights=None):
    s = np.asarray(samples, dtype=float).ravel()
    w = np.full(s.size, 1.0 / s.size) if weights is None else np.asarray(weights, float)
    m = float(w @ s)
    sd = math.sqrt(max(float(w @ (s - m) ** 2), 0.0))
    n_eff = 1.0 / float(w @ w)
    return 1.06 * sd * n_eff ** (-0.2)


def kde_pdf(x, samples, weights, h, chunk=256):
    """Weighted Gaussian KDE evaluated at points ``x``."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    c = 1.0 / (math.sqrt(2 * math.pi) * h)
    for start in range(0, x.size, chunk):
        xs = x[start:start + chunk]
        z = (xs[:, None] - samples[None, :]) / h
        out[start:start + chunk] = c * (np.exp(-0.5 * z * z) @ weights)
    return out
