"""Resampling: turn a weighted ensemble into an equally weighted one.

All schemes go through :func:`inverse_cdf_indices`.  Offspring counts are
returned alongside the new ensemble; ``counts[i]`` copies of member ``i``
survive and ``counts.sum() == M``.
"""
from __future__ import annotations

import numpy as np

from .prob import WeightedEnsemble
from .transport import CouplingMatrix

SCHEMES = ("multinomial", "residual", "systematic")


def compensated_cumsum(w):
    """Running sum with Neumaier compensation, so interval ends do not drift with M."""
    w = np.asarray(w, dtype=float)
    out = np.empty_like(w)
    s = 0.0
    comp = 0.0
    for k, x in enumerate(w.tolist()):
        t = s + x
        if abs(s) >= abs(x):
            comp += (s - t) + x
        else:
            comp += (x - t) + s
        s = t
        out[k] = s + comp
    return out


def _check_weights(weights):
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty vector")
    if np.any(w < 0) or not np.all(np.isfinite(w)) or abs(w.sum() - 1.0) > 1e-10:
        raise ValueError("weights must be nonnegative and sum to one")
    return w


def inverse_cdf_indices(weights, uniforms):
    """Generalised inverse CDF: index ``i`` (0-based) with ``u`` in ``(C_{i-1}, C_i]``.

    Equivalently the smallest ``i`` whose cumulative weight reaches ``u``.
    """
    w = _check_weights(weights)
    u = np.asarray(uniforms, dtype=float)
    if np.any(u < 0.0) or np.any(u > 1.0) or not np.all(np.isfinite(u)):
        raise ValueError("uniforms must lie in [0, 1]")
    C = compensated_cumsum(w)
    C[-1] = 1.0
    idx = np.searchsorted(C, u, side="left")
    return np.minimum(idx, w.size - 1)


def effective_sample_size(weights):
    w = _check_weights(weights)
    return 1.0 / float(w @ w)


def _counts(indices, M):
    return np.bincount(indices, minlength=M)


def _output(e, indices):
    M = e.size
    return WeightedEnsemble(e.members[:, indices], np.full(M, 1.0 / M)), _counts(indices, M)


def multinomial_indices(weights, rng):
    """M independent draws; slot l is independent of member l."""
    w = _check_weights(weights)
    return inverse_cdf_indices(w, rng.random(w.size))


def residual_indices(weights, rng):
    """``floor(M w_i)`` deterministic copies plus a multinomial top-up over the residuals.

    When the floors already account for all M slots no random numbers are
    drawn.  Offspring are listed in parent order.
    """
    w = _check_weights(weights)
    M = w.size
    Mw = M * w
    # tolerance: M * (1/M) may round just below 1
    floors = np.floor(Mw + 1e-9).astype(int)
    m_bar = M - int(floors.sum())
    counts = floors.copy()
    if m_bar > 0:
        resid = np.clip(Mw - floors, 0.0, None)
        extra = inverse_cdf_indices(resid / resid.sum(), rng.random(m_bar))
        counts += _counts(extra, M)
    return np.repeat(np.arange(M), counts)


def systematic_indices(weights, rng):
    """Stratified grid ``(l + v)/M`` with one shared offset ``v``.

    ``v`` is drawn from ``(0, 1]`` to match the right-closed intervals of the
    inverse CDF, which makes uniform weights map to the identity exactly.
    """
    w = _check_weights(weights)
    M = w.size
    v = 1.0 - rng.random()
    return inverse_cdf_indices(w, np.minimum((np.arange(M) + v) / M, 1.0))


_INDEX_FNS = {
    "multinomial": multinomial_indices,
    "residual": residual_indices,
    "systematic": systematic_indices,
}


def resample_indices(weights, rng, scheme="residual"):
    try:
        fn = _INDEX_FNS[scheme]
    except KeyError:
        raise ValueError(f"unknown resampling scheme {scheme!r}; choose from {SCHEMES}") from None
    return fn(weights, rng)


def multinomial_resample(e: WeightedEnsemble, rng):
    return _output(e, multinomial_indices(e.weights, rng))


def residual_resample(e: WeightedEnsemble, rng):
    return _output(e, residual_indices(e.weights, rng))


def systematic_resample(e: WeightedEnsemble, rng):
    return _output(e, systematic_indices(e.weights, rng))


def resample(e: WeightedEnsemble, rng, scheme="residual"):
    """Resample with the named scheme; returns ``(ensemble, counts)``."""
    return _output(e, resample_indices(e.weights, rng, scheme))


def resampling_plan(indices, weights) -> CouplingMatrix:
    """Coupling induced by a resampling draw.

    Row l is the equally weighted slot l (paired with original member l),
    column i the weighted input member; slot l puts mass 1/M on its parent.
    """
    w = _check_weights(weights)
    M = w.size
    idx = np.asarray(indices, dtype=int)
    T = np.zeros((M, M))
    T[np.arange(M), idx] = 1.0 / M
    # column sums equal the empirical offspring fractions, not w itself
    return CouplingMatrix(T, np.full(M, 1.0 / M), T.sum(axis=0))
