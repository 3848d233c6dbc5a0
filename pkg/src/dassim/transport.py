"""Couplings and transport maps.

Covers monotone 1-D rearrangements on grids, the Knothe-Rosenblatt map in
two dimensions, affine maps between Gaussians, and the discrete
Monge-Kantorovich problem solved with the transportation simplex.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import NumericalError
from .prob import (
    GaussianDensity,
    GridDensity1D,
    _frozen,
    inv_sqrt,
    matrix_sqrt,
    pinv_sqrt,
)

# ---------------------------------------------------------------------------
# map types


@dataclass(frozen=True)
class AffineMap:
    """``x -> offset + linear @ (x - anchor)``."""

    offset: np.ndarray
    linear: np.ndarray
    anchor: np.ndarray

    def __post_init__(self):
        offset = np.atleast_1d(np.asarray(self.offset, float))
        anchor = np.atleast_1d(np.asarray(self.anchor, float))
        linear = np.atleast_2d(np.asarray(self.linear, float))
        if linear.shape != (offset.size, anchor.size):
            raise ValueError("linear part does not match offset/anchor dimensions")
        if not all(np.all(np.isfinite(a)) for a in (offset, anchor, linear)):
            raise ValueError("affine map has non-finite entries")
        object.__setattr__(self, "offset", _frozen(offset))
        object.__setattr__(self, "anchor", _frozen(anchor))
        object.__setattr__(self, "linear", _frozen(linear))

    def __call__(self, x):
        x = np.asarray(x, float)
        if x.ndim <= 1:
            return self.offset + self.linear @ (np.atleast_1d(x) - self.anchor)
        return self.offset[:, None] + self.linear @ (x - self.anchor[:, None])

    def pushforward(self, g: GaussianDensity) -> GaussianDensity:
        L = self.linear
        return GaussianDensity(self(g.mean), L @ g.cov @ L.T)

    def transport_cost(self, g: GaussianDensity) -> float:
        """``E |x - T(x)|^2`` for ``x ~ g``, computed in closed form."""
        L = self.linear
        d_mean = g.mean - self(g.mean)
        IL = np.eye(g.dim) - L
        return float(d_mean @ d_mean + np.trace(IL @ g.cov @ IL.T))


@dataclass(frozen=True)
class GridMap1D:
    """Monotone map tabulated at ``nodes``; linear interpolation in between."""

    nodes: np.ndarray
    images: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.nodes, float)
        y = np.asarray(self.images, float)
        if x.shape != y.shape or x.ndim != 1:
            raise ValueError("nodes and images must be equal-length vectors")
        if np.any(np.diff(y) < -1e-10):
            raise ValueError("map is not monotone")
        object.__setattr__(self, "nodes", _frozen(x))
        object.__setattr__(self, "images", _frozen(y))

    def __call__(self, x):
        return np.interp(x, self.nodes, self.images)


@dataclass(frozen=True)
class CouplingMatrix:
    """Discrete transference plan with its two marginals.

    ``entries[i, j]`` is the mass moved from source point i to target point j;
    rows sum to ``row_marginal`` and columns to ``col_marginal``.
    """

    entries: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray

    def __post_init__(self):
        T = np.asarray(self.entries, float)
        r = np.asarray(self.row_marginal, float)
        c = np.asarray(self.col_marginal, float)
        if T.shape != (r.size, c.size):
            raise ValueError("plan shape does not match marginals")
        if T.min(initial=0.0) < -1e-12:
            raise ValueError("plan has negative entries")
        if np.max(np.abs(T.sum(axis=1) - r)) > 1e-8 or np.max(np.abs(T.sum(axis=0) - c)) > 1e-8:
            raise ValueError("plan violates its marginal constraints")
        object.__setattr__(self, "entries", _frozen(np.clip(T, 0.0, None)))
        object.__setattr__(self, "row_marginal", _frozen(r))
        object.__setattr__(self, "col_marginal", _frozen(c))

    def cost(self, cost_matrix):
        return float(np.sum(self.entries * np.asarray(cost_matrix, float)))

    def covariance(self, x, y):
        """Covariance between source points ``x`` and target points ``y`` under the plan.

        ``x`` and ``y`` are (M,) or (N, M) arrays of support points.
        """
        X = np.atleast_2d(np.asarray(x, float))
        Y = np.atleast_2d(np.asarray(y, float))
        dx = X - (X @ self.row_marginal)[:, None]
        dy = Y - (Y @ self.col_marginal)[:, None]
        return dx @ self.entries @ dy.T


def squared_distance_cost(x, y=None):
    X = np.atleast_2d(np.asarray(x, float))
    Y = X if y is None else np.atleast_2d(np.asarray(y, float))
    return np.sum((X[:, :, None] - Y[:, None, :]) ** 2, axis=0)


def independent_coupling(row_marginal, col_marginal) -> CouplingMatrix:
    r = np.asarray(row_marginal, float)
    c = np.asarray(col_marginal, float)
    return CouplingMatrix(np.outer(r, c), r, c)


# ---------------------------------------------------------------------------
# one-dimensional transport on grids


def _check_invertible(d: GridDensity1D):
    cell_mass = d.values[1:] + d.values[:-1]
    pos = np.flatnonzero(cell_mass > 0)
    if pos.size == 0:
        raise NumericalError("non-invertible CDF")
    if np.any(cell_mass[pos[0]:pos[-1] + 1] <= 0):
        raise NumericalError("non-invertible CDF")


def grid_quantile(d: GridDensity1D, p):
    """Generalised inverse CDF of a grid density.

    The CDF is the cumulative trapezoid, inverted by linear interpolation;
    on flat stretches the leftmost node wins.
    """
    p = np.asarray(p, float)
    C = d.cdf()
    x = d.nodes
    k = np.searchsorted(C, p, side="left")
    k = np.clip(k, 1, x.size - 1)
    c0, c1 = C[k - 1], C[k]
    frac = np.clip((p - c0) / np.where(c1 > c0, c1 - c0, 1.0), 0.0, 1.0)
    out = x[k - 1] + frac * (x[k] - x[k - 1])
    return np.where(p <= C[0], x[0], out)


def quantile_transport_1d(src: GridDensity1D, dst: GridDensity1D) -> GridMap1D:
    """Monotone map ``F_dst^{-1} o F_src`` tabulated on the source nodes."""
    _check_invertible(dst)
    images = grid_quantile(dst, src.cdf())
    return GridMap1D(src.nodes, np.maximum.accumulate(images))


def wasserstein2_1d(src: GridDensity1D, dst: GridDensity1D) -> float:
    """L2-Wasserstein distance between two grid densities.

    Uses the quantile coupling, which is optimal on the line.  Both quantile
    functions are piecewise linear in the probability level, so a two-point
    Gauss-Legendre rule on the merged breakpoints integrates exactly.
    """
    brk = np.unique(np.concatenate([src.cdf(), dst.cdf(), [0.0, 1.0]]))
    brk = brk[(brk >= 0.0) & (brk <= 1.0)]
    a, b = brk[:-1], brk[1:]
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    g = 1.0 / np.sqrt(3.0)
    total = 0.0
    for p in (mid - g * half, mid + g * half):
        diff = grid_quantile(src, p) - grid_quantile(dst, p)
        total += float(np.sum(half * diff * diff))
    return float(np.sqrt(max(total, 0.0)))


# ---------------------------------------------------------------------------
# Knothe-Rosenblatt


@dataclass(frozen=True)
class GridDensity2D:
    """Density tabulated on a tensor grid; ``values[a, b]`` sits at ``(x1[a], x2[b])``."""

    x1: np.ndarray
    x2: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        x1 = np.asarray(self.x1, float)
        x2 = np.asarray(self.x2, float)
        v = np.asarray(self.values, float)
        if v.shape != (x1.size, x2.size):
            raise ValueError("values must have shape (len(x1), len(x2))")
        if np.any(np.diff(x1) <= 0) or np.any(np.diff(x2) <= 0):
            raise ValueError("grid nodes must be strictly increasing")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("density values must be finite and nonnegative")
        object.__setattr__(self, "x1", _frozen(x1))
        object.__setattr__(self, "x2", _frozen(x2))
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def from_pdf(cls, pdf, x1, x2):
        """Tabulate ``pdf(points)`` where ``points`` is a (2, K) array."""
        X1, X2 = np.meshgrid(x1, x2, indexing="ij")
        pts = np.vstack([X1.ravel(), X2.ravel()])
        return cls(x1, x2, np.asarray(pdf(pts), float).reshape(X1.shape))

    def transposed(self):
        return GridDensity2D(self.x2, self.x1, self.values.T)

    def marginal1(self) -> GridDensity1D:
        return GridDensity1D(self.x1, np.trapezoid(self.values, self.x2, axis=1)).normalized()


@dataclass(frozen=True)
class KnotheRosenblattMap:
    """Triangular map ``(x1, x2) -> (T1(x1), T2(x1, x2))``.

    ``order=(1, 0)`` means the second coordinate was coupled first.
    """

    first: GridMap1D
    x2: np.ndarray
    second_images: np.ndarray
    order: tuple = (0, 1)

    def __call__(self, points):
        P = np.asarray(points, float)
        single = P.ndim == 1
        P = P.reshape(2, -1)
        a, b = P[self.order[0]], P[self.order[1]]
        x1 = self.first.nodes
        interp = RegularGridInterpolator((x1, self.x2), self.second_images)
        q = np.column_stack([np.clip(a, x1[0], x1[-1]), np.clip(b, self.x2[0], self.x2[-1])])
        out = np.empty_like(P)
        out[self.order[0]] = self.first(a)
        out[self.order[1]] = interp(q)
        return out[:, 0] if single else out


def knothe_rosenblatt_2d(src: GridDensity2D, dst: GridDensity2D, order=(0, 1)) -> KnotheRosenblattMap:
    """Knothe-Rosenblatt rearrangement between two tabulated 2-D densities.

    The coordinate ``order[0]`` is coupled through its marginals; the other
    one through conditionals, source row ``x1`` being sent to the target
    conditional at ``T1(x1)`` (linear interpolation between target rows).
    """
    order = tuple(order)
    if sorted(order) != [0, 1]:
        raise ValueError("order must be a permutation of (0, 1)")
    if order == (1, 0):
        src, dst = src.transposed(), dst.transposed()
    t1 = quantile_transport_1d(src.marginal1(), dst.marginal1())
    y1 = t1.images
    src_mass = np.trapezoid(src.values, src.x2, axis=1)

    images = np.empty((src.x1.size, src.x2.size))
    valid = np.zeros(src.x1.size, dtype=bool)
    for a in range(src.x1.size):
        if src_mass[a] <= 0:
            continue
        j = int(np.clip(np.searchsorted(dst.x1, y1[a]) - 1, 0, dst.x1.size - 2))
        lam = np.clip((y1[a] - dst.x1[j]) / (dst.x1[j + 1] - dst.x1[j]), 0.0, 1.0)
        row = (1 - lam) * dst.values[j] + lam * dst.values[j + 1]
        if np.trapezoid(row, dst.x2) <= 0:
            raise NumericalError("degenerate conditional in target density")
        cond_dst = GridDensity1D(dst.x2, row).normalized()
        cond_src = GridDensity1D(src.x2, src.values[a]).normalized()
        images[a] = quantile_transport_1d(cond_src, cond_dst).images
        valid[a] = True
    if not valid.any():
        raise NumericalError("degenerate conditional in source density")
    # rows without source mass carry no probability; reuse the nearest valid row
    idx = np.flatnonzero(valid)
    for a in np.flatnonzero(~valid):
        images[a] = images[idx[np.argmin(np.abs(idx - a))]]
    return KnotheRosenblattMap(t1, _frozen(src.x2), _frozen(images), order)


# ---------------------------------------------------------------------------
# Gaussian maps


def gaussian_affine_coupling(g1: GaussianDensity, g2: GaussianDensity) -> AffineMap:
    """Deterministic coupling ``x2 = m2 + S2^{1/2} S1^{-1/2} (x1 - m1)`` (not optimal)."""
    if g1.dim != g2.dim:
        raise ValueError("densities must share a dimension")
    L = matrix_sqrt(g2.cov) @ inv_sqrt(g1.cov)
    return AffineMap(g2.mean, L, g1.mean)


def gaussian_optimal_map(g1: GaussianDensity, g2: GaussianDensity) -> AffineMap:
    """Optimal (squared-distance) transport map between two Gaussians.

    The linear part ``S2h [S2h S1 S2h]^{-1/2} S2h`` is symmetric positive
    definite, i.e. the gradient of a convex quadratic potential.
    """
    if g1.dim != g2.dim:
        raise ValueError("densities must share a dimension")
    s2h = matrix_sqrt(g2.cov)
    inv_sqrt(g2.cov)  # raises on singular target covariance
    inner = s2h @ g1.cov @ s2h
    L = s2h @ inv_sqrt(0.5 * (inner + inner.T)) @ s2h
    return AffineMap(g2.mean, 0.5 * (L + L.T), g1.mean)


def gaussian_optimal_map_factored(mean1, cov1, mean2, A) -> AffineMap:
    """Optimal Gaussian map written with any factor ``A`` of the target covariance (``A A^T = S2``).

    ``A`` may be rectangular or rank deficient; the inner inverse square root
    is then a pseudo-inverse.
    """
    m1 = np.atleast_1d(np.asarray(mean1, float))
    m2 = np.atleast_1d(np.asarray(mean2, float))
    S1 = np.atleast_2d(np.asarray(cov1, float))
    A = np.atleast_2d(np.asarray(A, float))
    if S1.shape != (m1.size, m1.size) or A.shape[0] != m2.size or A.shape[0] != m1.size:
        raise ValueError("dimension mismatch between means, covariance and factor")
    inner = A.T @ S1 @ A
    L = A @ pinv_sqrt(0.5 * (inner + inner.T)) @ A.T
    return AffineMap(m2, L, m1)


# ---------------------------------------------------------------------------
# discrete Monge-Kantorovich via the transportation simplex


def _check_simplex(p, name):
    p = np.asarray(p, float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError(f"{name} must be a non-empty vector")
    if np.any(p < 0) or not np.all(np.isfinite(p)) or abs(p.sum() - 1.0) > 1e-10:
        raise ValueError(f"infeasible marginals: {name} must be nonnegative and sum to one")
    return p


def northwest_corner(row_marginal, col_marginal):
    """Monotone (north-west corner) plan and its spanning-tree basis.

    Returns ``(entries, basis)`` where ``basis`` lists the m+n-1 basic cells,
    some of which may carry zero mass.
    """
    r = np.array(row_marginal, float)
    c = np.array(col_marginal, float)
    m, n = r.size, c.size
    T = np.zeros((m, n))
    basis = []
    i = j = 0
    while True:
        q = min(r[i], c[j])
        T[i, j] = q
        basis.append((i, j))
        r[i] -= q
        c[j] -= q
        if i == m - 1 and j == n - 1:
            break
        if j == n - 1 or (i < m - 1 and r[i] <= c[j]):
            i += 1
        else:
            j += 1
    return T, basis


def _tree_path(adj, start, goal):
    parent = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        for nb in adj[node]:
            if nb not in parent:
                parent[nb] = node
                queue.append(nb)
    path = [goal]
    while path[-1] != start:
        path.append(parent[path[-1]])
    return path[::-1]


def _potentials(adj, C, m, n):
    u = np.full(m, np.nan)
    v = np.full(n, np.nan)
    u[0] = 0.0
    queue = deque([0])
    seen = {0}
    while queue:
        node = queue.popleft()
        for nb in adj[node]:
            if nb in seen:
                continue
            seen.add(nb)
            if node < m:
                v[nb - m] = C[node, nb - m] - u[node]
            else:
                u[nb] = C[nb, node - m] - v[node - m]
            queue.append(nb)
    return u, v


def discrete_optimal_coupling(row_marginal, col_marginal, cost, max_iter=None) -> CouplingMatrix:
    """Minimise ``sum t_ij c_ij`` over plans with the given marginals.

    Transportation simplex (MODI): north-west corner start, potentials from
    the basis tree, most negative reduced cost enters, ratio test on the
    unique tree cycle.  Supports rectangular problems although the filters
    only need square ones.
    """
    r = _check_simplex(row_marginal, "row_marginal")
    c = _check_simplex(col_marginal, "col_marginal")
    C = np.asarray(cost, float)
    m, n = r.size, c.size
    if C.shape != (m, n):
        raise ValueError(f"cost must have shape {(m, n)}, got {C.shape}")
    if not np.all(np.isfinite(C)):
        raise ValueError("cost has non-finite entries")
    c = c * (r.sum() / c.sum())

    T, basis = northwest_corner(r, c)
    adj = [set() for _ in range(m + n)]
    for i, j in basis:
        adj[i].add(m + j)
        adj[m + j].add(i)
    in_basis = np.zeros((m, n), dtype=bool)
    for i, j in basis:
        in_basis[i, j] = True

    tol = 1e-12 * max(1.0, float(np.max(np.abs(C), initial=0.0)))
    max_iter = max_iter or 50 * (m + n) ** 2
    for _ in range(max_iter):
        u, v = _potentials(adj, C, m, n)
        red = C - u[:, None] - v[None, :]
        red[in_basis] = 0.0
        flat = int(np.argmin(red))
        if red.flat[flat] >= -tol:
            break
        ei, ej = divmod(flat, n)
        # path row ei -> ... -> col ej inside the tree closes the cycle
        path = _tree_path(adj, ei, m + ej)
        cells = []
        for a, b in zip(path[:-1], path[1:]):
            cells.append((a, b - m) if a < m else (b, a - m))
        minus = cells[0::2]
        plus = cells[1::2]
        theta = min(T[i, j] for i, j in minus)
        leave = next(cell for cell in minus if T[cell] == theta)
        for cell in minus:
            T[cell] -= theta
        for cell in plus:
            T[cell] += theta
        T[ei, ej] = theta
        T[leave] = 0.0
        li, lj = leave
        adj[li].discard(m + lj)
        adj[m + lj].discard(li)
        in_basis[leave] = False
        adj[ei].add(m + ej)
        adj[m + ej].add(ei)
        in_basis[ei, ej] = True
    else:
        raise NumericalError("transportation simplex did not converge")
    return CouplingMatrix(np.clip(T, 0.0, None), r, c)
