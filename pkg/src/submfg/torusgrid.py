"""Uniform periodic grids on T^d, grid functions, and horizontal operators.

The generator of the controlled diffusion, A = (1/2) sum_i X_i^2 + g . D_X
(+ eps Laplacian), is assembled as one sparse matrix.  The value-function
equation solves with (rho I - A); the stationary density solves with the exact
transpose A^T, which makes discrete duality and mass conservation identities
hold to rounding.

Two spatial schemes:

* "monotone": second differences along the RK4 flows of each field (step
  delta_i = h when the field is constant with integer components, so the
  stencil collapses to the classical one, else delta_i = sqrt(h), which is the
  standard consistency window for multilinear interpolation), plus per-axis
  drift that is centered wherever the assembled diffusion dominates and
  first-order upwind elsewhere.  Off-diagonals stay nonnegative and every row
  sums to zero, so (rho I - A) is an M-matrix.
* "centered": composition of centered first differences, second-order
  consistent, no monotonicity claims.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sparse

__all__ = [
    "TorusGrid",
    "GridFunction",
    "SparseOperator",
    "SolverError",
    "drift_stencil",
    "apply_drift",
    "build_interpolation",
    "rk4_flow",
    "build_generator",
    "horizontal_gradient",
    "adjoint_of",
    "mollify",
    "mollifier_kernel",
    "regularity_norms",
]


class SolverError(RuntimeError):
    """Iteration failed; `best` carries the last/best iterate for inspection."""

    def __init__(self, message, best=None, meta=None):
        super().__init__(message)
        self.best = best
        self.meta = meta or {}


@dataclass(frozen=True)
class TorusGrid:
    """n^d lattice on the unit torus, spacing h = 1/n, C-order node indexing."""

    dim: int
    n: int

    def __post_init__(self):
        if self.dim < 1 or self.n < 3:
            raise ValueError("need dim >= 1 and n >= 3")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def num_nodes(self) -> int:
        return self.n**self.dim

    @cached_property
    def _index_grid(self) -> np.ndarray:
        return np.arange(self.num_nodes).reshape(self.shape)

    def points(self) -> np.ndarray:
        """Node coordinates, shape (num_nodes, dim), lexicographic order."""
        axes = np.unravel_index(np.arange(self.num_nodes), self.shape)
        return np.stack(axes, axis=-1) * self.h

    def shifted_indices(self, axis: int, k: int) -> np.ndarray:
        """Index of the node k cells ahead along one axis (periodic)."""
        return np.roll(self._index_grid, -k, axis=axis).ravel()

    def translate_indices(self, offset) -> np.ndarray:
        """Index of the node at x + h * offset for an integer offset vector."""
        idx = self._index_grid
        for axis, k in enumerate(offset):
            if k:
                idx = np.roll(idx, -int(k), axis=axis)
        return idx.ravel()

    def wrap(self, points: np.ndarray) -> np.ndarray:
        return np.mod(points, 1.0)

    def min_image(self, delta: np.ndarray) -> np.ndarray:
        """Shortest periodic representative of coordinate differences."""
        return delta - np.round(delta)


class GridFunction:
    """Scalar function sampled at grid nodes; mean(u) = h^d sum u."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: TorusGrid, values):
        values = np.asarray(values, dtype=float)
        if values.shape == grid.shape:
            values = values.ravel()
        if values.shape != (grid.num_nodes,):
            raise ValueError(f"values shape {values.shape} does not fit grid")
        self.grid = grid
        self.values = values

    @classmethod
    def from_callable(cls, grid: TorusGrid, f) -> "GridFunction":
        return cls(grid, np.asarray(f(grid.points()), dtype=float))

    @classmethod
    def constant(cls, grid: TorusGrid, c: float) -> "GridFunction":
        return cls(grid, np.full(grid.num_nodes, float(c)))

    def mean(self) -> float:
        return float(self.values.mean())

    # for densities, mass and mean coincide on the unit torus
    mass = mean

    def inner(self, other: "GridFunction") -> float:
        return float(self.values @ other.values) / self.grid.num_nodes

    def norm_sup(self) -> float:
        return float(np.abs(self.values).max())

    def norm_lp(self, p: float) -> float:
        if np.isinf(p):
            return self.norm_sup()
        return float((np.abs(self.values) ** p).mean() ** (1.0 / p))

    def shifted_mean_zero(self) -> "GridFunction":
        return GridFunction(self.grid, self.values - self.values.mean())

    def __add__(self, other):
        other = other.values if isinstance(other, GridFunction) else other
        return GridFunction(self.grid, self.values + other)

    __radd__ = __add__

    def __sub__(self, other):
        other = other.values if isinstance(other, GridFunction) else other
        return GridFunction(self.grid, self.values - other)

    def __rsub__(self, other):
        return GridFunction(self.grid, other - self.values)

    def __mul__(self, other):
        other = other.values if isinstance(other, GridFunction) else other
        return GridFunction(self.grid, self.values * other)

    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    def __repr__(self):
        return f"GridFunction(n={self.grid.n}^{self.grid.dim})"


@dataclass
class SparseOperator:
    """Sparse matrix acting on grid functions, tagged with scheme metadata."""

    grid: TorusGrid
    matrix: sparse.csr_matrix
    scheme: str
    meta: dict = field(default_factory=dict)

    def __call__(self, u):
        vals = u.values if isinstance(u, GridFunction) else np.asarray(u, float)
        out = self.matrix @ vals
        return GridFunction(self.grid, out) if isinstance(u, GridFunction) else out

    def transpose(self) -> "SparseOperator":
        meta = dict(self.meta)
        meta["adjoint_of"] = self.meta.get("role", self.scheme)
        return SparseOperator(self.grid, self.matrix.T.tocsr(), self.scheme, meta)

    def row_sum_defect(self) -> float:
        scale = max(1.0, float(np.abs(self.matrix.data).max()) if self.matrix.nnz else 1.0)
        return float(np.abs(np.asarray(self.matrix.sum(axis=1)).ravel()).max()) / scale


def adjoint_of(op: SparseOperator) -> SparseOperator:
    """Exact transpose; <A u, v>_h = <u, A^T v>_h holds to rounding."""
    return op.transpose()


def build_interpolation(grid: TorusGrid, targets: np.ndarray) -> sparse.csr_matrix:
    """Periodic multilinear interpolation matrix, rows = target points.

    Weights are nonnegative and each row sums to one exactly (in exact
    arithmetic), which the monotone scheme relies on.
    """
    pts = np.atleast_2d(np.asarray(targets, dtype=float))
    npts, dim = pts.shape
    if dim != grid.dim:
        raise ValueError("target dimension mismatch")
    scaled = pts * grid.n
    base = np.floor(scaled).astype(np.int64)
    frac = scaled - base
    rows, cols, vals = [], [], []
    row_idx = np.arange(npts)
    for mask in range(1 << dim):
        corner = np.empty_like(base)
        weight = np.ones(npts)
        for j in range(dim):
            bit = (mask >> j) & 1
            corner[:, j] = (base[:, j] + bit) % grid.n
            weight = weight * (frac[:, j] if bit else 1.0 - frac[:, j])
        rows.append(row_idx)
        cols.append(np.ravel_multi_index(tuple(corner.T), grid.shape))
        vals.append(weight)
    mat = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(npts, grid.num_nodes),
    )
    mat.sum_duplicates()
    return mat


def rk4_flow(vfield, points: np.ndarray, delta: float, substeps: int = 4) -> np.ndarray:
    """Integrate dx/dt = X(x) for time delta with substeps classical RK4 steps."""
    x = np.array(points, dtype=float)
    dt = delta / substeps
    for _ in range(substeps):
        k1 = vfield(x)
        k2 = vfield(x + 0.5 * dt * k1)
        k3 = vfield(x + 0.5 * dt * k2)
        k4 = vfield(x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return np.mod(x, 1.0)


def _drift_vector(grid, family, g, points):
    """Euclidean drift w = sigma^T g, from g . D_X u = sum_j w_j d_j u."""
    if callable(g):
        gv = np.asarray(g(points), dtype=float)
    else:
        gv = np.asarray(g, dtype=float)
    if gv.shape != (grid.num_nodes, family.m):
        raise ValueError(f"drift shape {gv.shape}, expected (N, m)")
    sig = family.sigma(points)
    return np.einsum("nmd,nm->nd", sig, gv)


def _permutation(grid, indices, value=1.0):
    n = grid.num_nodes
    return sparse.csr_matrix(
        (np.full(n, value), (np.arange(n), indices)), shape=(n, n)
    )


def _monotone_diffusion(grid, family, eps, sl_delta):
    """Second-order part: semi-Lagrangian per field, plus eps Laplacian."""
    pts = grid.points()
    h = grid.h
    eye = sparse.identity(grid.num_nodes, format="csr")
    total = sparse.csr_matrix((grid.num_nodes, grid.num_nodes))
    deltas = []
    for X in family.fields:
        v = X(pts)
        constant = np.allclose(v, v[0], atol=1e-12)
        lattice = constant and np.allclose(v[0], np.round(v[0]), atol=1e-12)
        if lattice:
            off = np.round(v[0]).astype(int)
            deltas.append(h)
            if not off.any():
                continue
            w = 1.0 / (2.0 * h * h)
            fwd = _permutation(grid, grid.translate_indices(off), w)
            bwd = _permutation(grid, grid.translate_indices(-off), w)
            total = total + fwd + bwd - (2.0 * w) * eye
        else:
            delta = float(sl_delta) if sl_delta else np.sqrt(h)
            deltas.append(delta)
            pf = build_interpolation(grid, rk4_flow(X, pts, +delta))
            pb = build_interpolation(grid, rk4_flow(X, pts, -delta))
            w = 1.0 / (2.0 * delta * delta)
            total = total + w * (pf + pb) - (2.0 * w) * eye
    if eps > 0.0:
        w = eps / (h * h)
        for axis in range(grid.dim):
            fwd = _permutation(grid, grid.shifted_indices(axis, +1), w)
            bwd = _permutation(grid, grid.shifted_indices(axis, -1), w)
            total = total + fwd + bwd - (2.0 * w) * eye
    return total.tocsr(), deltas


def drift_stencil(grid, diffusion) -> dict:
    """Per-axis neighbor indices and the diffusion weights toward them,
    as used by the centered-vs-upwind switch of `_monotone_drift`."""
    arange = np.arange(grid.num_nodes)
    ip = np.stack([grid.shifted_indices(a, +1) for a in range(grid.dim)], axis=1)
    im = np.stack([grid.shifted_indices(a, -1) for a in range(grid.dim)], axis=1)
    ap = np.stack([np.asarray(diffusion[arange, ip[:, a]]).ravel()
                   for a in range(grid.dim)], axis=1)
    am = np.stack([np.asarray(diffusion[arange, im[:, a]]).ravel()
                   for a in range(grid.dim)], axis=1)
    return {"ip": ip, "im": im, "ap": ap, "am": am}


def apply_drift(grid, stencil, w, u) -> np.ndarray:
    """Action of the hybrid drift discretisation (w . D u), one value per
    node; matches the matrix `_monotone_drift` builds row for row."""
    h = grid.h
    up = u[stencil["ip"]]
    um = u[stencil["im"]]
    sp = (up - u[:, None]) / h
    sm = (u[:, None] - um) / h
    c = np.abs(w) / (2.0 * h)
    centered = np.minimum(stencil["ap"], stencil["am"]) >= c
    act = np.where(centered, 0.5 * w * (sp + sm),
                   np.where(w > 0.0, w * sp, w * sm))
    return act.sum(axis=1)


def _monotone_drift(grid, diffusion, w):
    """Per-axis drift: centered where the diffusion entries dominate, upwind else.

    Centered differencing needs the off-diagonal diffusion weights at both
    axis neighbors to absorb |w_j|/(2h); where they cannot (e.g. along the
    degenerate axis of Grushin), fall back to monotone first-order upwind.
    """
    n = grid.num_nodes
    h = grid.h
    rows, cols, vals = [], [], []
    arange = np.arange(n)
    centered_count = 0
    active = 0
    for axis in range(grid.dim):
        wj = w[:, axis]
        if not np.any(wj):
            continue
        ip = grid.shifted_indices(axis, +1)
        im = grid.shifted_indices(axis, -1)
        ap = np.asarray(diffusion[arange, ip]).ravel()
        am = np.asarray(diffusion[arange, im]).ravel()
        c = wj / (2.0 * h)
        centered = np.minimum(ap, am) >= np.abs(c)
        active += int(np.count_nonzero(wj))
        centered_count += int(np.count_nonzero(centered & (wj != 0)))
        # centered rows: +c at forward neighbor, -c at backward, zero diagonal
        idx = np.where(centered)[0]
        if idx.size:
            rows += [idx, idx]
            cols += [ip[idx], im[idx]]
            vals += [c[idx], -c[idx]]
        # upwind rows: first order one-sided by the sign of w_j
        idx = np.where(~centered)[0]
        if idx.size:
            wp = np.maximum(wj[idx], 0.0) / h
            wm = np.maximum(-wj[idx], 0.0) / h
            rows += [idx, idx, idx]
            cols += [ip[idx], im[idx], idx]
            vals += [wp, wm, -(wp + wm)]
    if not rows:
        return sparse.csr_matrix((n, n)), 1.0
    mat = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    frac = centered_count / active if active else 1.0
    return mat, frac


def _centered_first_differences(grid):
    h = grid.h
    eye = sparse.identity(grid.num_nodes, format="csr")
    out = []
    for axis in range(grid.dim):
        fwd = _permutation(grid, grid.shifted_indices(axis, +1))
        bwd = _permutation(grid, grid.shifted_indices(axis, -1))
        out.append((fwd - bwd) * (0.5 / h))
    return out, eye


def build_generator(
    grid: TorusGrid,
    family,
    g=None,
    scheme: str = "monotone",
    eps: float = 0.0,
    sl_delta: float | None = None,
) -> SparseOperator:
    """Assemble A = (1/2) sum_i X_i^2 + g . D_X + eps * Laplacian.

    A is the generator of the controlled diffusion: constants are in its
    kernel.  The value-function solves use (rho I - A); the stationary density
    solves use A^T.  With scheme="monotone" the off-diagonal entries are
    nonnegative and row sums vanish, so (rho I - A) is an M-matrix for rho > 0.
    """
    if scheme not in ("monotone", "centered"):
        raise ValueError("scheme must be 'monotone' or 'centered'")
    if family.dim != grid.dim:
        raise ValueError("family dimension does not match grid")
    pts = grid.points()
    meta = {"eps": eps, "role": "generator"}
    if scheme == "monotone":
        diffusion, deltas = _monotone_diffusion(grid, family, eps, sl_delta)
        meta["sl_deltas"] = tuple(deltas)
        mat = diffusion
        if g is not None:
            w = _drift_vector(grid, family, g, pts)
            drift, frac = _monotone_drift(grid, diffusion, w)
            mat = (diffusion + drift).tocsr()
            meta["centered_fraction"] = frac
    else:
        diff_ops, eye = _centered_first_differences(grid)
        sig = family.sigma(pts)
        mat = sparse.csr_matrix((grid.num_nodes, grid.num_nodes))
        first_order = []
        for i in range(family.m):
            xi = sparse.csr_matrix((grid.num_nodes, grid.num_nodes))
            for j in range(grid.dim):
                col = sig[:, i, j]
                if np.any(col):
                    xi = xi + sparse.diags(col) @ diff_ops[j]
            first_order.append(xi)
            mat = mat + 0.5 * (xi @ xi)
        if g is not None:
            gv = np.asarray(g(pts) if callable(g) else g, dtype=float)
            if gv.shape != (grid.num_nodes, family.m):
                raise ValueError(f"drift shape {gv.shape}, expected (N, m)")
            for i in range(family.m):
                if np.any(gv[:, i]):
                    mat = mat + sparse.diags(gv[:, i]) @ first_order[i]
        if eps > 0.0:
            h = grid.h
            for axis in range(grid.dim):
                fwd = _permutation(grid, grid.shifted_indices(axis, +1))
                bwd = _permutation(grid, grid.shifted_indices(axis, -1))
                mat = mat + (eps / (h * h)) * (fwd + bwd - 2.0 * eye)
        mat = mat.tocsr()
    return SparseOperator(grid, mat, scheme, meta)


def horizontal_gradient(grid: TorusGrid, family, u, scheme: str = "centered") -> np.ndarray:
    """D_X u = (X_1 u, .., X_m u), shape (N, m), via centered differences."""
    if scheme != "centered":
        raise ValueError("horizontal_gradient supports the centered stencil only")
    vals = u.values if isinstance(u, GridFunction) else np.asarray(u, float)
    h = grid.h
    partials = np.empty((grid.num_nodes, grid.dim))
    for axis in range(grid.dim):
        ip = grid.shifted_indices(axis, +1)
        im = grid.shifted_indices(axis, -1)
        partials[:, axis] = (vals[ip] - vals[im]) / (2.0 * h)
    sig = family.sigma(grid.points())
    return np.einsum("nmd,nd->nm", sig, partials)


def mollifier_kernel(grid: TorusGrid, zeta: float) -> np.ndarray:
    """Compactly supported bump on the torus, weights normalized to sum 1."""
    if not 0.0 < zeta < 0.5:
        raise ValueError("mollifier width must satisfy 0 < zeta < 1/2 on T^d")
    axes = np.unravel_index(np.arange(grid.num_nodes), grid.shape)
    coords = np.stack(axes, axis=-1) * grid.h
    disp = grid.min_image(coords)
    r2 = (disp**2).sum(axis=1) / (zeta * zeta)
    w = np.zeros(grid.num_nodes)
    inside = r2 < 1.0
    w[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    total = w.sum()
    if total <= 0.0:
        raise ValueError("mollifier support contains no grid node")
    return (w / total).reshape(grid.shape)


def mollify(f: GridFunction, zeta: float) -> GridFunction:
    """Periodic convolution with the normalized bump; preserves the mean."""
    grid = f.grid
    kernel = mollifier_kernel(grid, zeta)
    fk = np.fft.rfftn(f.values.reshape(grid.shape))
    wk = np.fft.rfftn(kernel)
    axes = tuple(range(grid.dim))
    out = np.fft.irfftn(fk * wk, s=grid.shape, axes=axes)
    return GridFunction(grid, out.ravel())


def _holder_pairs(grid, max_pairs):
    max_nodes = max(2, int(np.sqrt(2.0 * max_pairs)))
    stride = int(np.ceil(grid.num_nodes / max_nodes))
    sub = np.arange(0, grid.num_nodes, stride)
    ia, ib = np.triu_indices(sub.size, k=1)
    return sub[ia], sub[ib]


def regularity_norms(
    u: GridFunction,
    family,
    alpha: float = 0.5,
    pair_distance=None,
    p_values=(1, 2),
    max_pairs: int = 100_000,
) -> dict:
    """Sup norm, sampled alpha-Holder seminorm, and W^{1,p}_X norms.

    The Holder seminorm is taken over a deterministic stride subsample of node
    pairs (at most max_pairs of them).  pair_distance(idx_a, idx_b) supplies
    the metric; the default is the flat-torus Euclidean distance.
    """
    grid = u.grid
    ia, ib = _holder_pairs(grid, max_pairs)
    if pair_distance is None:
        pts = grid.points()
        diff = grid.min_image(pts[ia] - pts[ib])
        dist = np.linalg.norm(diff, axis=1)
    else:
        dist = np.asarray(pair_distance(ia, ib), dtype=float)
    gap = np.abs(u.values[ia] - u.values[ib])
    ok = dist > 0
    seminorm = float((gap[ok] / dist[ok] ** alpha).max()) if ok.any() else 0.0
    grad = horizontal_gradient(grid, family, u)
    gnorm = np.linalg.norm(grad, axis=1)
    w1p = {}
    for p in p_values:
        up = u.norm_lp(p)
        gp = float((gnorm**p).mean() ** (1.0 / p))
        w1p[p] = (up**p + gp**p) ** (1.0 / p)
    return {
        "sup": u.norm_sup(),
        "alpha": alpha,
        "holder_seminorm": seminorm,
        "pairs": int(ia.size),
        "w1p": w1p,
    }
