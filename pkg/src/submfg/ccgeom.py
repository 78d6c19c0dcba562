"""Carnot-Caratheodory distance on the grid via shortest paths.

Horizontal curves are approximated by a directed graph: from each node we
shoot short arcs along constant combinations of the generating fields,
snap the endpoint to the lattice, and charge the arc's travel time scaled
by |snapped displacement| / |continuous displacement|.  Dijkstra on that
graph gives d_CC up to O(h).

Arcs of several lengths (horizons) are needed: near a degeneracy locus
the reachable set grows anisotropically and single-step arcs stay stuck
on the lattice directions.  Parallel edges between the same pair keep the
minimum weight.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from .torusgrid import GridFunction, TorusGrid
from .vfields import VectorFieldFamily

__all__ = [
    "DistanceMap",
    "cc_distance_map",
    "distance_equivalence_fit",
    "homogeneous_dimension_fit",
]


def direction_samples(m: int, ndirs: int) -> np.ndarray:
    """Unit vectors in control space: +-1 for m=1, equal angles for m=2,
    a deterministic Fibonacci lattice on S^{m-1} for m>=3."""
    if m == 1:
        return np.array([[1.0], [-1.0]])
    if m == 2:
        ang = 2.0 * np.pi * np.arange(ndirs) / ndirs
        return np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    # golden-spiral points, antipodally symmetrized
    k = np.arange(ndirs)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * k
    z = 1.0 - 2.0 * (k + 0.5) / ndirs
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    pts = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
    if m > 3:
        rng = np.random.default_rng(0)
        mat = np.linalg.qr(rng.standard_normal((m, m)))[0]
        pts = np.pad(pts, ((0, 0), (0, m - 3))) @ mat.T
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return np.concatenate([pts, -pts], axis=0)


@dataclass(frozen=True)
class DistanceMap:
    """d_CC(source, .) sampled at the nodes, plus the graph parameters."""

    grid: TorusGrid
    family: VectorFieldFamily
    source: np.ndarray
    values: GridFunction
    horizons: tuple = (1, 2, 4)
    ndirs: int = 16
    meta: dict = field(default_factory=dict)

    @property
    def reachable_fraction(self) -> float:
        return float(np.mean(np.isfinite(self.values.values)))


def _arc_graph(grid: TorusGrid, family: VectorFieldFamily,
               horizons, ndirs: int) -> sp.csr_matrix:
    pts = grid.points()
    sig = family.sigma(pts)
    nn, h = grid.num_nodes, grid.h
    multi = np.stack(np.unravel_index(np.arange(nn), grid.shape), axis=-1)
    dirs = direction_samples(family.m, ndirs)
    rows, cols, vals = [], [], []
    for r in horizons:
        tau = r * h
        for alpha in dirs:
            disp = tau * np.einsum("nmd,m->nd", sig, alpha)
            off = np.round(disp / h).astype(np.int64)
            cont = np.linalg.norm(disp, axis=1)
            snap = np.linalg.norm(off * h, axis=1)
            keep = (snap > 0.0) & (cont > 1e-300)
            if not keep.any():
                continue
            tgt = np.ravel_multi_index(
                ((multi[keep] + off[keep]) % grid.n).T, grid.shape)
            rows.append(np.flatnonzero(keep))
            cols.append(tgt)
            # time to traverse the snapped displacement at the arc's speed
            vals.append(tau * snap[keep] / cont[keep])
    if not rows:
        return sp.csr_matrix((nn, nn))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    key = rows * nn + cols
    order = np.lexsort((vals, key))
    key, rows, cols, vals = key[order], rows[order], cols[order], vals[order]
    first = np.ones(key.size, dtype=bool)
    first[1:] = key[1:] != key[:-1]
    return sp.csr_matrix((vals[first], (rows[first], cols[first])), shape=(nn, nn))


def cc_distance_map(grid: TorusGrid, family: VectorFieldFamily,
                    source: np.ndarray, horizons=(1, 2, 4),
                    ndirs: int = 16) -> DistanceMap:
    """Shortest-path distance from `source` (snapped to the nearest node)."""
    if family.dim != grid.dim:
        raise ValueError("field family and grid dimension mismatch")
    source = np.asarray(source, dtype=float) % 1.0
    src_multi = tuple(int(i) % grid.n for i in np.round(source / grid.h))
    src = int(np.ravel_multi_index(src_multi, grid.shape))
    graph = _arc_graph(grid, family, tuple(horizons), ndirs)
    dist = dijkstra(graph, directed=True, indices=src, min_only=True)
    dist[src] = 0.0
    unreachable = int(np.sum(~np.isfinite(dist)))
    return DistanceMap(
        grid=grid, family=family,
        source=np.asarray(src_multi, dtype=float) * grid.h,
        values=GridFunction(grid, dist),
        horizons=tuple(horizons), ndirs=ndirs,
        meta={"edges": int(graph.nnz), "unreachable": unreachable},
    )


def homogeneous_dimension_fit(dmap: DistanceMap, radii) -> dict:
    """Slope of log ball-volume vs log radius.

    Ball volume is (number of nodes with d_CC <= r) * h^d.  Radii outside
    (3h, 1/4) are dropped; fewer than 3 usable radii is an error."""
    radii = np.sort(np.asarray(radii, dtype=float))
    h, d = dmap.grid.h, dmap.grid.dim
    usable = radii[(radii > 3.0 * h) & (radii < 0.25)]
    if usable.size < 3:
        raise ValueError(
            f"need at least 3 radii in (3h, 0.25) = ({3*h:.4g}, 0.25); "
            f"got {usable.size}")
    vals = dmap.values.values
    counts = np.array([np.sum(vals <= r) for r in usable], dtype=float)
    if np.any(counts == 0):
        raise ValueError("empty metric ball; radii too small for this grid")
    logs_r = np.log(usable)
    logs_v = np.log(counts * h**d)
    slope, intercept = np.polyfit(logs_r, logs_v, 1)
    resid = logs_v - (slope * logs_r + intercept)
    return {
        "Q": float(slope),
        "intercept": float(intercept),
        "residual": float(np.sqrt(np.mean(resid**2))),
        "radii": usable,
        "volumes": counts * h**d,
    }


def distance_equivalence_fit(dmaps, k_max: float = 0.1) -> dict:
    """Compare d_CC with the Euclidean torus distance over all nodes of
    every map: lower bound constant, and the small-scale exponent from a
    log-log fit restricted to |x-y| <= k_max."""
    ratios = []
    le, lc = [], []
    for dmap in dmaps:
        grid = dmap.grid
        pts = grid.points()
        delta = grid.min_image(pts - dmap.source[None, :])
        euc = np.linalg.norm(delta, axis=1)
        cc = dmap.values.values
        ok = np.isfinite(cc) & (euc > 0) & (cc > 0)
        ratios.append(np.max(euc[ok] / cc[ok]))
        small = ok & (euc <= k_max)
        le.append(np.log(euc[small]))
        lc.append(np.log(cc[small]))
    le = np.concatenate(le)
    lc = np.concatenate(lc)
    if le.size < 10:
        raise ValueError("too few node pairs below the distance cutoff")
    slope, intercept = np.polyfit(le, lc, 1)
    return {
        "C_lower": float(max(ratios)),
        "exponent": float(slope),
        "C_upper": float(np.exp(intercept)),
        "pairs": int(le.size),
    }
