"""Families of horizontal vector fields on the flat torus T^d = (R/Z)^d.

Fields carry closed-form (sympy) coefficients so that iterated Lie brackets,
which need coefficient derivatives up to the bracket depth, are exact.  Numeric
evaluation is vectorized over batches of points via lambdify.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import sympy as sp

__all__ = [
    "VectorField",
    "VectorFieldFamily",
    "lie_bracket",
    "bracket_tree",
    "verify_hormander",
    "BracketEntry",
    "HormanderReport",
    "euclidean",
    "grushin",
    "heisenberg_periodic",
    "family_by_name",
]


def _symbols(dim: int):
    return sp.symbols(f"x0:{dim}", real=True)


def _lambdify_component(xs, expr):
    f = sp.lambdify(xs, expr, modules="numpy")

    def evaluate(cols):
        out = f(*cols)
        # constant expressions collapse to scalars under lambdify
        return np.broadcast_to(np.asarray(out, dtype=float), cols[0].shape).copy()

    return evaluate


class VectorField:
    """A single vector field with exact coefficient derivatives."""

    def __init__(self, dim: int, exprs):
        self.dim = dim
        self.exprs = tuple(sp.sympify(e) for e in exprs)
        if len(self.exprs) != dim:
            raise ValueError(f"expected {dim} components, got {len(self.exprs)}")
        xs = _symbols(dim)
        self._xs = xs
        self._comp = [_lambdify_component(xs, e) for e in self.exprs]
        self._jac = [
            [_lambdify_component(xs, sp.diff(e, x)) for x in xs] for e in self.exprs
        ]

    def __call__(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at points of shape (N, d); returns (N, d)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        cols = [pts[:, j] for j in range(self.dim)]
        return np.stack([c(cols) for c in self._comp], axis=-1)

    def jacobian(self, points: np.ndarray) -> np.ndarray:
        """Spatial Jacobian J[n, a, b] = d(component a)/dx_b, shape (N, d, d)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        cols = [pts[:, j] for j in range(self.dim)]
        rows = [np.stack([f(cols) for f in row], axis=-1) for row in self._jac]
        return np.stack(rows, axis=-2)

    def divergence(self, points: np.ndarray) -> np.ndarray:
        jac = self.jacobian(points)
        return np.trace(jac, axis1=-2, axis2=-1)

    def is_zero(self) -> bool:
        return all(sp.simplify(e) == 0 for e in self.exprs)

    def __repr__(self):
        return f"VectorField({list(self.exprs)})"


def lie_bracket(a: VectorField, b: VectorField) -> VectorField:
    """[a, b] = (Db) a - (Da) b, computed symbolically."""
    if a.dim != b.dim:
        raise ValueError("bracket of fields on different tori")
    xs = _symbols(a.dim)
    comps = []
    for k in range(a.dim):
        expr = sp.Integer(0)
        for j in range(a.dim):
            expr += a.exprs[j] * sp.diff(b.exprs[k], xs[j])
            expr -= b.exprs[j] * sp.diff(a.exprs[k], xs[j])
        comps.append(sp.expand_trig(sp.expand(expr)))
    return VectorField(a.dim, comps)


@dataclass(frozen=True)
class VectorFieldFamily:
    """m horizontal fields X_1..X_m on T^d, with analytic derivatives."""

    name: str
    dim: int
    fields: tuple
    step: int | None = None  # known Hormander step, if documented

    @property
    def m(self) -> int:
        return len(self.fields)

    def sigma(self, points: np.ndarray) -> np.ndarray:
        """Coefficient matrix sigma[n, i, :] = X_i(x_n), shape (N, m, d)."""
        return np.stack([X(points) for X in self.fields], axis=-2)

    def jacobians(self, points: np.ndarray) -> np.ndarray:
        """Shape (N, m, d, d): Jacobian of each field at each point."""
        return np.stack([X.jacobian(points) for X in self.fields], axis=-3)

    def divergences(self, points: np.ndarray) -> np.ndarray:
        """Shape (N, m); all built-in families are divergence free."""
        return np.stack([X.divergence(points) for X in self.fields], axis=-1)


@dataclass(frozen=True)
class BracketEntry:
    """One bracket word; word (i1,..,ik) means [X_i1, [X_i2, [.., X_ik]..]]."""

    word: tuple
    depth: int
    field: VectorField


@dataclass
class HormanderReport:
    satisfied: bool
    step: int | None
    ranks: np.ndarray
    depth_needed: np.ndarray
    borderline: np.ndarray
    tree: list = field(default_factory=list)

    def __bool__(self):
        return self.satisfied


def bracket_tree(family: VectorFieldFamily, max_step: int) -> list[BracketEntry]:
    """Left-normed bracket words up to depth max_step, zero fields pruned.

    Left-normed words span the generated Lie algebra (Jacobi identity), so
    rank checks over this tree are sufficient.
    """
    entries = [
        BracketEntry((i,), 1, X) for i, X in enumerate(family.fields)
    ]
    frontier = entries[:]
    for depth in range(2, max_step + 1):
        new = []
        for entry in frontier:
            for i, X in enumerate(family.fields):
                br = lie_bracket(X, entry.field)
                if br.is_zero():
                    continue
                new.append(BracketEntry((i,) + entry.word, depth, br))
        entries.extend(new)
        frontier = new
        if not frontier:
            break
    return entries


def verify_hormander(
    family: VectorFieldFamily,
    samples: np.ndarray,
    max_step: int = 4,
    rtol: float = 1e-10,
) -> HormanderReport:
    """Check the bracket-generating (rank) condition at sample points.

    Rank is read off singular values with a relative cutoff rtol; singular
    values within a factor 10 of the cutoff are flagged borderline rather than
    silently counted.
    """
    pts = np.atleast_2d(np.asarray(samples, dtype=float))
    npts, dim = pts.shape
    if dim != family.dim:
        raise ValueError("sample dimension does not match family")
    tree = bracket_tree(family, max_step)
    values = np.stack([e.field(pts) for e in tree], axis=1)  # (N, K, d)
    depths = np.array([e.depth for e in tree])

    ranks = np.zeros(npts, dtype=int)
    depth_needed = np.zeros(npts, dtype=int)
    borderline = np.zeros(npts, dtype=bool)
    for depth in range(1, max_step + 1):
        sel = depths <= depth
        if not sel.any():
            continue
        sub = values[:, sel, :]
        svals = np.linalg.svd(sub, compute_uv=False)  # (N, min(K, d))
        smax = svals[:, :1]
        cutoff = np.maximum(rtol * smax, np.finfo(float).tiny)
        rk = (svals > cutoff).sum(axis=1)
        if depth == max_step:
            ranks = rk
            borderline = ((svals > cutoff) & (svals < 10.0 * cutoff)).any(axis=1)
        newly = (rk >= dim) & (depth_needed == 0)
        depth_needed[newly] = depth
    satisfied = bool((depth_needed > 0).all())
    achieved = int(depth_needed.max()) if satisfied else None
    return HormanderReport(
        satisfied=satisfied,
        step=achieved,
        ranks=ranks,
        depth_needed=depth_needed,
        borderline=borderline,
        tree=tree,
    )


# ---------------------------------------------------------------------------
# built-in families; all are divergence free and 1-periodic by construction

def euclidean(dim: int = 1) -> VectorFieldFamily:
    """Full coordinate frame, step 1."""
    fields = []
    for i in range(dim):
        comps = [sp.Integer(1) if j == i else sp.Integer(0) for j in range(dim)]
        fields.append(VectorField(dim, comps))
    return VectorFieldFamily("euclidean", dim, tuple(fields), step=1)


def grushin() -> VectorFieldFamily:
    """{d/dx, sin(2 pi x) d/dy} on T^2; degenerates on {sin(2 pi x) = 0}, step 2."""
    x0, _ = _symbols(2)
    X1 = VectorField(2, [1, 0])
    X2 = VectorField(2, [0, sp.sin(2 * sp.pi * x0)])
    return VectorFieldFamily("grushin", 2, (X1, X2), step=2)


def heisenberg_periodic() -> VectorFieldFamily:
    """Periodized Heisenberg-type frame on T^3, step at most 4.

    The usual polynomial coefficients are replaced by sin(2 pi .) to make the
    fields 1-periodic; the bracket-generating depth rises to 4 at the isolated
    points where both sines and the depth-2 bracket vanish simultaneously.
    """
    x0, x1, _ = _symbols(3)
    X1 = VectorField(3, [1, 0, -sp.sin(2 * sp.pi * x1)])
    X2 = VectorField(3, [0, 1, sp.sin(2 * sp.pi * x0)])
    return VectorFieldFamily("heisenberg_periodic", 3, (X1, X2), step=4)


_BUILTINS = {
    "euclidean": euclidean,
    "grushin": grushin,
    "heisenberg_periodic": heisenberg_periodic,
}


def family_by_name(name: str, dim: int | None = None) -> VectorFieldFamily:
    if name not in _BUILTINS:
        raise ValueError(f"unknown family {name!r}; known: {sorted(_BUILTINS)}")
    if name == "euclidean":
        return euclidean(dim if dim is not None else 1)
    fam = _BUILTINS[name]()
    if dim is not None and dim != fam.dim:
        raise ValueError(f"family {name} lives on T^{fam.dim}, got dim={dim}")
    return fam
