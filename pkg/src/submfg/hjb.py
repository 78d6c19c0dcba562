"""Control models, Hamiltonians, and solvers for the discounted value equation.

The running-cost structure is H(x, q) = max_a (-b(x,a).q - L_run(x,a)),
maximized either in closed form (quadratic, ball) or over a finite control
sample.  `solve_discounted_hjb` runs policy iteration: each linearisation
freezes a = abar(x, Dc u) and solves an M-matrix system, so the discrete
comparison principle survives into the nonlinear solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

from .torusgrid import (
    GridFunction,
    SolverError,
    TorusGrid,
    apply_drift,
    build_generator,
    drift_stencil,
    horizontal_gradient,
    mollify,
)
from .torusgrid import _monotone_drift
from .vfields import VectorFieldFamily

__all__ = [
    "ControlModel",
    "HJBSolution",
    "make_control_hamiltonian",
    "quadratic_model",
    "ball_model",
    "ball_sampled_model",
    "trivial_model",
    "model_by_name",
    "solve_linear_discounted",
    "solve_discounted_hjb",
]


@dataclass(frozen=True)
class ControlModel:
    """Drift b(x,a), running cost, and the induced Hamiltonian.

    `hamiltonian`, `optimal_control` take (points (N,d), q (N,m)); `drift_map`
    and `running_cost` take (points, a) with a of shape (N,m) or (m,).
    `growth` is "quadratic" (|H| <= C(|q|^2+1)) or "linear" (|H| <= C(|q|+1)).
    """

    name: str
    control_dim: int
    growth: str
    growth_constant: float
    hamiltonian: Callable[[np.ndarray, np.ndarray], np.ndarray]
    optimal_control: Callable[[np.ndarray, np.ndarray], np.ndarray]
    drift_map: Callable[[np.ndarray, np.ndarray], np.ndarray]
    running_cost: Callable[[np.ndarray, np.ndarray], np.ndarray]
    controls: Optional[np.ndarray] = None
    drift_at_optimum: Optional[Callable] = None
    cost_at_optimum_fn: Optional[Callable] = None
    meta: dict = field(default_factory=dict)

    def drift(self, points: np.ndarray, q: np.ndarray) -> np.ndarray:
        """g(x, q) = b(x, abar(x, q)), the optimally controlled drift."""
        if self.drift_at_optimum is not None:
            return self.drift_at_optimum(points, q)
        return self.drift_map(points, self.optimal_control(points, q))

    def cost_at_optimum(self, points: np.ndarray, q: np.ndarray) -> np.ndarray:
        if self.cost_at_optimum_fn is not None:
            return self.cost_at_optimum_fn(points, q)
        return self.running_cost(points, self.optimal_control(points, q))

    def check_growth(self, points: np.ndarray, q: np.ndarray) -> float:
        """Worst ratio |H|/(C(|q|^p+1)); should stay <= 1."""
        p = 2.0 if self.growth == "quadratic" else 1.0
        qn = np.linalg.norm(q, axis=-1)
        hv = np.abs(self.hamiltonian(points, q))
        c = max(self.growth_constant, 1e-300)
        return float(np.max(hv / (c * (qn**p + 1.0))))


def _broadcast_controls(points: np.ndarray, a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = np.broadcast_to(a, (points.shape[0], a.size))
    return a


def quadratic_model(m: int, potential=None, dim: Optional[int] = None) -> ControlModel:
    """b = a on R^m, L_run = |a|^2/2 + f(x): H = |q|^2/2 - f(x), abar = -q.

    `potential` is an optional callable f(points) -> (N,); without it the
    coupled systems have the uniform state as their (unique) solution, so
    benchmarks that need structure pass one in."""
    f = potential if potential is not None else (
        lambda x: np.zeros(np.shape(x)[0]))
    if potential is None:
        growth_c = 1.0
    else:
        probe = TorusGrid(dim or m, 16).points()
        growth_c = max(1.0, float(np.max(np.abs(np.asarray(f(probe))))))
    return ControlModel(
        name="quadratic",
        control_dim=m,
        growth="quadratic",
        growth_constant=growth_c,
        hamiltonian=lambda x, q: 0.5 * np.sum(q * q, axis=-1)
        - np.asarray(f(x), dtype=float),
        optimal_control=lambda x, q: -np.asarray(q, dtype=float),
        drift_map=lambda x, a: _broadcast_controls(x, a),
        running_cost=lambda x, a: 0.5 * np.sum(
            _broadcast_controls(x, a) ** 2, axis=-1)
        + np.asarray(f(x), dtype=float),
    )


def ball_model(m: int, radius: float = 1.0) -> ControlModel:
    """b = a on the closed ball |a| <= R, L_run = 0: H = R|q|."""
    if radius <= 0:
        raise ValueError("radius must be positive")

    def abar(x, q):
        q = np.asarray(q, dtype=float)
        nrm = np.linalg.norm(q, axis=-1, keepdims=True)
        return -radius * q / np.where(nrm > 1e-300, nrm, 1.0)

    return ControlModel(
        name="ball",
        control_dim=m,
        growth="linear",
        growth_constant=radius,
        hamiltonian=lambda x, q: radius * np.linalg.norm(q, axis=-1),
        optimal_control=abar,
        drift_map=lambda x, a: _broadcast_controls(x, a),
        running_cost=lambda x, a: np.zeros(np.shape(x)[0]),
    )


def make_control_hamiltonian(b, L_run, controls, name: str = "sampled",
                             dim: int = 1) -> ControlModel:
    """Finite-control model: H(x,q) = max over rows a of controls.

    Ties resolve to the smallest control index.  The growth tag is linear,
    with the constant estimated by sampling b and L_run on a coarse grid.
    """
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    if controls.size == 0:
        raise ValueError("empty control set")
    probe = TorusGrid(dim, 8).points()
    bmax, lmax = 0.0, 0.0
    for a in controls:
        bv = np.asarray(b(probe, a), dtype=float)
        lv = np.asarray(L_run(probe, a), dtype=float)
        if not (np.all(np.isfinite(bv)) and np.all(np.isfinite(lv))):
            raise ValueError("drift or running cost not finite on control set")
        bmax = max(bmax, float(np.max(np.linalg.norm(bv, axis=-1))))
        lmax = max(lmax, float(np.max(np.abs(lv))))

    def tables(x):
        # per-control drift (K,N,m) and cost (K,N) at the given points
        bv = np.stack([_broadcast_controls(x, np.asarray(b(x, a), dtype=float))
                       for a in controls])
        lv = np.stack([np.asarray(L_run(x, a), dtype=float)
                       * np.ones(x.shape[0]) for a in controls])
        return bv, lv

    def scores(x, q):
        bv, lv = tables(x)
        return -(np.einsum("knm,nm->kn", bv, q) + lv).T

    def hamiltonian(x, q):
        return np.max(scores(x, q), axis=1)

    def argmax_idx(x, q):
        # np.argmax returns the first (= smallest-index) maximizer
        return np.argmax(scores(x, q), axis=1)

    def drift_opt(x, q):
        bv, _ = tables(x)
        return bv[argmax_idx(x, q), np.arange(x.shape[0])]

    def cost_opt(x, q):
        _, lv = tables(x)
        return lv[argmax_idx(x, q), np.arange(x.shape[0])]

    def drift_map(x, a):
        if np.ndim(a) == 1:
            return _broadcast_controls(x, np.asarray(b(x, a), dtype=float))
        return np.stack([np.asarray(b(x[i:i + 1], ai), dtype=float).reshape(-1)
                         for i, ai in enumerate(a)])

    def running_cost(x, a):
        if np.ndim(a) == 1:
            return np.asarray(L_run(x, a), dtype=float) * np.ones(x.shape[0])
        return np.array([float(np.asarray(L_run(x[i:i + 1], ai)).reshape(-1)[0])
                         for i, ai in enumerate(a)])

    return ControlModel(
        name=name,
        control_dim=controls.shape[1],
        growth="linear",
        growth_constant=max(bmax, lmax, 1e-12),
        hamiltonian=hamiltonian,
        optimal_control=lambda x, q: controls[argmax_idx(x, q)],
        drift_map=drift_map,
        running_cost=running_cost,
        controls=controls,
        drift_at_optimum=drift_opt,
        cost_at_optimum_fn=cost_opt,
    )


def ball_sampled_model(m: int, radius: float = 1.0, per_axis: int = 9,
                       potential=None, dim: int = 1) -> ControlModel:
    """Finite sample of the ball model: lexicographic product grid on
    [-R, R]^m clipped to the ball, so argmax ties are deterministic.
    Optional `potential` f(points) -> (N,) enters the running cost."""
    axes = [np.linspace(-radius, radius, per_axis)] * m
    prod = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)
    prod = prod[np.linalg.norm(prod, axis=1) <= radius + 1e-12]
    f = potential if potential is not None else (
        lambda x: np.zeros(np.shape(x)[0]))
    model = make_control_hamiltonian(
        b=lambda x, a: np.broadcast_to(a, (x.shape[0], m)),
        L_run=lambda x, a: np.asarray(f(x), dtype=float),
        controls=prod, name="ball_sampled", dim=dim)
    return model


def ball_soft_model(m: int, radius: float = 1.0, kappa: float = 0.2,
                    potential=None, dim: Optional[int] = None) -> ControlModel:
    """Smoothed ball: H = R(sqrt(|q|^2 + k^2) - k) - f(x), controls in the
    open ball |a| < R with cost kR(1 - sqrt(1 - |a|^2/R^2)) + f(x).

    Linear growth (|H| <= R|q| + sup|f|), smooth in q, strictly convex,
    so fixed-point iterations do not chatter the way the hard ball does."""
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    R = float(radius)
    f = potential if potential is not None else (
        lambda x: np.zeros(np.shape(x)[0]))
    if potential is None:
        growth_c = R
    else:
        probe = TorusGrid(dim or m, 16).points()
        growth_c = max(R, float(np.max(np.abs(np.asarray(f(probe))))))

    def _ham(x, q):
        nq = np.sqrt(np.sum(q * q, axis=-1) + kappa * kappa)
        return R * (nq - kappa) - np.asarray(f(x), dtype=float)

    def _abar(x, q):
        q = np.asarray(q, dtype=float)
        nq = np.sqrt(np.sum(q * q, axis=-1, keepdims=True) + kappa * kappa)
        return -R * q / nq

    def _cost(x, a):
        a = _broadcast_controls(x, a)
        s = np.clip(1.0 - np.sum(a * a, axis=-1) / (R * R), 0.0, None)
        return kappa * R * (1.0 - np.sqrt(s)) + np.asarray(f(x), dtype=float)

    return ControlModel(
        name="ball_soft",
        control_dim=m,
        growth="linear",
        growth_constant=growth_c,
        hamiltonian=_ham,
        optimal_control=_abar,
        drift_map=lambda x, a: _broadcast_controls(x, a),
        running_cost=_cost,
        meta={"radius": R, "kappa": float(kappa)},
    )


def trivial_model(m: int) -> ControlModel:
    """Single null control: H = 0, g = 0."""
    return ControlModel(
        name="trivial",
        control_dim=m,
        growth="linear",
        growth_constant=1e-12,
        hamiltonian=lambda x, q: np.zeros(np.shape(x)[0]),
        optimal_control=lambda x, q: np.zeros((np.shape(x)[0], m)),
        drift_map=lambda x, a: _broadcast_controls(x, a),
        running_cost=lambda x, a: np.zeros(np.shape(x)[0]),
        controls=np.zeros((1, m)),
    )


def model_by_name(name: str, m: int, radius: float = 1.0) -> ControlModel:
    if name == "quadratic":
        return quadratic_model(m)
    if name == "ball":
        return ball_model(m, radius)
    if name == "ball_sampled":
        return ball_sampled_model(m, radius)
    if name == "ball_soft":
        return ball_soft_model(m, radius)
    if name == "trivial":
        return trivial_model(m)
    raise ValueError(f"unknown control model '{name}'")


@dataclass(frozen=True)
class HJBSolution:
    u: GridFunction
    residual: float
    iterations: int
    meta: dict = field(default_factory=dict)


def _shifted_solve(grid, family, rho, rhs_values, scheme, eps, g=None):
    op = build_generator(grid, family, g=g, scheme=scheme, eps=eps)
    mat = (rho * sparse.identity(grid.num_nodes, format="csr") - op.matrix).tocsc()
    u = spla.spsolve(mat, rhs_values)
    res = float(np.max(np.abs(mat @ u - rhs_values)))
    return u, res, op


def solve_linear_discounted(family: VectorFieldFamily, grid: TorusGrid,
                            rho: float, f: GridFunction,
                            eps: float = 0.0, zeta: float = 0.0,
                            scheme: str = "monotone") -> HJBSolution:
    """Solve rho u - (1/2) sum X_i^2 u - eps Lap u = f_zeta.

    With eps > 0 the solve is repeated along a decreasing viscosity sequence
    down from eps, and with zeta > 0 along the mollification sequence
    zeta_n = 0.1 * 2^-n; the meta carries the gaps against the eps = zeta = 0
    solution and the Cauchy increments of the mollified family.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    base, base_res, op = _shifted_solve(grid, family, rho, f.values, scheme, 0.0)
    u, res = base, base_res
    meta = {"scheme": scheme, "eps": eps, "zeta": zeta,
            "generator": op.meta, "eps_path": [], "zeta_path": []}

    if eps > 0.0:
        prev = None
        for ek in [eps / 10.0**j for j in range(4)]:
            ue, re_ = _shifted_solve(grid, family, rho, f.values, scheme, ek)[:2]
            gap = float(np.max(np.abs(ue - base)))
            meta["eps_path"].append({"eps": ek, "gap_to_base": gap})
            if prev is None:
                u, res = ue, re_  # requested viscosity level
            prev = ue
        meta["gap_eps"] = meta["eps_path"][0]["gap_to_base"]

    if zeta > 0.0:
        seq = []
        zn = 0.1
        while zn > zeta:
            seq.append(zn)
            zn *= 0.5
        seq.append(zeta)
        prev_u = None
        for zk in seq:
            fz = mollify(f, zk)
            uz, rz = _shifted_solve(grid, family, rho, fz.values, scheme, eps)[:2]
            inc = None if prev_u is None else float(np.max(np.abs(uz - prev_u)))
            meta["zeta_path"].append({"zeta": zk, "cauchy_increment": inc})
            prev_u = uz
        u, res = prev_u, rz
        meta["gap_zeta"] = float(np.max(np.abs(prev_u - base)))

    return HJBSolution(u=GridFunction(grid, u), residual=res, iterations=1,
                       meta=meta)


def _howard_finite(model, family, grid, rho, rhs, tol, max_iter, eps, u0):
    """Exact Howard iteration over a finite control set.

    Policy improvement maximizes the *discretized* objective, i.e. the rows
    of (rho I - A_a) u - rhs - L_a with the same hybrid drift stencils the
    evaluation matrix uses.  That keeps every improvement step monotone, so
    the iteration terminates at a policy fixed point (finite policy space).
    """
    points = grid.points()
    nn = grid.num_nodes
    controls = model.controls
    kk = controls.shape[0]
    diff_op = build_generator(grid, family, g=None, scheme="monotone", eps=eps)
    diff = diff_op.matrix
    stencil = drift_stencil(grid, diff)
    sig = family.sigma(points)
    gk = np.stack([model.drift_map(points, a) for a in controls])
    lk = np.stack([model.running_cost(points, a) for a in controls])
    wk = np.einsum("nmd,knm->knd", sig, gk)

    u = np.zeros(nn) if u0 is None else np.asarray(u0.values, dtype=float).copy()
    ident = rho * sparse.identity(nn, format="csr")
    arange = np.arange(nn)
    policy = None
    history = []
    best_res, best_u = np.inf, u.copy()
    for it in range(max_iter + 1):
        # improvement: per node, control maximizing the discrete row value
        # E_i(a) = [(rho I - A_a) u - rhs - L_a]_i; the equation is max_a E = 0
        base = rho * u - diff @ u - rhs.values
        scores = np.stack([base - apply_drift(grid, stencil, wk[k], u) - lk[k]
                           for k in range(kk)])
        new_policy = np.argmax(scores, axis=0)
        res = float(np.max(np.abs(np.max(scores, axis=0))))
        changed = nn if policy is None else int(np.sum(new_policy != policy))
        history.append({"iteration": it, "residual": res,
                        "policy_changes": changed})
        if res < best_res:
            best_res, best_u = res, u.copy()
        if res < tol or (policy is not None and changed == 0):
            return HJBSolution(
                u=GridFunction(grid, u), residual=res, iterations=it,
                meta={"scheme": "monotone", "eps": eps, "history": history,
                      "generator": diff_op.meta, "model": model.name,
                      "method": "howard"})
        if it == max_iter:
            break
        policy = new_policy
        gpol = gk[policy, arange]
        drift_mat, _ = _monotone_drift(grid, diff, np.einsum(
            "nmd,nm->nd", sig, gpol))
        mat = (ident - diff - drift_mat).tocsc()
        u = spla.spsolve(mat, rhs.values + lk[policy, arange])
    raise SolverError(
        f"Howard iteration stalled at residual {best_res:.3e} "
        f"after {max_iter} iterations (tol {tol:.1e})",
        best=HJBSolution(u=GridFunction(grid, best_u), residual=best_res,
                         iterations=max_iter,
                         meta={"history": history, "model": model.name}))


def solve_discounted_hjb(model: ControlModel, family: VectorFieldFamily,
                         grid: TorusGrid, rho: float, rhs: GridFunction,
                         tol: float = 1e-9, max_iter: int = 80,
                         scheme: str = "monotone", eps: float = 0.0,
                         u0: Optional[GridFunction] = None) -> HJBSolution:
    """Policy iteration for rho u - (1/2) sum X_i^2 u + H(x, D_X u) = rhs.

    Finite control sets go through exact Howard iteration on the monotone
    scheme.  Closed-form models freeze a = abar(x, Dc u) with Dc the
    centered horizontal gradient and solve the monotone linear system with
    drift g = b(x, a); the residual is the frozen-policy equation at the
    current iterate.  Raises SolverError with the best iterate on stagnation.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    if family.m != model.control_dim:
        raise ValueError("control dimension does not match the field family")
    if model.controls is not None and scheme == "monotone":
        return _howard_finite(model, family, grid, rho, rhs, tol, max_iter,
                              eps, u0)
    points = grid.points()
    nn = grid.num_nodes
    u = np.zeros(nn) if u0 is None else np.asarray(u0.values, dtype=float).copy()
    ident = rho * sparse.identity(nn, format="csr")
    history = []
    best_res, best_u = np.inf, u.copy()
    prev_g = None
    omega = 1.0
    for it in range(max_iter + 1):
        dcu = horizontal_gradient(grid, family, GridFunction(grid, u))
        g = model.drift(points, dcu)
        lrun = model.cost_at_optimum(points, dcu)
        op = build_generator(grid, family, g=g, scheme=scheme, eps=eps)
        mat = (ident - op.matrix).tocsc()
        target = rhs.values + lrun
        res = float(np.max(np.abs(mat @ u - target)))
        changed = nn if prev_g is None else int(
            np.sum(np.max(np.abs(g - prev_g), axis=1) > 1e-12))
        history.append({"iteration": it, "residual": res,
                        "policy_changes": changed})
        if res < best_res:
            best_res, best_u = res, u.copy()
        if res < tol:
            return HJBSolution(
                u=GridFunction(grid, u), residual=res, iterations=it,
                meta={"scheme": scheme, "eps": eps, "history": history,
                      "generator": op.meta, "model": model.name})
        if it == max_iter:
            break
        u_lin = spla.spsolve(mat, target)
        if len(history) >= 2 and history[-1]["residual"] > history[-2]["residual"]:
            omega = max(0.125, 0.5 * omega)
        else:
            omega = 1.0
        u = (1.0 - omega) * u + omega * u_lin
        prev_g = g
    raise SolverError(
        f"policy iteration stalled at residual {best_res:.3e} "
        f"after {max_iter} iterations (tol {tol:.1e})",
        best=HJBSolution(u=GridFunction(grid, best_u), residual=best_res,
                         iterations=max_iter,
                         meta={"history": history, "model": model.name}))
