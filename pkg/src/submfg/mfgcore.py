"""Coupled mean field system: couplings, fixed points, and the vanishing
discount continuation.

Both equations live on one discrete generator A(g): the value equation
solves with (rho I - A), the density equation with A^T, so the reported
residuals are statements about the same matrix and its transpose.  The
ergodic solve follows the discount continuation rho_n -> 0; an augmented
Newton solve on the same discrete operators is available as an independent
cross-check, not as the default path.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.optimize

from .fpstat import StationaryMeasure, stationary_measure
from .hjb import ControlModel, solve_discounted_hjb
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
from .vfields import VectorFieldFamily

__all__ = [
    "Nonlinearity",
    "Coupling",
    "make_coupling",
    "MFGSolution",
    "solve_discounted_mfg",
    "solve_ergodic_mfg",
    "augmented_newton_oracle",
    "check_uniqueness_conditions",
    "system_residual",
]


@dataclass(frozen=True)
class Nonlinearity:
    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    sup: float
    monotone: bool


_NONLINEARITIES = {
    "identity": Nonlinearity("identity", lambda s: s, 1.0, np.inf, True),
    "arctan": Nonlinearity("arctan", np.arctan, 1.0, 0.5 * np.pi, True),
}


@dataclass
class Coupling:
    """Map from probability densities to bounded grid functions.

    kinds: "smoothed_local" V[m] = phi_s * G(phi_s * m) (regularising),
    "linear_convolution" V[m] = phi_s * m, "constant" V[m] = c, and
    "frozen" (a fixed grid function, used for best-response solves)."""

    kind: str
    sigma: float = 0.1
    nonlinearity: Nonlinearity = _NONLINEARITIES["identity"]
    constant: float = 0.0
    frozen_values: Optional[np.ndarray] = None
    cache: dict = field(default_factory=dict)

    def __call__(self, m) -> GridFunction:
        if isinstance(m, StationaryMeasure):
            m = m.m
        grid = m.grid
        if self.kind == "constant":
            return GridFunction.constant(grid, self.constant)
        if self.kind == "frozen":
            return GridFunction(grid, self.frozen_values)
        inner = mollify(m, self.sigma)
        if self.kind == "linear_convolution":
            return inner
        if self.kind == "smoothed_local":
            g_of = GridFunction(grid, self.nonlinearity.fn(inner.values))
            return mollify(g_of, self.sigma)
        raise ValueError(f"unknown coupling kind '{self.kind}'")

    def _kernel_max(self, grid: TorusGrid) -> float:
        key = (grid.dim, grid.n)
        if key not in self.cache:
            from .torusgrid import mollifier_kernel
            self.cache[key] = float(np.max(mollifier_kernel(grid, self.sigma)))
        return self.cache[key]

    def bound(self, grid: TorusGrid) -> float:
        """sup over probability densities of ||V[m]||_inf on this grid."""
        if self.kind == "constant":
            return abs(self.constant)
        if self.kind == "frozen":
            return float(np.max(np.abs(self.frozen_values)))
        # a unit-mass density convolved with the kernel is at most
        # max(kernel)/h^d pointwise
        peak = self._kernel_max(grid) / grid.h**grid.dim
        if self.kind == "linear_convolution":
            return peak
        g = self.nonlinearity
        # G monotone: the composed range is [G(0), G(peak)]
        inner_bound = max(abs(float(g.fn(np.array([0.0]))[0])),
                          abs(float(g.fn(np.array([peak]))[0])))
        return min(g.sup, inner_bound)

    def continuity_constant(self, grid: TorusGrid) -> float:
        """Constant c with ||V[m1]-V[m2]||_inf <= c ||m1-m2||_{L1_h}."""
        if self.kind in ("constant", "frozen"):
            return 0.0
        c = self._kernel_max(grid) / grid.h**grid.dim
        if self.kind == "smoothed_local":
            c *= self.nonlinearity.lipschitz
        return c


def make_coupling(kind: str, sigma: float = 0.1, nonlinearity: str = "identity",
                  constant: float = 0.0, frozen=None,
                  require_monotone: bool = False) -> Coupling:
    if kind in ("smoothed_local", "linear_convolution") and not (
            0.0 < sigma < 0.5):
        raise ValueError("sigma must lie in (0, 1/2) for smoothed couplings")
    g = _NONLINEARITIES.get(nonlinearity)
    if g is None:
        raise ValueError(f"unknown nonlinearity '{nonlinearity}'")
    if require_monotone and not g.monotone:
        raise ValueError(f"nonlinearity '{nonlinearity}' is not monotone")
    frozen_values = None
    if kind == "frozen":
        if frozen is None:
            raise ValueError("frozen coupling needs values")
        frozen_values = np.asarray(
            frozen.values if isinstance(frozen, GridFunction) else frozen,
            dtype=float)
    return Coupling(kind=kind, sigma=sigma, nonlinearity=g, constant=constant,
                    frozen_values=frozen_values)


class Discretization:
    """One model + family + grid, with the pieces of the discrete operator
    shared between the solvers and the residual evaluations."""

    def __init__(self, model: ControlModel, family: VectorFieldFamily,
                 grid: TorusGrid, eps: float = 0.0):
        self.model = model
        self.family = family
        self.grid = grid
        self.eps = eps
        self.points = grid.points()
        self.sigma = family.sigma(self.points)
        self.diff_op = build_generator(grid, family, g=None, scheme="monotone",
                                       eps=eps)
        self.diff = self.diff_op.matrix
        self.stencil = drift_stencil(grid, self.diff)
        self.finite = model.controls is not None
        if self.finite:
            self.gk = np.stack([model.drift_map(self.points, a)
                                for a in model.controls])
            self.lk = np.stack([model.running_cost(self.points, a)
                                for a in model.controls])
            self.wk = np.einsum("nmd,knm->knd", self.sigma, self.gk)

    def drift_of(self, u_values: np.ndarray) -> np.ndarray:
        """g(x, D_X u) per node, with the convention the solver itself uses."""
        if self.finite:
            scores = self._scores(u_values)
            return self.gk[np.argmax(scores, axis=0),
                           np.arange(self.grid.num_nodes)]
        dcu = horizontal_gradient(self.grid, self.family,
                                  GridFunction(self.grid, u_values))
        return self.model.drift(self.points, dcu)

    def _scores(self, u_values: np.ndarray) -> np.ndarray:
        du = self.diff @ u_values
        return np.stack([
            -du - apply_drift(self.grid, self.stencil, self.wk[k], u_values)
            - self.lk[k] for k in range(self.wk.shape[0])])

    def hjb_residual(self, u_values: np.ndarray, rhs_values: np.ndarray,
                     rho: float = 0.0, lam: float = 0.0) -> float:
        """Sup-norm residual of rho u - (1/2)Sum X^2 u + H_h(x, Du) + lam = rhs,
        with H_h realized exactly as the solver realizes it."""
        if self.finite:
            bell = np.max(self._scores(u_values), axis=0)
            res = rho * u_values + bell + lam - rhs_values
            return float(np.max(np.abs(res)))
        dcu = horizontal_gradient(self.grid, self.family,
                                  GridFunction(self.grid, u_values))
        g = self.model.drift(self.points, dcu)
        lrun = self.model.cost_at_optimum(self.points, dcu)
        w = np.einsum("nmd,nm->nd", self.sigma, g)
        act = apply_drift(self.grid, self.stencil, w, u_values)
        res = (rho * u_values - self.diff @ u_values - act - lrun
               + lam - rhs_values)
        return float(np.max(np.abs(res)))

    def fp_residual(self, m_values: np.ndarray, g: np.ndarray) -> float:
        op = build_generator(self.grid, self.family, g=g, scheme="monotone",
                             eps=self.eps)
        return float(np.max(np.abs(op.matrix.T @ m_values)))


@dataclass(frozen=True)
class MFGSolution:
    u: GridFunction
    m: StationaryMeasure
    lam: Optional[float]
    residuals: dict
    rho_path: list
    iterations: int
    meta: dict = field(default_factory=dict)


def solve_discounted_mfg(model: ControlModel, coupling: Coupling,
                         family: VectorFieldFamily, grid: TorusGrid,
                         rho: float, damping: float = 0.5,
                         tol: float = 1e-8, max_iter: int = 200,
                         hjb_tol: float = 1e-9, eps: float = 0.0,
                         polish: int = 8,
                         v0: Optional[GridFunction] = None,
                         m0: Optional[StationaryMeasure] = None) -> MFGSolution:
    """Damped Picard iteration for the discounted system.

    Given v^k: freeze the drift g(x, D_X v^k), solve the stationary density,
    evaluate the coupling, solve the value equation, and relax with factor
    `damping` (halved automatically while the step size grows).  Stops when
    ||u^{k+1} - v^k||_inf + ||m^k - m^{k-1}||_1 < tol, then runs up to
    `polish` undamped sweeps so the reported (u, m) pair is self-consistent:
    the FP residual is sensitive to O(step/h^2) drift mismatch, which plain
    damped iterates do not control.
    """
    if not (0.0 < damping <= 1.0):
        raise ValueError("damping must lie in (0, 1]")
    if rho <= 0:
        raise ValueError("rho must be positive")
    disc = Discretization(model, family, grid, eps=eps)
    v = (GridFunction.constant(grid, 0.0) if v0 is None
         else GridFunction(grid, v0.values.copy()))
    m_prev = m0.m.values if m0 is not None else None
    theta = damping
    history = []
    last_step = np.inf
    u_sol = None
    measure = None
    for it in range(1, max_iter + 1):
        g = disc.drift_of(v.values)
        measure = stationary_measure(family, grid, g, eps=eps)
        rhs = coupling(measure.m)
        sol = solve_discounted_hjb(model, family, grid, rho, rhs,
                                   tol=hjb_tol, eps=eps, u0=v)
        step_u = float(np.max(np.abs(sol.u.values - v.values)))
        step_m = (float(np.mean(np.abs(measure.m.values - m_prev)))
                  if m_prev is not None else None)
        step = step_u + (step_m or 0.0)
        history.append({"iteration": it, "step_u": step_u, "step_m": step_m,
                        "theta": theta, "hjb_iterations": sol.iterations})
        if step > last_step and theta > 0.0625:
            theta = 0.5 * theta
        last_step = step
        m_prev = measure.m.values
        if step < tol:
            u_sol = sol.u
            v = sol.u
            break
        v = GridFunction(grid, (1.0 - theta) * v.values
                         + theta * sol.u.values)
    else:
        raise SolverError(
            f"discounted MFG fixed point did not reach {tol:.1e} in "
            f"{max_iter} iterations (last step {last_step:.2e})",
            best=MFGSolution(u=v, m=measure, lam=None, residuals={},
                             rho_path=[], iterations=max_iter,
                             meta={"history": history}))

    # consistency sweeps: m from u's own drift, u re-solved against V[m]
    best = None
    u_cur = u_sol
    for p in range(max(1, polish)):
        g = disc.drift_of(u_cur.values)
        measure_p = stationary_measure(family, grid, g, eps=eps)
        rhs = coupling(measure_p.m)
        sol = solve_discounted_hjb(model, family, grid, rho, rhs,
                                   tol=hjb_tol, eps=eps, u0=u_cur)
        res_hjb = disc.hjb_residual(sol.u.values, rhs.values, rho=rho)
        res_fp = disc.fp_residual(measure_p.m.values,
                                  disc.drift_of(sol.u.values))
        worst = max(res_hjb, res_fp)
        if best is None or worst < best[0]:
            best = (worst, sol.u, measure_p, res_hjb, res_fp)
        drift_move = float(np.max(np.abs(sol.u.values - u_cur.values)))
        u_cur = sol.u
        history.append({"iteration": f"polish-{p}", "step_u": drift_move,
                        "res_hjb": res_hjb, "res_fp": res_fp})
        if worst < 10.0 * hjb_tol or drift_move > 10.0 * max(tol, last_step):
            break
    _, u_sol, measure, res_hjb, res_fp = best
    residuals = {
        "hjb": res_hjb,
        "fp": res_fp,
        "mass_error": abs(float(measure.m.values.mean()) - 1.0),
    }
    return MFGSolution(u=u_sol, m=measure, lam=None, residuals=residuals,
                       rho_path=[], iterations=it,
                       meta={"history": history, "rho": rho,
                             "coupling_kind": coupling.kind})


def default_rho_schedule(steps: int = 13) -> list:
    return [0.5 * 2.0**(-n) for n in range(steps)]


def solve_ergodic_mfg(model: ControlModel, coupling: Coupling,
                      family: VectorFieldFamily, grid: TorusGrid,
                      rho_schedule: Optional[list] = None,
                      tol_ergodic: float = 1e-6, tol_inner: float = 1e-8,
                      max_schedule: int = 24, damping: float = 0.5,
                      eps: float = 0.0,
                      v0: Optional[GridFunction] = None) -> MFGSolution:
    """Vanishing-discount continuation to the ergodic triple (lam, w, m).

    Each rho_n reuses the previous solution as warm start; w_n is the
    mean-free part of u_n and lam_n = rho_n <u_n>.  The schedule extends
    beyond the provided list (halving rho, up to `max_schedule` entries)
    until the ergodic residual drops below `tol_ergodic`.  Also checks the
    discounted sup bound |lam_n| <= sup|H(.,0) - V[m_n]| at every step; a
    linear-growth model keeps ||w|| bounded, a quadratic-growth one is
    accepted with a warning and may diverge (reported, not hidden).
    """
    if model.growth == "quadratic":
        warnings.warn("ergodic continuation with a quadratic-growth model: "
                      "the uniform-in-rho bound is not guaranteed",
                      stacklevel=2)
    schedule = list(rho_schedule) if rho_schedule is not None \
        else default_rho_schedule()
    if any(r <= 0 for r in schedule) or any(
            b <= a for a, b in zip(schedule[1:], schedule[:-1])):
        raise ValueError("rho schedule must be positive and decreasing")
    disc = Discretization(model, family, grid, eps=eps)
    h0 = model.hamiltonian(disc.points,
                           np.zeros((grid.num_nodes, family.m)))
    v = v0
    rho_path = []
    result = None
    w_sups = []
    k = 0
    while k < max_schedule:
        rho = schedule[k] if k < len(schedule) else rho_path[-1]["rho"] * 0.5
        inner_tol = tol_inner * max(1.0, 1e-3 / rho)
        sol = solve_discounted_mfg(
            model, coupling, family, grid, rho, damping=damping,
            tol=inner_tol, eps=eps, v0=v,
            hjb_tol=min(1e-9 * max(1.0, 1e-3 / rho), 1e-6))
        u = sol.u
        mean_u = u.mean()
        lam = rho * mean_u
        w = GridFunction(grid, u.values - mean_u)
        rhs = coupling(sol.m.m)
        res_erg = disc.hjb_residual(w.values, rhs.values, rho=0.0, lam=lam)
        bound_rhs = float(np.max(np.abs(h0 - rhs.values)))
        w_sup = w.norm_sup()
        w_sups.append(w_sup)
        rho_path.append({
            "rho": rho, "lam": lam, "w_sup": w_sup,
            "inner_iterations": sol.iterations,
            "ergodic_residual": res_erg,
            "bound_rhs": bound_rhs,
            "bound_ok": bool(abs(lam) <= bound_rhs + 1e-8),
            "w": w.values.copy(),
        })
        v = u
        result = (lam, w, sol.m, rhs)
        k += 1
        if res_erg < tol_ergodic and k >= min(3, max_schedule):
            break
        if len(w_sups) >= 6 and model.growth == "quadratic" and all(
                b > 2.0 * a for a, b in zip(w_sups[-6:-1], w_sups[-5:])):
            raise SolverError(
                "||w_rho|| grows without bound along the continuation "
                "(quadratic-growth model outside the linear-growth theory)",
                best=None, meta={"rho_path": rho_path})
    lam, w, measure, rhs = result
    if rho_path[-1]["ergodic_residual"] >= tol_ergodic:
        raise SolverError(
            f"continuation exhausted {max_schedule} steps with ergodic "
            f"residual {rho_path[-1]['ergodic_residual']:.2e} "
            f"(tol {tol_ergodic:.1e})", meta={"rho_path": rho_path})
    g = disc.drift_of(w.values)
    residuals = {
        "hjb": rho_path[-1]["ergodic_residual"],
        "fp": disc.fp_residual(measure.m.values, g),
        "mass_error": abs(float(measure.m.values.mean()) - 1.0),
        "mean_u": abs(w.mean()),
    }
    cauchy = abs(rho_path[-1]["lam"] - rho_path[-2]["lam"]) \
        if len(rho_path) >= 2 else np.inf
    return MFGSolution(u=w, m=measure, lam=lam, residuals=residuals,
                       rho_path=rho_path, iterations=len(rho_path),
                       meta={"lam_cauchy_gap": cauchy,
                             "coupling_kind": coupling.kind,
                             "w_sup_max": max(w_sups)})


def augmented_newton_oracle(model: ControlModel, coupling: Coupling,
                            family: VectorFieldFamily, grid: TorusGrid,
                            eps: float = 0.0, tol: float = 1e-11) -> dict:
    """Direct root solve of the coupled ergodic system on the same discrete
    operators: unknowns (w, m, lam), equations (value line, density line with
    one row traded for mass 1, <w> = 0).  Independent of the continuation in
    method, not in discretisation; intended as a cross-check on small grids.
    """
    disc = Discretization(model, family, grid, eps=eps)
    nn = grid.num_nodes

    def residual_vec(zvec):
        w = zvec[:nn]
        m = zvec[nn:2 * nn]
        lam = zvec[-1]
        g = disc.drift_of(w)
        rhs = coupling(GridFunction(grid, m))
        if disc.finite:
            bell = np.max(disc._scores(w), axis=0)
        else:
            dcu = horizontal_gradient(grid, family, GridFunction(grid, w))
            gq = model.drift(disc.points, dcu)
            lrun = model.cost_at_optimum(disc.points, dcu)
            wvec = np.einsum("nmd,nm->nd", disc.sigma, gq)
            bell = (-disc.diff @ w
                    - apply_drift(grid, disc.stencil, wvec, w) - lrun)
        f1 = bell + lam - rhs.values
        op = build_generator(grid, family, g=g, scheme="monotone", eps=eps)
        f2 = op.matrix.T @ m
        f2[0] = m.mean() - 1.0
        return np.concatenate([f1, f2, [w.mean()]])

    z0 = np.concatenate([np.zeros(nn), np.ones(nn), [0.0]])
    out = scipy.optimize.root(residual_vec, z0, method="hybr",
                              options={"xtol": 1e-13, "maxfev": 400 * (2 * nn + 1)})
    res = float(np.max(np.abs(residual_vec(out.x))))
    if not out.success and res > tol:
        raise SolverError(f"augmented Newton did not converge: {out.message} "
                          f"(residual {res:.2e})")
    w = out.x[:nn]
    m = out.x[nn:2 * nn]
    return {
        "lam": float(out.x[-1]),
        "w": GridFunction(grid, w - w.mean()),
        "m": GridFunction(grid, m),
        "residual": res,
        "nfev": int(out.nfev),
    }


def _random_density(grid: TorusGrid, rng) -> GridFunction:
    # positive, mean one: exponential of a low-frequency trig polynomial
    pts = grid.points()
    vals = np.zeros(grid.num_nodes)
    for axis in range(grid.dim):
        for k in (1, 2):
            a, b = rng.normal(size=2)
            vals += 0.5 * (a * np.cos(2 * np.pi * k * pts[:, axis])
                           + b * np.sin(2 * np.pi * k * pts[:, axis]))
    dens = np.exp(vals)
    return GridFunction(grid, dens / dens.mean())


def check_uniqueness_conditions(coupling: Coupling, model: ControlModel,
                                grid: Optional[TorusGrid] = None,
                                n_pairs: int = 100, seed: int = 0,
                                state_dim: Optional[int] = None) -> dict:
    """Sampled monotonicity of the coupling and (-g)-convexity of H.

    Convexity is checked in the orientation
    H(x,q2) - H(x,q1) + g(x,q1).(q2-q1) >= 0, the one under which the
    quadratic model passes with gap |q2-q1|^2/2; strictness may fall back
    to requiring distinct drifts (covers H = R|q|, flat along rays).
    """
    if n_pairs < 100:
        raise ValueError("need at least 100 sample pairs")
    grid = grid or TorusGrid(1, 64)
    rng = np.random.default_rng(seed)
    pair_min = np.inf
    strict_mono = True
    for _ in range(n_pairs):
        m1 = _random_density(grid, rng)
        m2 = _random_density(grid, rng)
        dm = m1.values - m2.values
        dv = coupling(m1).values - coupling(m2).values
        pairing = float(np.mean(dv * dm))
        pair_min = min(pair_min, pairing)
        l1 = float(np.mean(np.abs(dm)))
        if pairing <= 1e-10 * l1**2:
            strict_mono = False

    mm = model.control_dim
    x = TorusGrid(state_dim or mm, 8).points()
    gap_min = np.inf
    strict_conv = True
    for _ in range(n_pairs):
        q1 = rng.normal(scale=2.0, size=(x.shape[0], mm))
        q2 = rng.normal(scale=2.0, size=(x.shape[0], mm))
        h1 = model.hamiltonian(x, q1)
        h2 = model.hamiltonian(x, q2)
        g1 = model.drift(x, q1)
        g2 = model.drift(x, q2)
        gap = h2 - h1 + np.sum(g1 * (q2 - q1), axis=-1)
        gap_min = min(gap_min, float(np.min(gap)))
        dq2 = np.sum((q2 - q1) ** 2, axis=-1)
        need_strict = np.max(np.abs(g1 - g2), axis=-1) > 1e-12
        if np.any(gap[need_strict] <= 1e-10 * dq2[need_strict]):
            strict_conv = False
    return {
        "monotone": bool(pair_min >= -1e-12),
        "strictly_monotone": bool(strict_mono and pair_min >= -1e-12),
        "pairing_min": pair_min,
        "g_convex": bool(gap_min >= -1e-12),
        "strictly_g_convex": bool(strict_conv and gap_min >= -1e-12),
        "convexity_gap_min": gap_min,
        "n_pairs": n_pairs,
    }


def system_residual(kind: str, model: ControlModel, coupling: Coupling,
                    family: VectorFieldFamily, grid: TorusGrid,
                    u: GridFunction, m: GridFunction,
                    rho: Optional[float] = None,
                    lam: Optional[float] = None,
                    eps: float = 0.0) -> dict:
    """Pointwise sup-norm residuals of the coupled system for a candidate
    triple, on the same discretisation the solvers use."""
    disc = Discretization(model, family, grid, eps=eps)
    if isinstance(m, StationaryMeasure):
        m = m.m
    rhs = coupling(m)
    if kind == "discounted":
        if rho is None:
            raise ValueError("discounted residual needs rho")
        res_hjb = disc.hjb_residual(u.values, rhs.values, rho=rho)
    elif kind == "ergodic":
        if lam is None:
            raise ValueError("ergodic residual needs lam")
        res_hjb = disc.hjb_residual(u.values, rhs.values, rho=0.0, lam=lam)
    else:
        raise ValueError("kind must be 'discounted' or 'ergodic'")
    g = disc.drift_of(u.values)
    out = {
        "hjb": res_hjb,
        "fp": disc.fp_residual(m.values, g),
        "mass_error": float(m.values.mean()) - 1.0,
    }
    if kind == "ergodic":
        out["mean_u"] = float(u.values.mean())
    return out
