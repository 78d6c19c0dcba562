"""Finite-player games on the torus grid and their mean field limit.

The N players share one state space, control model, and macroscopic cost
map W; each player prices the empirical average of all states, own state
included, which is what makes the per-player cost V_i differ from W[m]
at finite N.  The Nash solver reuses the single-agent continuation per
player and iterates the tuple; path simulation is midpoint (Stratonovich)
Euler with seeded substreams so ensembles rerun bit for bit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.optimize
import scipy.sparse as sparse

from .fpstat import StationaryMeasure
from .hjb import ControlModel
from .mfgcore import Coupling, Discretization, MFGSolution, make_coupling, \
    solve_ergodic_mfg
from .torusgrid import GridFunction, SolverError, TorusGrid, \
    horizontal_gradient, mollifier_kernel, mollify
from .vfields import VectorFieldFamily

__all__ = [
    "GameSpec",
    "NashSolution",
    "PathEnsemble",
    "empirical_coupling",
    "kr_distance",
    "simulate_dynamics",
    "solve_symmetric_nash",
    "verify_equilibrium",
]

# node count above which dense per-node kernels and transport plans stop
# being a sensible idea; every game-facing routine is coarse-grid by intent
_DENSE_NODE_LIMIT = 4096

_GROWTH_NOTE = "ergodic continuation with a quadratic-growth model"


def _warn_growth_once(model: ControlModel):
    if model.growth == "quadratic":
        warnings.warn(f"{_GROWTH_NOTE}: the uniform-in-rho bound is not "
                      "guaranteed", stacklevel=3)


def _ergodic_solve_quiet(*args, **kwargs):
    """Inner continuation call with the growth caveat already surfaced."""
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=_GROWTH_NOTE)
        return solve_ergodic_mfg(*args, **kwargs)

_PMAT_CACHE: dict = {}


def _kernel_matrix(grid: TorusGrid, sigma: float) -> np.ndarray:
    """P[i, j] = phi_per(x_i - x_j): the mollifier as a pointwise kernel,
    so P @ (mass vector) is the convolution of phi with a discrete measure."""
    key = (grid.dim, grid.n, round(float(sigma), 12))
    if key in _PMAT_CACHE:
        return _PMAT_CACHE[key]
    if grid.num_nodes > _DENSE_NODE_LIMIT:
        raise ValueError(
            f"dense kernel needs num_nodes <= {_DENSE_NODE_LIMIT}, "
            f"got {grid.num_nodes}")
    w = mollifier_kernel(grid, sigma).ravel()
    coords = np.stack(np.unravel_index(np.arange(grid.num_nodes), grid.shape),
                      axis=-1)
    diff = (coords[:, None, :] - coords[None, :, :]) % grid.n
    flat = np.ravel_multi_index(tuple(np.moveaxis(diff, -1, 0)), grid.shape)
    P = w[flat] / grid.h**grid.dim
    _PMAT_CACHE[key] = P
    return P


def _density_values(m, grid: TorusGrid) -> np.ndarray:
    if isinstance(m, StationaryMeasure):
        m = m.m
    if isinstance(m, GridFunction):
        m = m.values
    m = np.asarray(m, dtype=float)
    if m.shape != (grid.num_nodes,):
        raise ValueError("density has wrong shape for this grid")
    return m


def _node_probabilities(m_values: np.ndarray, grid: TorusGrid) -> np.ndarray:
    p = m_values * grid.h**grid.dim
    total = p.sum()
    if not np.isclose(total, 1.0, atol=1e-6):
        raise ValueError(f"density mass {total:.3e} is not 1")
    return np.clip(p, 0.0, None) / np.clip(p, 0.0, None).sum()


def empirical_coupling(coupling: Coupling, n_players: int,
                       opponents: Sequence, grid: TorusGrid,
                       budget: int = 4000, rng=None,
                       tol: Optional[float] = None):
    """Per-player cost field V_i, averaging W over the opponents' states.

    V_i(x) = E[ W[(1/N)(delta_x + sum_j delta_{x^j})](x) ] with the x^j
    drawn independently from the opponents' densities.  The own-state atom
    is always part of the measure W sees.  Returns (GridFunction, info);
    info carries the evaluation method and, for Monte Carlo, the maximum
    standard error over nodes.

    Exact paths: constant and frozen couplings, any linear coupling
    (convolution, or smoothed-local with the identity nonlinearity), and
    tensor quadrature for at most two opponents.  Everything else is
    seeded Monte Carlo with `budget` samples; if `tol` is given and the
    standard error exceeds it, the result is flagged, not rejected.
    """
    N = int(n_players)
    if N < 1:
        raise ValueError("need at least one player")
    if len(opponents) != N - 1:
        raise ValueError(f"expected {N - 1} opponent densities, "
                         f"got {len(opponents)}")
    info: dict = {"n_players": N}
    if N == 1:
        # the empty product measure: V_1(x) = W[delta_x](x), evaluated
        # literally even though a one-player "mean field" is degenerate
        info["single_player"] = True
    opp = [_density_values(m, grid) for m in opponents]

    if coupling.kind == "constant":
        info["method"] = "exact"
        return GridFunction.constant(grid, coupling.constant), info
    if coupling.kind == "frozen":
        info["method"] = "frozen"
        return GridFunction(grid, coupling.frozen_values.copy()), info

    hd = grid.h**grid.dim
    P = _kernel_matrix(grid, coupling.sigma)
    linear = (coupling.kind == "linear_convolution"
              or coupling.nonlinearity.name == "identity")
    if linear:
        # one or two convolution layers pass through the expectation,
        # leaving a mean field term plus a constant own-state term
        info["method"] = "closed_form"
        own = P[0] / N                       # phi(. - x) column, shifted
        if coupling.kind == "linear_convolution":
            own_term = float(P[0, 0]) / N    # phi_per(0), x-independent
            mean_part = sum(mollify(GridFunction(grid, mj),
                                    coupling.sigma).values for mj in opp)
        else:
            own_term = hd * float(P[0] @ P[0]) / N
            mean_part = sum(
                mollify(mollify(GridFunction(grid, mj), coupling.sigma),
                        coupling.sigma).values for mj in opp)
        vals = (mean_part / N if opp else np.zeros(grid.num_nodes)) + own_term
        return GridFunction(grid, vals), info

    G = coupling.nonlinearity.fn
    if N <= 3 and grid.num_nodes <= 80:
        # tensor quadrature over the opponent nodes: exact at grid level
        info["method"] = "quadrature"
        if N == 1:
            B = G(P / N)
            vals = hd * np.einsum("xy,xy->x", P, B)
            return GridFunction(grid, vals), info
        q1 = _node_probabilities(opp[0], grid)
        vals = np.zeros(grid.num_nodes)
        if N == 2:
            for k in range(grid.num_nodes):
                B = G((P + P[:, k][None, :]) / N)
                vals += q1[k] * hd * np.einsum("xy,xy->x", P, B)
        else:
            q2 = _node_probabilities(opp[1], grid)
            for k in range(grid.num_nodes):
                S = (P[:, k][None, :] + P.T) / N
                B = G(P[None, :, :] / N + S[:, None, :])
                contrib = hd * np.einsum("xy,lxy->lx", P, B)
                vals += q1[k] * (q2 @ contrib)
        return GridFunction(grid, vals), info

    # Monte Carlo over opponent tuples
    rng = np.random.default_rng(0) if rng is None else rng
    budget = int(budget)
    if budget < 2:
        raise ValueError("Monte Carlo budget must be at least 2")
    probs = [_node_probabilities(mj, grid) for mj in opp]
    draws = np.stack([rng.choice(grid.num_nodes, size=budget, p=pj)
                      for pj in probs], axis=1)     # (budget, N-1)
    acc = np.zeros(grid.num_nodes)
    acc2 = np.zeros(grid.num_nodes)
    for b in range(budget):
        s = P[:, draws[b]].sum(axis=1) / N          # opponents' inner field
        B = G(P / N + s[None, :])
        vb = hd * np.einsum("xy,xy->x", P, B)
        acc += vb
        acc2 += vb * vb
    vals = acc / budget
    var = np.clip(acc2 / budget - vals * vals, 0.0, None)
    se = float(np.sqrt(var.max() / budget))
    info.update(method="monte_carlo", budget=budget, se_sup=se)
    if tol is not None and se > tol:
        info["budget_insufficient"] = True
    return GridFunction(grid, vals), info


def _ground_matrix(grid: TorusGrid) -> np.ndarray:
    pts = grid.points()
    delta = grid.min_image(
        (pts[:, None, :] - pts[None, :, :]).reshape(-1, grid.dim))
    return np.linalg.norm(delta, axis=1).reshape(grid.num_nodes,
                                                 grid.num_nodes)


def kr_distance(m1, m2, grid: Optional[TorusGrid] = None,
                cost_matrix: Optional[np.ndarray] = None) -> float:
    """Kantorovich-Rubinstein distance between two grid densities.

    Ground metric defaults to the flat-torus distance; pass `cost_matrix`
    (for instance a table of control distances from ccgeom) to override,
    which leaves the Lipschitz class of the limit theory.  On T^1 with the
    default metric the optimal transport reduces to the circular CDF
    formula; otherwise the exact plan is found by linear programming.
    """
    if grid is None:
        grid = m1.grid if isinstance(m1, GridFunction) else m1.m.grid
    a = _density_values(m1, grid)
    b = _density_values(m2, grid)
    p = _node_probabilities(a, grid)
    q = _node_probabilities(b, grid)
    if grid.dim == 1 and cost_matrix is None:
        excess = np.cumsum(p - q)
        cut = np.median(excess)
        return float(grid.h * np.sum(np.abs(excess - cut)))
    # canonical argument order keeps the LP value exactly symmetric
    if b.tobytes() < a.tobytes():
        p, q = q, p
    if grid.num_nodes > 400 and cost_matrix is None:
        raise ValueError("transport LP is dense; grid too large "
                         f"({grid.num_nodes} nodes)")
    C = _ground_matrix(grid) if cost_matrix is None else np.asarray(
        cost_matrix, dtype=float)
    n = grid.num_nodes
    if C.shape != (n, n):
        raise ValueError("cost matrix shape does not match the grid")
    A_eq = sparse.vstack([
        sparse.kron(sparse.eye(n), np.ones((1, n))),
        sparse.kron(np.ones((1, n)), sparse.eye(n)),
    ]).tocsr()[:-1]
    b_eq = np.concatenate([p, q])[:-1]
    res = scipy.optimize.linprog(C.ravel(), A_eq=A_eq, b_eq=b_eq,
                                 bounds=(0, None), method="highs")
    if res.status != 0:
        raise SolverError(f"transport LP failed: {res.message}")
    return float(res.fun)


def _interp_periodic(grid: TorusGrid, values: np.ndarray,
                     pts: np.ndarray) -> np.ndarray:
    """Multilinear periodic interpolation of node values at pts in [0,1)^d."""
    vals = values.reshape(grid.num_nodes, -1)
    scaled = pts / grid.h
    base = np.floor(scaled).astype(np.int64)
    frac = scaled - base
    out = np.zeros((pts.shape[0], vals.shape[1]))
    for corner in range(2**grid.dim):
        bits = [(corner >> ax) & 1 for ax in range(grid.dim)]
        idx = [(base[:, ax] + bits[ax]) % grid.n for ax in range(grid.dim)]
        wgt = np.ones(pts.shape[0])
        for ax in range(grid.dim):
            wgt = wgt * (frac[:, ax] if bits[ax] else 1.0 - frac[:, ax])
        flat = np.ravel_multi_index(idx, grid.shape)
        out += wgt[:, None] * vals[flat]
    return out if values.ndim > 1 else out[:, 0]


@dataclass(frozen=True)
class PathEnsemble:
    """Ensemble of torus trajectories plus the accumulated statistics.

    counts holds one visit per path per step (so counts.sum() equals
    n_steps * n_paths); the tail fields cover the second half of the
    horizon, which is what long-run averages are read from."""

    grid: TorusGrid
    final_states: np.ndarray
    dt: float
    horizon: float
    n_steps: int
    n_paths: int
    counts: np.ndarray
    counts_tail: np.ndarray
    cost_tail: Optional[np.ndarray]
    meta: dict = field(default_factory=dict)

    def occupation(self, tail: bool = False) -> GridFunction:
        c = self.counts_tail if tail else self.counts
        dens = c / (c.sum() * self.grid.h**self.grid.dim)
        return GridFunction(self.grid, dens)

    def cost_average(self):
        """(mean, standard error) of the per-path tail time averages."""
        if self.cost_tail is None:
            raise ValueError("ensemble was run without a cost field")
        j = self.cost_tail
        return float(j.mean()), float(j.std(ddof=1) / np.sqrt(j.size))


def simulate_dynamics(family: VectorFieldFamily, drift, grid: TorusGrid,
                      horizon: float, dt: float, n_paths: int, seed: int,
                      x0=None, cost_field=None, noise_scale: float = 1.0,
                      chunk: int = 8192) -> PathEnsemble:
    """Midpoint Euler sample paths of the controlled Hoermander dynamic.

    drift is the horizontal coefficient field b(x) in R^m, given on the
    grid (interpolated along paths) or as a callable; the noise enters
    through the same frame, one Brownian component per field, with the
    diffusion evaluated at the half-step predictor so the scheme is
    consistent with the Stratonovich reading of the equation.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if dt > grid.h + 1e-15:
        raise ValueError(f"dt = {dt} exceeds the grid step {grid.h}")
    n_steps = int(round(horizon / dt))
    if n_steps < 2:
        raise ValueError("horizon too short for the requested dt")
    d, m = grid.dim, family.m

    if drift is None:
        drift_at = lambda pts: np.zeros((pts.shape[0], m))
    elif callable(drift):
        drift_at = drift
    else:
        drift_values = np.asarray(drift, dtype=float).reshape(
            grid.num_nodes, m)
        drift_at = lambda pts: _interp_periodic(grid, drift_values, pts)
    cost_at = None
    if cost_field is not None:
        cost_values = np.asarray(
            cost_field.values if isinstance(cost_field, GridFunction)
            else cost_field, dtype=float)
        cost_at = lambda pts: _interp_periodic(grid, cost_values, pts)

    if x0 is None:
        starts = np.zeros((n_paths, d))
    else:
        x0 = np.asarray(x0, dtype=float)
        starts = np.broadcast_to(x0.reshape(-1, d) % 1.0,
                                 (n_paths, d)).copy()

    tail_from = n_steps // 2
    counts = np.zeros(grid.num_nodes, dtype=np.int64)
    counts_tail = np.zeros(grid.num_nodes, dtype=np.int64)
    cost_tail = np.zeros(n_paths) if cost_at is not None else None
    finals = np.empty((n_paths, d))
    root = np.random.SeedSequence(seed)
    n_chunks = (n_paths + chunk - 1) // chunk
    children = root.spawn(n_chunks)
    sqdt = np.sqrt(dt)

    for ci in range(n_chunks):
        lo, hi = ci * chunk, min((ci + 1) * chunk, n_paths)
        xi = starts[lo:hi].copy()
        rng = np.random.default_rng(children[ci])
        csum = np.zeros(hi - lo) if cost_at is not None else None
        for step in range(n_steps):
            flat = np.ravel_multi_index(
                tuple((xi[:, ax] / grid.h).astype(np.int64) % grid.n
                      for ax in range(d)), grid.shape)
            np.add.at(counts, flat, 1)
            if step >= tail_from:
                np.add.at(counts_tail, flat, 1)
                if cost_at is not None:
                    csum += cost_at(xi)
            dw = rng.normal(0.0, sqdt, size=(hi - lo, m)) * noise_scale
            sig = family.sigma(xi)
            b = drift_at(xi)
            adv = np.einsum("pkd,pk->pd", sig, b) * dt
            mid = (xi + 0.5 * np.einsum("pkd,pk->pd", sig, dw)) % 1.0
            xi = (xi + adv + np.einsum("pkd,pk->pd",
                                       family.sigma(mid), dw)) % 1.0
            if step % 128 == 0 and not np.all(np.isfinite(xi)):
                bad = int(np.sum(~np.isfinite(xi).all(axis=1)))
                raise SolverError(
                    f"path blow-up at step {step}: {bad} paths non-finite",
                    meta={"step": step, "bad_paths": bad})
        finals[lo:hi] = xi
        if cost_at is not None:
            cost_tail[lo:hi] = csum / (n_steps - tail_from)
    return PathEnsemble(
        grid=grid, final_states=finals, dt=dt, horizon=horizon,
        n_steps=n_steps, n_paths=n_paths, counts=counts,
        counts_tail=counts_tail, cost_tail=cost_tail,
        meta={"seed": seed, "family": family.name,
              "noise_scale": noise_scale})


@dataclass
class GameSpec:
    """N similar players: shared geometry, model, and macroscopic cost map."""

    n_players: int
    family: VectorFieldFamily
    grid: TorusGrid
    model: ControlModel
    coupling: Coupling
    mc_budget: int = 4000
    seed: int = 0
    damping: float = 0.5
    tol_outer: float = 1e-9
    max_outer: int = 60
    tol_ergodic: float = 1e-6
    eps: float = 0.0

    def __post_init__(self):
        if self.n_players < 1:
            raise ValueError("n_players must be at least 1")
        if self.coupling.kind == "frozen":
            raise ValueError("the game coupling must depend on the measure")


@dataclass(frozen=True)
class NashSolution:
    """Per-player ergodic triples plus how far they sit from symmetry."""

    lam: np.ndarray
    u: list
    m: list
    rhs: list
    residuals: list
    symmetry: dict
    iterations: int
    meta: dict = field(default_factory=dict)


def _player_rhs(game: GameSpec, m_all: list, outer: int):
    """V_i for each player, computed once per distinct opponent multiset.

    Keying on the opponents' bytes makes the update commute with player
    permutations exactly: at a symmetric tuple every player receives the
    same field, Monte Carlo noise included, so symmetry is preserved to
    the last bit rather than to statistical accuracy.
    """
    keys = [m.tobytes() for m in m_all]
    cache: dict = {}
    rhs, infos = [], []
    for i in range(game.n_players):
        opp_key = tuple(sorted(keys[j] for j in range(game.n_players)
                               if j != i))
        if opp_key not in cache:
            rng = np.random.default_rng(
                np.random.SeedSequence((game.seed, outer, len(cache))))
            opponents = [m_all[j] for j in range(game.n_players) if j != i]
            cache[opp_key] = empirical_coupling(
                game.coupling, game.n_players, opponents, game.grid,
                budget=game.mc_budget, rng=rng)
        v, info = cache[opp_key]
        rhs.append(v)
        infos.append(info)
    return rhs, infos


def solve_symmetric_nash(game: GameSpec, starts=None) -> NashSolution:
    """Damped fixed point over the N-tuple of ergodic single-agent solves.

    Each outer pass rebuilds every player's cost field from the current
    opponents and re-solves that player's ergodic system against it with
    the vanishing-discount continuation.  A symmetric start stays
    symmetric by construction; pass per-player `starts` to study how
    asymmetry dies out.
    """
    grid, N = game.grid, game.n_players
    _warn_growth_once(game.model)
    if starts is None:
        u_all = [np.zeros(grid.num_nodes) for _ in range(N)]
    else:
        if len(starts) != N:
            raise ValueError("need one start per player")
        u_all = [np.asarray(
            s.values if isinstance(s, GridFunction) else s,
            dtype=float).copy() for s in starts]
    m_all = [np.ones(grid.num_nodes) for _ in range(N)]
    lam = np.zeros(N)
    theta = game.damping
    infos: list = []
    outer = 0

    for outer in range(1, game.max_outer + 1):
        rhs, infos = _player_rhs(game, m_all, outer)
        step = 0.0
        new_u, new_m = [], []
        # identical (state, cost field) pairs share one solve; with a
        # symmetric tuple this collapses the pass to a single player
        solved: dict = {}
        for i in range(N):
            key = (u_all[i].tobytes(), rhs[i].values.tobytes())
            if key not in solved:
                frozen = make_coupling("frozen", frozen=rhs[i].values)
                try:
                    solved[key] = _ergodic_solve_quiet(
                        game.model, frozen, game.family, grid,
                        tol_ergodic=game.tol_ergodic, eps=game.eps,
                        v0=GridFunction(grid, u_all[i]))
                except SolverError as err:
                    raise SolverError(
                        f"player {i} failed at outer pass {outer}: {err}",
                        meta={"player": i, "outer": outer}) from err
            sol = solved[key]
            new_u.append(sol.u.values.copy())
            new_m.append(sol.m.m.values.copy())
            lam[i] = sol.lam
        for i in range(N):
            du = np.max(np.abs(new_u[i] - u_all[i]))
            dm = np.sum(np.abs(new_m[i] - m_all[i])) * grid.h**grid.dim
            step = max(step, du + dm)
            u_all[i] = u_all[i] + theta * (new_u[i] - u_all[i])
            m_all[i] = m_all[i] + theta * (new_m[i] - m_all[i])
        if step < game.tol_outer:
            u_all, m_all = new_u, new_m
            break
    else:
        raise SolverError(
            f"Nash iteration did not reach {game.tol_outer:.1e} in "
            f"{game.max_outer} passes (last step {step:.2e})",
            meta={"outer": game.max_outer, "step": step})

    rhs, infos = _player_rhs(game, m_all, outer + 1)
    disc = Discretization(game.model, game.family, grid, eps=game.eps)
    residuals = []
    for i in range(N):
        g = disc.drift_of(u_all[i])
        residuals.append({
            "hjb": disc.hjb_residual(u_all[i], rhs[i].values, rho=0.0,
                                     lam=lam[i]),
            "fp": disc.fp_residual(m_all[i], g),
        })
    dlam = max(abs(lam[i] - lam[j])
               for i in range(N) for j in range(i, N))
    dsup = max(np.max(np.abs(u_all[i] - u_all[j]))
               for i in range(N) for j in range(i, N))
    dkr = max(kr_distance(GridFunction(grid, m_all[i]),
                          GridFunction(grid, m_all[j]))
              for i in range(N) for j in range(i, N))
    return NashSolution(
        lam=lam.copy(),
        u=[GridFunction(grid, v) for v in u_all],
        m=[GridFunction(grid, v) for v in m_all],
        rhs=rhs,
        residuals=residuals,
        symmetry={"max_dlam": dlam, "max_du": dsup, "max_kr": dkr},
        iterations=outer,
        meta={"coupling_info": infos, "tol_outer": game.tol_outer},
    )


def _verification_cases(solution, coupling):
    if isinstance(solution, MFGSolution):
        if coupling is None:
            raise ValueError("verifying an MFG solution needs its coupling")
        rhs = coupling(solution.m)
        return [(solution.lam, solution.u, solution.m.m, rhs)]
    if isinstance(solution, NashSolution):
        return [(float(solution.lam[i]), solution.u[i], solution.m[i],
                 solution.rhs[i]) for i in range(len(solution.u))]
    raise TypeError("expected an MFGSolution or a NashSolution")


def verify_equilibrium(solution, model: ControlModel,
                       family: VectorFieldFamily, grid: TorusGrid,
                       coupling: Optional[Coupling] = None,
                       n_paths: int = 10_000, horizon: float = 50.0,
                       dt: Optional[float] = None, seed: int = 0,
                       allowance: float = 1.0, se_limit: float = 0.05,
                       tol_ergodic: float = 1e-6,
                       best_response: bool = True) -> dict:
    """Monte Carlo check that the PDE value is the cost of its own policy.

    For each player: simulate the closed-loop dynamic under the feedback
    policy, estimate the long-run average cost J from the tail window,
    and compare with lambda under the tolerance 3 SE + allowance (h + dt).
    With `best_response`, also re-solve the player's ergodic equation
    against the frozen cost field from scratch; any profitable deviation
    would show up as that value dipping below lambda.  A standard error
    above `se_limit` marks the statistical half inconclusive.
    """
    dt = min(0.01, grid.h) if dt is None else dt
    if best_response:
        _warn_growth_once(model)
    disc = Discretization(model, family, grid)
    players = []
    for pi, (lam, u, m_gf, rhs) in enumerate(
            _verification_cases(solution, coupling)):
        g = disc.drift_of(u.values)
        dcu = horizontal_gradient(grid, family, u)
        cost = model.cost_at_optimum(disc.points, dcu) + rhs.values
        start_rng = np.random.default_rng(
            np.random.SeedSequence((seed, pi, 17)))
        nodes = start_rng.choice(grid.num_nodes, size=n_paths,
                                 p=_node_probabilities(m_gf.values, grid))
        jitter = start_rng.uniform(0.0, grid.h, size=(n_paths, grid.dim))
        x0 = (grid.points()[nodes] + jitter) % 1.0
        ens = simulate_dynamics(family, g, grid, horizon, dt, n_paths,
                                seed=seed + 1000 * pi, x0=x0,
                                cost_field=cost)
        j_mean, j_se = ens.cost_average()
        gap = abs(j_mean - lam)
        thr = 3.0 * j_se + allowance * (grid.h + dt)
        rec = {
            "player": pi, "lam": lam, "J": j_mean, "J_se": j_se,
            "gap": gap, "threshold": thr, "value_ok": bool(gap <= thr),
            "inconclusive": bool(j_se > se_limit),
        }
        if best_response:
            frozen = make_coupling("frozen", frozen=rhs.values)
            br = _ergodic_solve_quiet(model, frozen, family, grid,
                                      tol_ergodic=tol_ergodic)
            rec["best_response_lam"] = br.lam
            rec["deviation_gap"] = lam - br.lam
            rec["deviation_ok"] = bool(
                lam - br.lam <= 1e-6 + 2.0 * tol_ergodic)
        players.append(rec)
    out = {
        "players": players,
        "max_gap": max(p["gap"] for p in players),
        "all_value_ok": all(p["value_ok"] for p in players),
        "inconclusive": any(p["inconclusive"] for p in players),
        "dt": dt, "horizon": horizon, "n_paths": n_paths,
    }
    if best_response:
        out["max_deviation_gap"] = max(p["deviation_gap"] for p in players)
        out["all_deviation_ok"] = all(p["deviation_ok"] for p in players)
    return out
