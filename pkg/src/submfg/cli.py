"""Configuration-driven entry point: one TOML file, one task, one output
directory of CSV/JSON artifacts plus a manifest.

All numeric artifacts rerun byte-identically for a fixed config and seed;
anything volatile (wall time) is quarantined in the manifest's `volatile`
block so reruns can be diffed file by file.  Exit codes: 0 success,
1 configuration error, 2 solver failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
import warnings
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:                       # python < 3.11
    import tomli as tomllib

import numpy as np

from .ccgeom import cc_distance_map, homogeneous_dimension_fit
from .fpstat import ergodic_decay_estimate, stationary_measure
from .games import GameSpec, simulate_dynamics, solve_symmetric_nash, \
    verify_equilibrium
from .hjb import ball_model, ball_sampled_model, ball_soft_model, \
    quadratic_model, solve_discounted_hjb, trivial_model
from .io import ensure_dir, gridfunction_to_csv, write_json
from .mfgcore import make_coupling, solve_discounted_mfg, solve_ergodic_mfg
from .torusgrid import GridFunction, SolverError, TorusGrid, \
    horizontal_gradient
from .vfields import family_by_name

__all__ = ["ConfigError", "RunConfig", "load_config", "run", "main"]

_TASKS = ("solve-mfg", "solve-hjb", "solve-fp", "ccdist",
          "ergodic-diagnostics", "nplayer", "simulate", "verify")
_MODEL_KINDS = ("quadratic", "ball", "ball_sampled", "ball_soft", "trivial")
_COUPLING_KINDS = ("smoothed_local", "linear_convolution", "constant")


class ConfigError(ValueError):
    """Raised on schema violations; the message names the offending field."""


@dataclass(frozen=True)
class RunConfig:
    """A validated run: every numeric range has been checked before any
    computation starts, so task code can trust its inputs."""

    task: str
    family: str
    dim: int
    n: int
    scheme: str
    eps: float
    seed: int
    out_dir: str
    quiet: bool
    model: dict
    coupling: dict
    solver: dict
    simulate: dict
    game: dict
    geometry: dict
    diagnostics: dict
    raw: dict = field(repr=False)


def _need(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def _positive(section: dict, key: str, default=None, strict=True):
    val = section.get(key, default)
    if val is None:
        return None
    val = float(val)
    _need(val > 0 if strict else val >= 0,
          f"{key} must be {'positive' if strict else 'nonnegative'}, "
          f"got {val}")
    return val


def load_config(path: str) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def validate_config(raw: dict) -> RunConfig:
    task = raw.get("task")
    _need(task in _TASKS, f"task must be one of {_TASKS}, got {task!r}")
    fam_sec = raw.get("family", {})
    if isinstance(fam_sec, str):
        fam_sec = {"name": fam_sec}
    fam_name = fam_sec.get("name", "euclidean")
    dim = int(fam_sec.get("dim", 0) or 0)
    try:
        fam = family_by_name(fam_name, dim if dim else None)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    dim = fam.dim

    grid_sec = raw.get("grid", {})
    n = int(grid_sec.get("n", 16))
    _need(n >= 4, f"grid.n must be at least 4, got {n}")
    scheme = grid_sec.get("scheme", "monotone")
    _need(scheme in ("monotone", "centered"),
          f"grid.scheme must be monotone or centered, got {scheme!r}")
    eps = _positive(grid_sec, "eps", 0.0, strict=False)

    model = dict(raw.get("model", {}))
    kind = model.setdefault("kind", "quadratic")
    _need(kind in _MODEL_KINDS,
          f"model.kind must be one of {_MODEL_KINDS}, got {kind!r}")
    if "radius" in model:
        _positive(model, "radius")
    if "kappa" in model:
        _positive(model, "kappa")
    pot = model.get("potential", {})
    for part in ("cos", "sin"):
        coefs = pot.get(part, [])
        _need(len(coefs) <= dim,
              f"model.potential.{part} has {len(coefs)} entries for a "
              f"{dim}-dimensional state")
    if pot and kind in ("ball", "trivial"):
        raise ConfigError(f"model.kind {kind!r} takes no potential")

    coupling = dict(raw.get("coupling", {}))
    ckind = coupling.setdefault("kind", "smoothed_local")
    _need(ckind in _COUPLING_KINDS,
          f"coupling.kind must be one of {_COUPLING_KINDS}, got {ckind!r}")
    if ckind in ("smoothed_local", "linear_convolution"):
        sig = float(coupling.setdefault("sigma", 0.1))
        _need(0.0 < sig < 0.5,
              f"coupling.sigma must lie in (0, 1/2), got {sig}")

    solver = dict(raw.get("solver", {}))
    _positive(solver, "rho0", 0.5)
    if "rho" in solver:
        _positive(solver, "rho")
    steps = int(solver.setdefault("rho_steps", 13))
    _need(steps >= 1, f"solver.rho_steps must be at least 1, got {steps}")
    damping = float(solver.setdefault("damping", 0.5))
    _need(0.0 < damping <= 1.0,
          f"solver.damping must lie in (0, 1], got {damping}")
    for key in ("tol", "tol_ergodic", "tol_inner"):
        if key in solver:
            _positive(solver, key)
    mode = solver.setdefault("mode", "ergodic")
    _need(mode in ("ergodic", "discounted"),
          f"solver.mode must be ergodic or discounted, got {mode!r}")

    sim = dict(raw.get("simulate", {}))
    if sim:
        _need(int(sim.get("paths", 1)) >= 1, "simulate.paths must be >= 1")
        _positive(sim, "horizon", 50.0)
        _positive(sim, "dt", 0.01)

    game = dict(raw.get("game", {}))
    if game:
        _need(int(game.get("players", 1)) >= 1,
              "game.players must be at least 1")
        _need(int(game.get("budget", 4000)) >= 2,
              "game.budget must be at least 2")

    geometry = dict(raw.get("geometry", {}))
    diagnostics = dict(raw.get("diagnostics", {}))
    seed = int(raw.get("seed", 0))
    out_dir = str(raw.get("out", "out"))
    return RunConfig(
        task=task, family=fam_name, dim=dim, n=n, scheme=scheme,
        eps=float(eps), seed=seed, out_dir=out_dir,
        quiet=bool(raw.get("quiet", False)), model=model, coupling=coupling,
        solver=solver, simulate=sim, game=game, geometry=geometry,
        diagnostics=diagnostics, raw=raw)


def _potential_fn(cfg: RunConfig):
    pot = cfg.model.get("potential", {})
    cos = [float(c) for c in pot.get("cos", [])]
    sin = [float(s) for s in pot.get("sin", [])]
    if not any(cos) and not any(sin):
        return None

    def f(x):
        out = np.zeros(x.shape[0])
        for ax, c in enumerate(cos):
            out += c * np.cos(2.0 * np.pi * x[:, ax])
        for ax, s in enumerate(sin):
            out += s * np.sin(2.0 * np.pi * x[:, ax])
        return out
    return f


def _build_model(cfg: RunConfig, m: int):
    kind = cfg.model["kind"]
    radius = float(cfg.model.get("radius", 1.0))
    pot = _potential_fn(cfg)
    if kind == "quadratic":
        return quadratic_model(m, potential=pot, dim=cfg.dim)
    if kind == "ball":
        return ball_model(m, radius)
    if kind == "ball_sampled":
        return ball_sampled_model(
            m, radius, per_axis=int(cfg.model.get("per_axis", 9)),
            potential=pot, dim=cfg.dim)
    if kind == "ball_soft":
        return ball_soft_model(
            m, radius, kappa=float(cfg.model.get("kappa", 0.2)),
            potential=pot, dim=cfg.dim)
    return trivial_model(m)


def _build_coupling(cfg: RunConfig):
    c = cfg.coupling
    return make_coupling(c["kind"], sigma=float(c.get("sigma", 0.1)),
                         nonlinearity=c.get("nonlinearity", "identity"),
                         constant=float(c.get("constant", 0.0)))


def _rho_schedule(cfg: RunConfig):
    rho0 = float(cfg.solver.get("rho0", 0.5))
    return [rho0 * 2.0**(-k) for k in range(int(cfg.solver["rho_steps"]))]


def _mass_positivity(m_values: np.ndarray) -> dict:
    mass_err = abs(float(m_values.mean()) - 1.0)
    mmin = float(m_values.min())
    return {
        "mass_error": {"value": mass_err, "ok": bool(mass_err <= 1e-12)},
        "positivity": {"min_m": mmin, "ok": bool(mmin > 0.0)},
    }


def _strip_w(rho_path):
    return [{k: v for k, v in rec.items() if k != "w"} for rec in rho_path]


def _task_solve_mfg(cfg, fam, out):
    model = _build_model(cfg, fam.m)
    coupling = _build_coupling(cfg)
    grid = TorusGrid(cfg.dim, cfg.n)
    artifacts, checks = [], {}
    if cfg.solver["mode"] == "discounted":
        rho = float(cfg.solver.get("rho", 0.5))
        sol = solve_discounted_mfg(
            model, coupling, fam, grid, rho,
            damping=float(cfg.solver["damping"]),
            tol=float(cfg.solver.get("tol", 1e-8)), eps=cfg.eps)
        summary = {"mode": "discounted", "rho": rho,
                   "residuals": sol.residuals, "iterations": sol.iterations}
    else:
        sol = solve_ergodic_mfg(
            model, coupling, fam, grid, rho_schedule=_rho_schedule(cfg),
            tol_ergodic=float(cfg.solver.get("tol_ergodic", 1e-6)),
            damping=float(cfg.solver["damping"]), eps=cfg.eps)
        summary = {"mode": "ergodic", "lambda": sol.lam,
                   "residuals": sol.residuals, "iterations": sol.iterations,
                   "rho_path": _strip_w(sol.rho_path),
                   "lam_cauchy_gap": sol.meta["lam_cauchy_gap"]}
        checks["bound_discounted_mean"] = {
            "per_step_ok": [bool(r["bound_ok"]) for r in sol.rho_path],
            "ok": bool(all(r["bound_ok"] for r in sol.rho_path)),
        }
        checks["bound_w_sup"] = {
            "max_over_schedule": sol.meta["w_sup_max"],
            "ok": bool(np.isfinite(sol.meta["w_sup_max"])),
        }
        checks["lam_cauchy"] = {
            "gap": sol.meta["lam_cauchy_gap"],
            "ok": bool(sol.meta["lam_cauchy_gap"] <= 1e-6),
        }
        for k, rec in enumerate(sol.rho_path):
            name = f"w_step_{k:02d}.csv"
            gridfunction_to_csv(GridFunction(grid, rec["w"]),
                                os.path.join(out, name), value_name="w")
            artifacts.append(name)
    gridfunction_to_csv(sol.u, os.path.join(out, "u.csv"), value_name="u")
    gridfunction_to_csv(sol.m.m, os.path.join(out, "m.csv"), value_name="m")
    artifacts += ["u.csv", "m.csv"]
    checks.update(_mass_positivity(sol.m.m.values))
    checks["residuals"] = {
        "hjb": sol.residuals["hjb"], "fp": sol.residuals["fp"],
        "ok": bool(max(sol.residuals["hjb"], sol.residuals["fp"]) <= 1e-6),
    }
    write_json(summary, os.path.join(out, "summary.json"))
    artifacts.append("summary.json")
    return summary, artifacts, checks


def _task_solve_hjb(cfg, fam, out):
    model = _build_model(cfg, fam.m)
    coupling = _build_coupling(cfg)
    grid = TorusGrid(cfg.dim, cfg.n)
    rho = float(cfg.solver.get("rho", 0.5))
    rhs = coupling(GridFunction.constant(grid, 1.0))
    sol = solve_discounted_hjb(model, fam, grid, rho, rhs,
                               tol=float(cfg.solver.get("tol", 1e-9)),
                               scheme=cfg.scheme, eps=cfg.eps)
    h0 = model.hamiltonian(grid.points(), np.zeros((grid.num_nodes, fam.m)))
    bound = float(np.max(np.abs(rhs.values - h0))) / rho + 1e-8
    sup_u = float(np.max(np.abs(sol.u.values)))
    gridfunction_to_csv(sol.u, os.path.join(out, "u.csv"), value_name="u")
    summary = {"rho": rho, "residual": sol.residual,
               "iterations": sol.iterations}
    write_json(summary, os.path.join(out, "summary.json"))
    checks = {
        "max_principle": {"sup_u": sup_u, "bound": bound,
                          "ok": bool(sup_u <= bound)},
        "residuals": {"hjb": sol.residual,
                      "ok": bool(sol.residual <= 1e-6)},
    }
    return summary, ["u.csv", "summary.json"], checks


def _drift_from_potential(cfg, fam, grid):
    pot = _potential_fn(cfg)
    if pot is None:
        return None
    f = GridFunction(grid, pot(grid.points()))
    return -horizontal_gradient(grid, fam, f)


def _task_solve_fp(cfg, fam, out):
    grid = TorusGrid(cfg.dim, cfg.n)
    g = _drift_from_potential(cfg, fam, grid)
    meas = stationary_measure(fam, grid, g=g, eps=cfg.eps)
    gridfunction_to_csv(meas.m, os.path.join(out, "m.csv"), value_name="m")
    summary = {"delta0": meas.delta0, "delta1": meas.delta1,
               "eta": meas.eta, "iterations": meas.iterations,
               "residual": meas.meta["residual"],
               "drift": "potential_gradient" if g is not None else "zero"}
    write_json(summary, os.path.join(out, "summary.json"))
    checks = _mass_positivity(meas.m.values)
    checks["residuals"] = {"fp": meas.meta["residual"],
                           "ok": bool(meas.meta["residual"] <= 1e-8)}
    return summary, ["m.csv", "summary.json"], checks


def _task_ccdist(cfg, fam, out):
    grid = TorusGrid(cfg.dim, cfg.n)
    geo = cfg.geometry
    source = np.asarray(geo.get("source", [0.0] * cfg.dim), dtype=float)
    dmap = cc_distance_map(grid, fam, source,
                           horizons=tuple(geo.get("horizons", (1, 2, 4))),
                           ndirs=int(geo.get("ndirs", 16)))
    gridfunction_to_csv(dmap.values, os.path.join(out, "dist.csv"),
                        value_name="d_cc")
    artifacts = ["dist.csv"]
    summary = {"source": list(source), "horizons": list(dmap.horizons),
               "reachable_fraction": dmap.reachable_fraction}
    checks = {"reachable": {"fraction": dmap.reachable_fraction,
                            "ok": bool(dmap.reachable_fraction == 1.0)}}
    radii = geo.get("radii")
    if radii is None and "radius_range" in geo:
        lo, hi, count = geo["radius_range"]
        radii = list(np.geomspace(float(lo), float(hi), int(count)))
    if radii is not None:
        fit = homogeneous_dimension_fit(dmap, np.asarray(radii, dtype=float))
        summary["dimension_fit"] = fit
        checks["dimension_fit"] = {"Q": fit["Q"], "rmse": fit["residual"],
                                   "ok": bool(np.isfinite(fit["Q"]))}
    write_json(summary, os.path.join(out, "geometry.json"))
    artifacts.append("geometry.json")
    return summary, artifacts, checks


def _task_diagnostics(cfg, fam, out):
    grid = TorusGrid(cfg.dim, cfg.n)
    g = _drift_from_potential(cfg, fam, grid)
    dia = cfg.diagnostics
    phi = GridFunction.from_callable(
        grid, lambda x: np.cos(2.0 * np.pi * x[:, 0]))
    est = ergodic_decay_estimate(
        fam, grid, g, phi, n_max=int(dia.get("n_max", 20)),
        dt=float(dia.get("dt", 0.005)), eps=cfg.eps)
    curve_rows = np.column_stack([est["fine_times"], est["fine_errors"]])
    with open(os.path.join(out, "decay_curve.csv"), "w") as fh:
        fh.write("t,error\n")
        for t, e in curve_rows:
            fh.write(f"{t!r},{e!r}\n")
    summary = {k: est[k] for k in
               ("errors", "delta_doeblin", "C_thm", "k_thm", "k_fit",
                "C_fit", "kernel_mode", "bound_ok", "monotone")}
    write_json(summary, os.path.join(out, "decay.json"))
    checks = {
        "doeblin": {"delta": est["delta_doeblin"],
                    "ok": bool(0.0 < est["delta_doeblin"] < 1.0)},
        "decay_bound": {"ok": bool(est["bound_ok"])},
    }
    checks.update(_mass_positivity(est["measure"].m.values))
    return summary, ["decay_curve.csv", "decay.json"], checks


def _task_nplayer(cfg, fam, out):
    grid = TorusGrid(cfg.dim, cfg.n)
    game = GameSpec(
        n_players=int(cfg.game.get("players", 2)), family=fam, grid=grid,
        model=_build_model(cfg, fam.m), coupling=_build_coupling(cfg),
        mc_budget=int(cfg.game.get("budget", 4000)), seed=cfg.seed,
        damping=float(cfg.solver["damping"]),
        tol_outer=float(cfg.game.get("tol_outer", 1e-9)),
        tol_ergodic=float(cfg.solver.get("tol_ergodic", 1e-6)),
        eps=cfg.eps)
    nash = solve_symmetric_nash(game)
    artifacts = []
    for i in range(game.n_players):
        for stem, gf in (("u", nash.u[i]), ("m", nash.m[i]),
                         ("rhs", nash.rhs[i])):
            name = f"{stem}_player{i}.csv"
            gridfunction_to_csv(gf, os.path.join(out, name), value_name=stem)
            artifacts.append(name)
    summary = {"players": game.n_players,
               "lambda": [float(v) for v in nash.lam],
               "symmetry": nash.symmetry, "iterations": nash.iterations,
               "residuals": nash.residuals}
    write_json(summary, os.path.join(out, "nash.json"))
    artifacts.append("nash.json")
    checks = {"symmetry": dict(nash.symmetry,
                               ok=bool(nash.symmetry["max_dlam"] <= 1e-8))}
    for i in range(game.n_players):
        checks[f"player{i}"] = _mass_positivity(nash.m[i].values)
    return summary, artifacts, checks


def _solved_policy_fields(cfg, fam, grid):
    from .mfgcore import Discretization
    model = _build_model(cfg, fam.m)
    coupling = _build_coupling(cfg)
    sol = solve_ergodic_mfg(
        model, coupling, fam, grid, rho_schedule=_rho_schedule(cfg),
        tol_ergodic=float(cfg.solver.get("tol_ergodic", 1e-6)),
        damping=float(cfg.solver["damping"]), eps=cfg.eps)
    disc = Discretization(model, fam, grid, eps=cfg.eps)
    g = disc.drift_of(sol.u.values)
    dcu = horizontal_gradient(grid, fam, sol.u)
    cost = model.cost_at_optimum(disc.points, dcu) + coupling(sol.m).values
    return model, coupling, sol, g, cost


def _task_simulate(cfg, fam, out):
    grid = TorusGrid(cfg.dim, cfg.n)
    model, coupling, sol, g, cost = _solved_policy_fields(cfg, fam, grid)
    sim = cfg.simulate
    dt = float(sim.get("dt", min(0.01, grid.h)))
    ens = simulate_dynamics(
        fam, g, grid, horizon=float(sim.get("horizon", 50.0)), dt=dt,
        n_paths=int(sim.get("paths", 10_000)), seed=cfg.seed,
        cost_field=cost)
    j_mean, j_se = ens.cost_average()
    gap = abs(j_mean - sol.lam)
    thr = 3.0 * j_se + float(sim.get("allowance", 1.0)) * (grid.h + dt)
    gridfunction_to_csv(ens.occupation(), os.path.join(out, "occupation.csv"),
                        value_name="density")
    gridfunction_to_csv(ens.occupation(tail=True),
                        os.path.join(out, "occupation_tail.csv"),
                        value_name="density")
    summary = {"J_mean": j_mean, "J_se": j_se, "lambda": sol.lam,
               "gap": gap, "threshold": thr, "dt": dt,
               "paths": ens.n_paths, "steps": ens.n_steps}
    write_json(summary, os.path.join(out, "ensemble.json"))
    checks = {
        "value_vs_cost": {"gap": gap, "threshold": thr,
                          "ok": bool(gap <= thr)},
        "count_invariant": {
            "ok": bool(int(ens.counts.sum())
                       == ens.n_steps * ens.n_paths)},
    }
    return summary, ["occupation.csv", "occupation_tail.csv",
                     "ensemble.json"], checks


def _task_verify(cfg, fam, out):
    grid = TorusGrid(cfg.dim, cfg.n)
    model = _build_model(cfg, fam.m)
    coupling = _build_coupling(cfg)
    sol = solve_ergodic_mfg(
        model, coupling, fam, grid, rho_schedule=_rho_schedule(cfg),
        tol_ergodic=float(cfg.solver.get("tol_ergodic", 1e-6)),
        damping=float(cfg.solver["damping"]), eps=cfg.eps)
    sim = cfg.simulate
    rep = verify_equilibrium(
        sol, model, fam, grid, coupling=coupling,
        n_paths=int(sim.get("paths", 10_000)),
        horizon=float(sim.get("horizon", 50.0)),
        dt=sim.get("dt"), seed=cfg.seed,
        allowance=float(sim.get("allowance", 1.0)))
    write_json(rep, os.path.join(out, "verify.json"))
    checks = {
        "value_vs_cost": {"max_gap": rep["max_gap"],
                          "ok": bool(rep["all_value_ok"])},
        "no_profitable_deviation": {
            "max_gap": rep["max_deviation_gap"],
            "ok": bool(rep["all_deviation_ok"])},
        "statistics": {"inconclusive": bool(rep["inconclusive"])},
    }
    return rep, ["verify.json"], checks


_TASK_FN = {
    "solve-mfg": _task_solve_mfg,
    "solve-hjb": _task_solve_hjb,
    "solve-fp": _task_solve_fp,
    "ccdist": _task_ccdist,
    "ergodic-diagnostics": _task_diagnostics,
    "nplayer": _task_nplayer,
    "simulate": _task_simulate,
    "verify": _task_verify,
}


def _versions() -> dict:
    import scipy
    out = {"python": sys.version.split()[0], "numpy": np.__version__,
           "scipy": scipy.__version__}
    try:
        from importlib.metadata import version
        out["submfg"] = version("submfg")
    except Exception:
        out["submfg"] = "unknown"
    return out


def run(cfg: RunConfig) -> int:
    """Execute the task, write artifacts and the manifest, return 0."""
    out = ensure_dir(cfg.out_dir)
    probe = os.path.join(out, ".write_probe")
    try:
        with open(probe, "w"):
            pass
        os.remove(probe)
    except OSError as err:
        raise ConfigError(f"output directory not writable: {err}") from None
    resolved = json.dumps(_config_fingerprint(cfg), sort_keys=True)
    t0 = time.perf_counter()
    fam = family_by_name(cfg.family, cfg.dim if cfg.family == "euclidean"
                         else None)
    with warnings.catch_warnings():
        if cfg.quiet:
            warnings.simplefilter("ignore")
        summary, artifacts, checks = _TASK_FN[cfg.task](cfg, fam, out)
    wall = time.perf_counter() - t0
    manifest = {
        "task": cfg.task,
        "seed": cfg.seed,
        "config_sha256": hashlib.sha256(resolved.encode()).hexdigest(),
        "config": json.loads(resolved),
        "versions": _versions(),
        "artifacts": sorted(artifacts),
        "checks": checks,
        "all_checks_ok": bool(all(
            c.get("ok", True) for c in checks.values()
            if isinstance(c, dict))),
        "volatile": {"wall_time_s": wall},
    }
    write_json(manifest, os.path.join(out, "manifest.json"))
    if not cfg.quiet:
        print(f"{cfg.task}: wrote {len(artifacts) + 1} artifacts to {out} "
              f"({wall:.1f}s)")
        bad = [k for k, c in checks.items()
               if isinstance(c, dict) and not c.get("ok", True)]
        if bad:
            print(f"failed checks: {', '.join(bad)}")
    return 0


def _config_fingerprint(cfg: RunConfig) -> dict:
    return {
        "task": cfg.task, "family": cfg.family, "dim": cfg.dim, "n": cfg.n,
        "scheme": cfg.scheme, "eps": cfg.eps, "seed": cfg.seed,
        "model": cfg.model, "coupling": cfg.coupling, "solver": cfg.solver,
        "simulate": cfg.simulate, "game": cfg.game,
        "geometry": cfg.geometry, "diagnostics": cfg.diagnostics,
    }


def _apply_overrides(raw: dict, args) -> dict:
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["out"] = args.out
    if args.quiet:
        raw["quiet"] = True
    if args.family is not None:
        raw.setdefault("family", {})
        if isinstance(raw["family"], str):
            raw["family"] = {"name": raw["family"]}
        raw["family"]["name"] = args.family
    if args.dim is not None:
        raw.setdefault("family", {})
        if isinstance(raw["family"], str):
            raw["family"] = {"name": raw["family"]}
        raw["family"]["dim"] = args.dim
    if args.n is not None:
        raw.setdefault("grid", {})["n"] = args.n
    if args.scheme is not None:
        raw.setdefault("grid", {})["scheme"] = args.scheme
    if args.model is not None:
        raw.setdefault("model", {})["kind"] = args.model
    if args.coupling is not None:
        raw.setdefault("coupling", {})["kind"] = args.coupling
    if args.damping is not None:
        raw.setdefault("solver", {})["damping"] = args.damping
    if args.tol is not None:
        raw.setdefault("solver", {})["tol_ergodic"] = args.tol
        raw["solver"]["tol"] = args.tol
    if args.rho0 is not None:
        raw.setdefault("solver", {})["rho0"] = args.rho0
    if args.rho_steps is not None:
        raw.setdefault("solver", {})["rho_steps"] = args.rho_steps
    if args.players is not None:
        raw.setdefault("game", {})["players"] = args.players
    if args.paths is not None:
        raw.setdefault("simulate", {})["paths"] = args.paths
    if args.horizon is not None:
        raw.setdefault("simulate", {})["horizon"] = args.horizon
    if args.dt is not None:
        raw.setdefault("simulate", {})["dt"] = args.dt
    return raw


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="submfg",
        description="run one configured task and write its artifacts")
    p.add_argument("--config", required=True, help="TOML run configuration")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--seed", type=int, help="seed override")
    p.add_argument("--quiet", action="store_true", help="suppress progress")
    p.add_argument("--family", help="vector field family override")
    p.add_argument("--dim", type=int, help="state dimension override")
    p.add_argument("--n", type=int, help="grid nodes per axis override")
    p.add_argument("--scheme", help="discretization scheme override")
    p.add_argument("--model", help="control model kind override")
    p.add_argument("--coupling", help="coupling kind override")
    p.add_argument("--damping", type=float, help="damping override")
    p.add_argument("--tol", type=float, help="solver tolerance override")
    p.add_argument("--rho0", type=float, help="first discount override")
    p.add_argument("--rho-steps", dest="rho_steps", type=int,
                   help="continuation length override")
    p.add_argument("--N", dest="players", type=int,
                   help="player count override")
    p.add_argument("--paths", type=int, help="Monte Carlo paths override")
    p.add_argument("--T", dest="horizon", type=float,
                   help="simulation horizon override")
    p.add_argument("--dt", type=float, help="simulation step override")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        raw = load_config(args.config)
    except (OSError, tomllib.TOMLDecodeError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    try:
        cfg = validate_config(_apply_overrides(raw, args))
        return run(cfg)
    except ValueError as err:
        # ConfigError and any value check a task re-raises on bad inputs
        print(f"config error: {err}", file=sys.stderr)
        return 1
    except SolverError as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
