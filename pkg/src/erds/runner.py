"""Scenario construction from a :class:`Config`, execution and report files."""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from .config import Config, emit_config, evaluate_expression, expression_function
from .entropy import EntropyModel
from .equilibrium import (confined_equilibrium, general_max_entropy, normalize_potential,
                          solve_torus_equilibrium)
from .errors import ConfigError, ErdsError
from .grid import Grid, StateField
from .reaction_network import Reaction, ReactionNetwork, constant_rate, read_shockley_hall
from .simulator import SERIES_COLUMNS, RateLaw, Scenario, Trajectory, run

log = logging.getLogger(__name__)

EEP_SLACK = 1.05


def build_grid(cfg: Config) -> Grid:
    n = cfg.grid.n if isinstance(cfg.grid.n, list) else [cfg.grid.n] * cfg.grid.dim
    kind = cfg.grid.kind or ("box" if cfg.scenario.kind == "confined" else "torus")
    return Grid(kind, tuple(n), cfg.grid.half_width)


def _rate_law(cfg: Config) -> RateLaw:
    r = cfg.reaction
    if r.form == "constant":
        return RateLaw(r.k0, 0.0, 0.0)
    return RateLaw(r.k0, r.c_n, r.c_p)


def _network(cfg: Config) -> ReactionNetwork:
    r = cfg.reaction
    if r.form == "constant":
        fn = constant_rate(r.k0, r.energy_exponent)
    else:
        fn = read_shockley_hall(r.k0, r.c_n, r.c_p, r.energy_exponent)
    n_species = len(cfg.entropy.b)
    rx = r.reactions or ([{"alpha": [1, 1], "beta": [0, 0]}] if n_species == 2 else [])
    return ReactionNetwork(n_species, [Reaction(tuple(d["alpha"]), tuple(d["beta"]), fn) for d in rx])


def _model(cfg: Config) -> EntropyModel:
    ent = cfg.entropy
    pots = tuple(expression_function(v) for v in ent.potentials) if ent.potentials else None
    gam = expression_function(ent.gamma) if ent.gamma else None
    return EntropyModel(b=tuple(ent.b), coef=tuple(ent.coef), c=ent.c, sigma=ent.sigma,
                        kind=ent.kind, potentials=pots, gamma=gam)


def _initial(cfg: Config, grid: Grid, weight=None) -> StateField:
    x = grid.centers
    ini = cfg.initial
    exprs = ini.u if (cfg.scenario.kind == "general" and ini.u) else [ini.n, ini.p]
    u = np.array([evaluate_expression(v, x) for v in exprs])
    e = evaluate_expression(ini.e, x)
    if ini.relative_to_equilibrium and weight is not None:
        u = u * weight
        e = e * weight
    if ini.noise > 0:
        rng = np.random.default_rng(cfg.scenario.seed)
        u = u * (1.0 + ini.noise * rng.uniform(-1.0, 1.0, size=u.shape))
        e = e * (1.0 + ini.noise * rng.uniform(-1.0, 1.0, size=e.shape))
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(e))):
        raise ConfigError("initial data is not finite on every cell")
    if np.any(u <= 0) or np.any(e <= 0):
        raise ConfigError("initial data must be strictly positive")
    return StateField(grid, u, e)


def functional_constants(cfg: Config, grid: Grid, weight=None) -> diag.FunctionalConstants:
    d = cfg.diagnostics
    if d.constants == "given":
        return diag.FunctionalConstants(d.C_P, d.C_LS, d.C_S, trial_based=False, source="given")
    est = diag.estimate_functional_constants(grid, weight, seed=cfg.scenario.seed, n_trials=d.trials)
    if d.constants == "gaussian":
        est = diag.gaussian_constants(est.C_S)
    for name in ("C_P", "C_LS", "C_S"):
        if getattr(d, name) > 0:
            setattr(est, name, getattr(d, name))
    return est


def build_scenario(cfg: Config) -> Scenario:
    """Assemble grid, initial data, equilibrium and constants."""
    kind = cfg.scenario.kind
    grid = build_grid(cfg)
    rn = cfg.run
    common = dict(dt=rn.dt, t_end=rn.t_end, cadence=rn.cadence, kappa=rn.kappa,
                  snapshot_times=tuple(rn.snapshots), eep=cfg.diagnostics.eep)
    if kind == "torus":
        init = _initial(cfg, grid)
        eq = solve_torus_equilibrium(float(grid.integrate(init.u[0] - init.u[1])),
                                     float(grid.integrate(init.e)), cfg.entropy.c)
        consts = functional_constants(cfg, grid) if cfg.diagnostics.eep else None
        return Scenario("torus", grid, init, eq, c=cfg.entropy.c, rate=_rate_law(cfg),
                        constants=consts, **common)
    if kind == "confined":
        V = normalize_potential(grid, evaluate_expression(cfg.potential.V, grid.centers))
        es = np.exp(-2.0 * V)
        init = _initial(cfg, grid, weight=es)
        # the weighted equilibrium fixes the total energy to int e* = 1
        E0 = float(grid.integrate(init.e))
        if abs(E0 - 1.0) > 1e-12:
            log.info("confined initial energy %.6g rescaled to 1", E0)
            init = StateField(grid, init.u, init.e / E0)
        eq = confined_equilibrium(grid, V, float(grid.integrate(init.u[0] - init.u[1])), cfg.entropy.c)
        consts = functional_constants(cfg, grid, es) if cfg.diagnostics.eep else None
        return Scenario("confined", grid, init, eq, c=cfg.entropy.c, rate=_rate_law(cfg), V=V,
                        constants=consts, **common)
    model = _model(cfg)
    net = _network(cfg)
    init = _initial(cfg, grid)
    cons0 = net.projection @ grid.integrate(init.u)
    eq = general_max_entropy(model, net, cons0, float(grid.integrate(init.e)), grid)
    common["eep"] = False
    return Scenario("general", grid, init, eq, c=cfg.entropy.c, model=model, network=net, **common)


@dataclass
class RunResult:
    scenario: Scenario
    trajectory: Trajectory
    summary: dict


def summarize(scen: Scenario, traj: Trajectory) -> dict:
    """Post-process a trajectory into the JSON summary."""
    s = traj.series
    flags = []
    Ks = traj.K_series
    K_formula = float(Ks[0]) if np.isfinite(Ks[0]) else None
    K_hat = float(np.nanmax(Ks)) if np.any(np.isfinite(Ks)) else None
    fit = None
    try:
        fit = diag.fit_decay_rate(s["t"], s["H"], K_hat)
    except ErdsError as exc:
        flags.append(f"fit-unavailable: {exc}")
    resid = diag.dissipation_residual(s["t"], s["H"], s["P_total"]).max_relative \
        if s["t"].size >= 3 else None
    eep_ratio = None
    if K_hat is not None:
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.where(s["P_total"] > 0, s["H"] / (K_hat * s["P_total"]), 0.0)
        eep_ratio = float(np.max(ratios))
        if eep_ratio > EEP_SLACK:
            flags.append("eep-violated")
    if scen.constants is not None and scen.constants.trial_based:
        flags.append("trial-based")
    if fit is not None:
        if fit.r_squared < 0.999:
            flags.append("decay-not-exponential")
        if fit.bound_holds is False:
            flags.append("decay-bound-violated")
    if traj.halvings:
        flags.append(f"step-halving-depth-{traj.halvings}")
    g = scen.grid
    fin = traj.final
    final_l1 = {}
    ckp = None
    if scen.kind in ("torus", "confined"):
        es = np.asarray(scen.eq.e_star, dtype=float)
        final_l1 = {"n": float(g.integrate(np.abs(fin.u[0] - scen.eq.u_star[0]))),
                    "p": float(g.integrate(np.abs(fin.u[1] - scen.eq.u_star[1]))),
                    "sqrt_e": float(np.sqrt(g.integrate((np.sqrt(fin.e) - np.sqrt(es)) ** 2)))}
        if scen.kind == "torus":
            ckp = diag.l1_convergence_bound(fin, scen.eq, scen.c).constant
    else:
        us = np.asarray(scen.eq.u_star)
        final_l1 = {f"u{i}": float(g.integrate(np.abs(fin.u[i] - us[i]))) for i in range(fin.u.shape[0])}
        final_l1["sqrt_e"] = float(np.sqrt(g.integrate((np.sqrt(fin.e) - np.sqrt(scen.eq.e_star)) ** 2)))
    consts = None
    if scen.constants is not None:
        consts = {"C_P": scen.constants.C_P, "C_LS": scen.constants.C_LS, "C_S": scen.constants.C_S}
    return {
        "K_formula": K_formula,
        "K_hat": K_hat,
        "k_fit": None if fit is None else fit.k_fit,
        "fit_t_start": None if fit is None else fit.t_start,
        "r_squared": None if fit is None else fit.r_squared,
        "max_dissipation_residual": resid,
        "final_L1": final_l1,
        "constants": consts,
        "flags": flags,
        "eep_worst_ratio": eep_ratio,
        "decay_bound_worst_ratio": None if fit is None else fit.worst_bound_ratio,
        "ckp_prefactor": ckp,
        "equilibrium": {"C_tilde": [float(v) for v in scen.eq.C_tilde],
                        "Sigma_e": float(scen.eq.Sigma_e),
                        "newton_iterations": int(scen.eq.iterations)},
    }


def execute(cfg: Config) -> RunResult:
    scen = build_scenario(cfg)
    traj = run(scen)
    return RunResult(scen, traj, summarize(scen, traj))


def _fmt(v) -> str:
    return format(float(v), ".17g")


def write_outputs(cfg: Config, result: RunResult, root=None) -> Path:
    """Write config, series and summary under ``<directory>/<config hash>``."""
    base = Path(root if root is not None else cfg.output.directory) / cfg.hash()
    base.mkdir(parents=True, exist_ok=True)
    (base / "config.toml").write_text(emit_config(cfg))
    s = result.trajectory.series
    if "csv" in cfg.output.formats:
        with open(base / "series.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SERIES_COLUMNS)
            for k in range(s["t"].size):
                w.writerow([_fmt(s[c][k]) for c in SERIES_COLUMNS])
        for t, st in sorted(result.trajectory.snapshots.items()):
            with open(base / f"snapshot_t{_fmt(t)}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                coords = st.grid.centers.reshape(st.grid.dim, -1)
                names = ["x", "y"][: st.grid.dim] + [f"u{i}" for i in range(st.u.shape[0])] + ["e"]
                w.writerow(names)
                cols = list(coords) + [v.ravel() for v in st.u] + [st.e.ravel()]
                for row in zip(*cols):
                    w.writerow([_fmt(v) for v in row])
    if "json" in cfg.output.formats:
        with open(base / "summary.json", "w") as fh:
            json.dump(result.summary, fh, indent=2)
            fh.write("\n")
    return base


def worker_count() -> int:
    """Pool size from ``ERDS_WORKERS`` (defaults to the CPU count)."""
    raw = os.environ.get("ERDS_WORKERS", "")
    try:
        val = int(raw)
    except ValueError:
        val = os.cpu_count() or 1
    return max(1, val)
