"""Finite-volume IMEX time stepping and trajectory recording.

Diffusion (and the confinement drift) is treated by backward Euler with a
prefactorised sparse LU; reactions and the general drift are explicit. A
step that loses positivity is retried as two half steps, up to 20 times.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import diagnostics as diag
from .entropy import (EntropyModel, entropy_gradient, relative_entropy_confined,
                      relative_entropy_general, relative_entropy_torus)
from .equilibrium import EquilibriumState
from .errors import DomainError, NumericalError, StepRejected
from .grid import Grid, StateField, implicit_solver
from .reaction_network import lambda_mean

log = logging.getLogger(__name__)

MAX_HALVINGS = 20
_GAUSS_NODES, _GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(16)
_GAUSS_NODES = 0.5 * (_GAUSS_NODES + 1.0)
_GAUSS_WEIGHTS = 0.5 * _GAUSS_WEIGHTS


@dataclass(frozen=True)
class RateLaw:
    """Recombination rate ``k = k0 / (1 + c_n n + c_p p)``.

    ``k0 = 0`` switches the reaction off (the EEP chain then rejects it).
    """

    k0: float = 1.0
    c_n: float = 0.0
    c_p: float = 0.0

    def __post_init__(self):
        if self.k0 < 0 or self.c_n < 0 or self.c_p < 0:
            raise DomainError("need k0, c_n, c_p >= 0")

    def __call__(self, n, p):
        return self.k0 / (1.0 + self.c_n * n + self.c_p * p)

    def lower_bound(self, n_max: float, p_max: float) -> float:
        return self.k0 / (1.0 + self.c_n * n_max + self.c_p * p_max)


@dataclass
class Scenario:
    """Everything needed to run one simulation.

    Attributes:
        kind: ``"torus"``, ``"confined"`` or ``"general"``.
        grid: Spatial grid (torus for ``"torus"``, box for ``"confined"``).
        initial: Initial :class:`StateField`.
        eq: Equilibrium the relative entropy is measured against.
        c: Heat weight (square-root models).
        kappa: Diffusion multiplier.
        rate: Recombination law (square-root models).
        V: Normalised confining potential on the cells (``"confined"``).
        model, network: Entropy model and reactions (``"general"``).
        dt, t_end, cadence: Step, horizon and recording interval.
        eep: Whether to evaluate the entropy-entropy-production constant.
        constants: Functional constants used by the EEP chain.
    """

    kind: str
    grid: Grid
    initial: StateField
    eq: EquilibriumState
    c: float = 1.0
    kappa: float = 1.0
    rate: RateLaw = field(default_factory=RateLaw)
    V: Optional[np.ndarray] = None
    model: Optional[EntropyModel] = None
    network: object = None
    dt: float = 1e-3
    t_end: float = 1.0
    cadence: float = 1e-2
    eep: bool = True
    constants: object = None
    snapshot_times: tuple = ()

    def __post_init__(self):
        if self.kind not in ("torus", "confined", "general"):
            raise DomainError(f"unknown scenario kind {self.kind!r}")
        if self.kind == "torus" and not self.grid.periodic:
            raise DomainError("torus scenarios need a periodic grid")
        if self.kind == "confined" and (self.V is None or self.grid.periodic):
            raise DomainError("confined scenarios need a box grid and a potential")
        if self.kind == "general" and (self.model is None or self.network is None):
            raise DomainError("general scenarios need an entropy model and a network")
        if self.dt <= 0 or self.t_end < 0 or self.cadence <= 0 or self.kappa <= 0:
            raise DomainError("dt, cadence and kappa must be positive")


def _check_positive(u, e, t=None):
    if not (np.all(u > 0) and np.all(e > 0) and np.all(np.isfinite(u)) and np.all(np.isfinite(e))):
        raise StepRejected("positivity lost", time=t,
                           extrema={"u_min": float(np.min(u)), "e_min": float(np.min(e))})


def step_torus(state: StateField, scen: Scenario, dt: float) -> StateField:
    """One IMEX step of the bipolar system on the torus."""
    n, p, e = state.u[0], state.u[1], state.e
    r = scen.rate(n, p) * (e - n * p)
    n1 = n + dt * r
    p1 = p + dt * r
    _check_positive(np.array([n1, p1]), e)
    solver = implicit_solver(scen.grid, scen.kappa, dt)
    out = solver.solve_many(np.array([n1, p1, e]))
    return StateField(scen.grid, out[:2], out[2])


def step_confined(state: StateField, scen: Scenario, dt: float) -> StateField:
    """One IMEX step with Scharfetter-Gummel drift fluxes for ``2 grad V``."""
    n, p, e = state.u[0], state.u[1], state.e
    rho = np.exp(2.0 * scen.V)
    r = scen.rate(n, p) * (e - rho * n * p)
    n1 = n + dt * r
    p1 = p + dt * r
    _check_positive(np.array([n1, p1]), e)
    solver = implicit_solver(scen.grid, scen.kappa, dt, psi=2.0 * scen.V)
    out = solver.solve_many(np.array([n1, p1, e]))
    return StateField(scen.grid, out[:2], out[2])


def _stack_gradient(model, u, e, x):
    du, de = entropy_gradient(model, u, e, x)
    return np.concatenate([du, de[None]], axis=0)


def _segment_mobility(model: EntropyModel, uL, uR, eL, eR, x):
    """``-int_0^1 D^2 S(x, U_L + t (U_R - U_L)) dt``, shape ``(F, I+1, I+1)``."""
    n = model.n_species
    b = np.asarray(model.b)
    shape = eL.shape
    out = np.zeros(shape + (n + 1, n + 1))
    inv_le = 1.0 / lambda_mean(eL, eR)
    for i in range(n):
        out[..., i, i] = 1.0 / lambda_mean(uL[i], uR[i])
        out[..., i, n] = -b[i] * inv_le
        out[..., n, i] = -b[i] * inv_le
    acc = np.zeros(shape)
    for t, wq in zip(_GAUSS_NODES, _GAUSS_WEIGHTS):
        et = eL + t * (eR - eL)
        ut = uL + t * (uR - uL)
        acc = acc + wq * (-model.shat(et, x, 2)
                          + np.tensordot(b, ut, axes=(0, 0)) / et**2)
    out[..., n, n] = acc
    return out


def general_face_terms(state: StateField, model: EntropyModel, axis: int):
    """Face quantities of the general scheme along ``axis``.

    Returns:
        ``(B, dG_x, dG)``: the averaged mobility inverse, the symmetrised
        x-only increment of ``DS`` and the total increment of ``DS``.
    """
    g = state.grid
    x = g.centers if model.x_dependent else None
    U = np.concatenate([state.u, state.e[None]], axis=0)
    UL, UR = g.face_pair(U, axis)
    n = model.n_species
    if x is None:
        GL = _stack_gradient(model, UL[:n], UL[n], None)
        GR = _stack_gradient(model, UR[:n], UR[n], None)
        dgx = np.zeros_like(GL)
        B = _segment_mobility(model, UL[:n], UR[:n], UL[n], UR[n], None)
    else:
        xL, xR = g.face_pair(x, axis)
        GLL = _stack_gradient(model, UL[:n], UL[n], xL)
        GRR = _stack_gradient(model, UR[:n], UR[n], xR)
        GLR = _stack_gradient(model, UR[:n], UR[n], xL)  # left point, right state
        GRL = _stack_gradient(model, UL[:n], UL[n], xR)
        dgx = 0.5 * (GRR - GLR + GRL - GLL)
        GL, GR = GLL, GRR
        B = 0.5 * (_segment_mobility(model, UL[:n], UR[:n], UL[n], UR[n], xL)
                   + _segment_mobility(model, UL[:n], UR[:n], UL[n], UR[n], xR))
    return B, dgx, GR - GL


def _face_solve(B, rhs):
    # rhs has components first; move them last for batched solves
    r = np.moveaxis(rhs, 0, -1)[..., None]
    try:
        sol = np.linalg.solve(B, r)[..., 0]
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular face mobility") from exc
    return np.moveaxis(sol, -1, 0)


def step_general(state: StateField, scen: Scenario, dt: float) -> StateField:
    """One IMEX step of the general energy-reaction-diffusion system.

    The flux ``kappa M grad(DS)`` is split into ``kappa grad U`` (implicit)
    and a drift (explicit) obtained from an exact discrete chain rule, so
    that equilibria are fixed points and the drift vanishes identically
    for spatially homogeneous models.
    """
    g = scen.grid
    model, net = scen.model, scen.network
    n = model.n_species
    x = g.centers if model.x_dependent else None
    upd = np.zeros((n + 1,) + g.shape)
    for a in range(g.dim):
        B, dgx, _ = general_face_terms(state, model, a)
        drift = _face_solve(B, -dgx / g.h[a])
        upd += scen.kappa * g.divergence(drift, a)
    if net.reactions:
        w = model.w(state.e, x)
        w = np.broadcast_to(w, state.u.shape)
        upd[:n] += net.rhs(state.u, w, net.rates(state.u, state.e))
    u1 = state.u + dt * upd[:n]
    e1 = state.e + dt * upd[n]
    _check_positive(u1, e1)
    solver = implicit_solver(g, scen.kappa, dt)
    out = solver.solve_many(np.concatenate([u1, e1[None]], axis=0))
    return StateField(g, out[:n], out[n])


STEPPERS = {"torus": step_torus, "confined": step_confined, "general": step_general}


def advance(state: StateField, scen: Scenario, dt: float, t: float = 0.0, depth: int = 0):
    """Advance by ``dt``, halving on rejection. Returns ``(state, halvings)``."""
    stepper = STEPPERS[scen.kind]
    try:
        return stepper(state, scen, dt), depth
    except StepRejected as exc:
        if depth >= MAX_HALVINGS:
            raise NumericalError("step rejected after repeated halving", time=t,
                                 extrema=state.extrema(), best=state) from exc
        log.debug("step rejected at t=%g, halving dt=%g", t, dt)
        mid, d1 = advance(state, scen, 0.5 * dt, t, depth + 1)
        end, d2 = advance(mid, scen, 0.5 * dt, t + 0.5 * dt, depth + 1)
        return end, max(d1, d2)


# ----------------------------------------------------------------------
# recording
# ----------------------------------------------------------------------

SERIES_COLUMNS = ("t", "H", "P_total", "P_n", "P_p", "P_e", "P_R", "mass_n", "mass_p",
                  "mass_diff", "energy", "e_min", "e_max", "n_min", "p_min")


def relative_entropy(state: StateField, scen: Scenario) -> float:
    if scen.kind == "torus":
        return relative_entropy_torus(state, scen.eq, scen.c)
    if scen.kind == "confined":
        return relative_entropy_confined(state, scen.eq, scen.c, scen.V)
    x = scen.grid.centers if scen.model.x_dependent else None
    return relative_entropy_general(state, scen.eq, scen.model, x)


def entropy_production(state: StateField, scen: Scenario) -> diag.Production:
    if scen.kind == "torus":
        return diag.entropy_production_torus(state, scen.eq, scen.c, scen.kappa, scen.rate)
    if scen.kind == "confined":
        return diag.entropy_production_confined(state, scen.eq, scen.c, scen.V, scen.kappa, scen.rate)
    return diag.entropy_production_general(state, scen.model, scen.network, scen.kappa)


def record(state: StateField, scen: Scenario, t: float) -> dict:
    g = state.grid
    prod = entropy_production(state, scen)
    row = {"t": t, "H": relative_entropy(state, scen), "P_total": prod.total, "P_n": prod.n,
           "P_p": prod.p, "P_e": prod.e, "P_R": prod.reaction,
           "energy": float(g.integrate(state.e)),
           "e_min": float(state.e.min()), "e_max": float(state.e.max())}
    if state.u.shape[0] >= 2:
        mn, mp = float(g.integrate(state.u[0])), float(g.integrate(state.u[1]))
        row.update(mass_n=mn, mass_p=mp, mass_diff=float(g.integrate(state.u[0] - state.u[1])),
                   n_min=float(state.u[0].min()), p_min=float(state.u[1].min()))
    else:
        row.update(mass_n=float(g.integrate(state.u[0])), mass_p=np.nan, mass_diff=np.nan,
                   n_min=float(state.u[0].min()), p_min=np.nan)
    return row


@dataclass
class Trajectory:
    """Recorded series, snapshots and the final state of a run."""

    series: dict
    final: StateField
    snapshots: dict
    K_series: np.ndarray
    halvings: int = 0

    def column(self, name: str) -> np.ndarray:
        return self.series[name]


def run(scen: Scenario, progress=None) -> Trajectory:
    """Integrate ``scen`` to ``t_end`` and record diagnostics at the cadence.

    Raises:
        NumericalError: On repeated step rejection, with time and extrema.
    """
    n_steps = int(round(scen.t_end / scen.dt))
    every = max(1, int(round(scen.cadence / scen.dt)))
    state = scen.initial.copy()
    rows = [record(state, scen, 0.0)]
    Ks = [_eep_K(state, scen)]
    snaps = {}
    pending = sorted(scen.snapshot_times)
    if pending and pending[0] <= 0:
        snaps[0.0] = state.copy()
        pending.pop(0)
    worst = 0
    for k in range(1, n_steps + 1):
        t_prev = (k - 1) * scen.dt
        state, depth = advance(state, scen, scen.dt, t_prev)
        worst = max(worst, depth)
        t = k * scen.dt
        if k % every == 0 or k == n_steps:
            rows.append(record(state, scen, t))
            Ks.append(_eep_K(state, scen))
            if progress is not None:
                progress(t)
        while pending and pending[0] <= t + 0.5 * scen.dt:
            snaps[pending.pop(0)] = state.copy()
    series = {c: np.array([r[c] for r in rows], dtype=float) for c in SERIES_COLUMNS}
    return Trajectory(series=series, final=state, snapshots=snaps, K_series=np.array(Ks),
                      halvings=worst)


def _eep_K(state: StateField, scen: Scenario) -> float:
    if not scen.eep or scen.kind == "general" or scen.constants is None:
        return np.nan
    return diag.eep_constant_for_state(state, scen)
