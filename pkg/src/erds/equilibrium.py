"""Constrained entropy maximisers.

Closed forms cover the square-root model on the unit torus and in a
confining potential. :func:`general_max_entropy` solves the general case by
damped Newton iteration on the Lagrange multipliers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .entropy import EntropyModel, _expand, entropy_density, mobility_scalar
from .errors import ConfigError, DomainError, NumericalError
from .grid import Grid


@dataclass
class EquilibriumState:
    """Equilibrium ``(u*, e*)`` and its multipliers.

    Attributes:
        u_star: Shape ``(I,)`` for homogeneous equilibria or ``(I, ...)``.
        e_star: Scalar or grid array.
        C_tilde: ``u*_i / w_i(e*)``, one per species.
        Sigma_u: Multiplier of the conserved quantities (in the complement
            of the stoichiometric subspace).
        Sigma_e: Energy multiplier.
        C_n, C_p: Bipolar constants when applicable.
    """

    u_star: np.ndarray
    e_star: object
    C_tilde: np.ndarray
    Sigma_u: np.ndarray
    Sigma_e: float
    C_n: Optional[float] = None
    C_p: Optional[float] = None
    iterations: int = 0
    history: list = field(default_factory=list)


def bipolar_constants(q: float):
    """Roots ``C_n C_p = 1`` and ``C_n - C_p = q`` computed without cancellation."""
    root = np.hypot(q, 2.0)
    if q >= 0:
        cn = 0.5 * (q + root)
        cp = 1.0 / cn
    else:
        cp = 0.5 * (-q + root)
        cn = 1.0 / cp
    return float(cn), float(cp)


def solve_torus_equilibrium(C0: float, E0: float, c: float) -> EquilibriumState:
    """Homogeneous equilibrium on the unit torus.

    Args:
        C0: Conserved charge ``int n - p``.
        E0: Total energy ``int e``.
        c: Heat weight.
    """
    if not np.isfinite(C0) or not np.isfinite(E0):
        raise DomainError("constraint values must be finite")
    if E0 <= 0:
        raise DomainError("total energy must be positive")
    if c < 0:
        raise DomainError("heat weight must be non-negative")
    es = float(E0)
    cn, cp = bipolar_constants(C0 / np.sqrt(es))
    rs = np.sqrt(es)
    sigma_e = (cn + cp + c) / (2.0 * rs)
    return EquilibriumState(
        u_star=np.array([cn * rs, cp * rs]), e_star=es, C_tilde=np.array([cn, cp]),
        Sigma_u=np.array([-np.log(cn), -np.log(cp)]), Sigma_e=sigma_e, C_n=cn, C_p=cp)


def normalize_potential(grid: Grid, V, tail_tol: float = 1e-6):
    """Shift ``V`` so that ``int exp(-2V) = 1`` on the grid.

    Raises:
        ConfigError: If more than ``tail_tol`` of the mass sits in the
            outermost layer of cells (the box truncates a non-confining
            potential).
    """
    V = np.asarray(V, dtype=float)
    if V.shape != grid.shape or not np.all(np.isfinite(V)):
        raise ConfigError("potential must be finite on every cell")
    vmin = V.min()
    dens = np.exp(-2.0 * (V - vmin))
    mass = grid.integrate(dens)
    dens = dens / mass
    if not grid.periodic:
        edge = np.zeros(grid.shape, dtype=bool)
        for a in range(grid.dim):
            sl = [slice(None)] * grid.dim
            sl[a] = 0
            edge[tuple(sl)] = True
            sl[a] = -1
            edge[tuple(sl)] = True
        tail = grid.integrate(np.where(edge, dens, 0.0))
        if tail > tail_tol:
            raise ConfigError(f"potential is not confining on the box: boundary mass {tail:.3g}")
    return V - vmin + 0.5 * np.log(mass)


def confined_equilibrium(grid: Grid, V, C0: float, c: float) -> EquilibriumState:
    """Equilibrium ``e* = exp(-2V)``, ``n* = C_n e*``, ``p* = C_p e*``.

    ``V`` must already be normalised (see :func:`normalize_potential`).
    """
    V = np.asarray(V, dtype=float)
    es = np.exp(-2.0 * V)
    mass = grid.integrate(es)
    if abs(mass - 1.0) > 1e-8:
        raise DomainError("potential is not normalised")
    cn, cp = bipolar_constants(C0)
    return EquilibriumState(
        u_star=np.array([cn * es, cp * es]), e_star=es, C_tilde=np.array([cn, cp]),
        Sigma_u=np.array([-np.log(cn), -np.log(cp)]), Sigma_e=0.5 * (cn + cp + c), C_n=cn, C_p=cp)


# ----------------------------------------------------------------------
# general solver
# ----------------------------------------------------------------------

def _energy_terms(model: EntropyModel, ct, x, shape):
    """Coefficients ``A_k`` and exponents ``q_k <= 0`` with
    ``dS/de = sum_k A_k e^{q_k}`` on the maximiser."""
    terms = []
    lc = model.log_coef(x)
    for i in range(model.n_species):
        b = model.b[i]
        if b == 0:
            continue
        a = ct[i] * b * np.exp(np.broadcast_to(lc[i], shape))
        terms.append((a, b - 1.0))
    if model.kind == "example2" and model.c > 0:
        s = model.sigma
        if s == 0:
            terms.append((np.full(shape, model.c), -1.0))
        else:
            g = np.broadcast_to(np.asarray(model.gamma_at(x), dtype=float) ** (1.0 - s), shape)
            terms.append((model.c * s * g, s - 1.0))
    if any(q > 0 for _, q in terms):
        raise DomainError("energy exponents above one break the concavity of the entropy")
    return terms


def _solve_energy(terms, sigma_e: float, t0):
    """Solve ``sum A_k exp(q_k t) = sigma_e`` for ``t = log e`` pointwise."""
    if sigma_e <= 0:
        raise NumericalError("energy multiplier must be positive")
    if all(q == 0 for _, q in terms):
        raise NumericalError("energy equation is degenerate")
    t = np.array(t0, dtype=float, copy=True)
    for _ in range(200):
        g = -sigma_e
        dg = 0.0
        for a, q in terms:
            v = a * np.exp(q * t)
            g = g + v
            dg = dg + q * v
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.clip(np.where(dg < 0, -g / dg, 1.0), -50.0, 50.0)
        t = t + step
        if np.all(np.abs(step) < 1e-15 * np.maximum(1.0, np.abs(t))):
            break
        if np.max(np.abs(g)) <= 4e-16 * sigma_e and np.max(np.abs(step)) < 1e-13:
            break
    return t


def general_max_entropy(model: EntropyModel, network, cons0, E0: float, grid: Grid,
                        max_iter: int = 100, tol: float = 1e-12, start=None) -> EquilibriumState:
    """Maximise ``int S`` subject to ``int P u = cons0`` and ``int e = E0``.

    Newton's method on the dual (convex) problem in the multipliers; the
    step is halved while the dual objective does not decrease and the
    constraint residual does not shrink.

    Args:
        model: Entropy model.
        network: :class:`~erds.reaction_network.ReactionNetwork`.
        cons0: Target of the projected integral ``int P u`` (a vector in the
            complement of the stoichiometric subspace).
        E0: Total energy.
        grid: Spatial grid.
        start: Optional ``(Sigma_u, Sigma_e)`` to start from instead of the
            homogeneous guess.

    Returns:
        :class:`EquilibriumState` with ``iterations`` set.

    Raises:
        NumericalError: If Newton does not converge in ``max_iter`` steps;
            the best iterate is attached.
    """
    if E0 <= 0:
        raise DomainError("total energy must be positive")
    q = network.complement_basis  # (I, m)
    m = q.shape[1]
    cons0 = np.asarray(cons0, dtype=float)
    if np.linalg.norm(cons0 - network.projection @ cons0) > 1e-10 * max(1.0, np.linalg.norm(cons0)):
        raise DomainError("cons0 must lie in the range of the projection")
    target = np.concatenate([q.T @ cons0, [E0]])
    x = grid.centers if model.x_dependent else None
    shape = grid.shape
    n = model.n_species
    vol = grid.volume

    def evaluate(lam, t0):
        L = q @ lam[:m]
        ct = np.exp(-L)
        t = _solve_energy(_energy_terms(model, ct, x, shape), lam[m], t0)
        e = np.exp(t)
        lw = model.log_w(e, x)
        u = np.exp(lw - _expand(L, 1 + e.ndim))
        cons = np.concatenate([q.T @ grid.integrate(u), [grid.integrate(e)]])
        # dual objective: int [S - L.u - sigma_e e] + lam . target
        dual = grid.integrate(entropy_density(model, u, e, x) - np.tensordot(L, u, axes=(0, 0))
                              - lam[m] * e) + lam @ target
        return u, e, t, ct, cons - target, dual

    e0 = E0 / vol
    t0 = np.full(shape, np.log(e0))
    terms = _energy_terms(model, np.ones(n), x, shape)
    sigma_e0 = float(np.mean(sum(a * np.exp(qq * np.log(e0)) for a, qq in terms)))
    lam = np.concatenate([np.zeros(m), [sigma_e0]])
    if start is not None:
        lam = np.concatenate([q.T @ np.asarray(start[0], dtype=float), [float(start[1])]])
    u, e, t, ct, res, dual = evaluate(lam, t0)
    scale = np.maximum(np.abs(target), 1.0)
    history = []
    for it in range(1, max_iter + 1):
        rel = float(np.max(np.abs(res) / scale))
        history.append(rel)
        if rel <= tol:
            return _package(model, network, u, e, ct, q @ lam[:m], lam[m], it - 1, history, grid)
        mob = mobility_scalar(model, u, e, x)
        b = _expand(np.asarray(model.b), u.ndim)
        ub = u * b
        # Jacobian of the constraints with respect to (L, sigma_e)
        juu = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                juu[i, j] = -grid.integrate((u[i] if i == j else 0.0) + ub[i] * ub[j] / mob)
        jue = np.array([-grid.integrate(ub[i] * e / mob) for i in range(n)])
        jee = -grid.integrate(e * e / mob)
        jac = np.zeros((m + 1, m + 1))
        jac[:m, :m] = q.T @ juu @ q
        jac[:m, m] = q.T @ jue
        jac[m, :m] = q.T @ jue
        jac[m, m] = jee
        step = -np.linalg.solve(jac, res)
        alpha = 1.0
        accepted = False
        for _ in range(30):
            trial = lam + alpha * step
            if trial[m] > 0:
                try:
                    out = evaluate(trial, t)
                except (NumericalError, FloatingPointError):
                    out = None
                if out is not None and np.all(np.isfinite(out[4])):
                    rel_new = float(np.max(np.abs(out[4]) / scale))
                    if out[5] <= dual + 1e-12 * abs(dual) or rel_new < rel:
                        accepted = True
                        break
            alpha *= 0.5
        if not accepted:
            break
        lam = trial
        u, e, t, ct, res, dual = out
    best = _package(model, network, u, e, ct, q @ lam[:m], lam[m], max_iter, history, grid)
    raise NumericalError("maximum-entropy Newton iteration did not converge", best=best)


def _package(model, network, u, e, ct, sig_u, sig_e, it, history, grid):
    eq = EquilibriumState(u_star=u, e_star=e, C_tilde=ct, Sigma_u=sig_u, Sigma_e=float(sig_e),
                          iterations=it, history=history)
    if model.n_species == 2:
        eq.C_n, eq.C_p = float(ct[0]), float(ct[1])
    return eq


def bipolar_cons0(C0: float) -> np.ndarray:
    """Projected conservation target for ``int n - p = C0``."""
    return 0.5 * C0 * np.array([1.0, -1.0])
