"""Vectorised checkers for the functional inequalities used in the analysis.

Every checker returns an :class:`InequalityCheck` holding both sides, so
that callers can report margins as well as pass/fail. A side-by-side
comparison passes when ``lhs <= rhs + 1e-12 * max(|lhs|, |rhs|)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diagnostics import c0_product
from .entropy import boltzmann_lambda
from .errors import ArgumentError, DomainError, PreconditionError
from .grid import Grid

REL_TOL = 1e-12


@dataclass
class InequalityCheck:
    lhs: np.ndarray
    rhs: np.ndarray
    holds: np.ndarray

    @property
    def all_hold(self) -> bool:
        return bool(np.all(self.holds))

    @property
    def n_violations(self) -> int:
        return int(np.size(self.holds) - np.count_nonzero(self.holds))

    @property
    def worst_ratio(self) -> float:
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(np.asarray(self.rhs) > 0, np.asarray(self.lhs) / self.rhs, 0.0)
        return float(np.max(r)) if np.size(r) else 0.0


def _compare(lhs, rhs) -> InequalityCheck:
    lhs = np.asarray(lhs, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    tol = REL_TOL * np.maximum(np.abs(lhs), np.abs(rhs))
    return InequalityCheck(lhs, rhs, lhs <= rhs + tol)


def _sqrt_minus_one(y):
    # sqrt(y) - 1 without cancellation
    return (y - 1.0) / (np.sqrt(y) + 1.0)


def _log(y):
    d = y - 1.0
    near = np.abs(d) < 0.5
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(near, np.log1p(np.where(near, d, 0.0)), np.log(y))


def _positive(y, name="y"):
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0) or np.any(~np.isfinite(y)):
        raise DomainError(f"{name} must be positive and finite")
    return y


def check_el_in(y) -> InequalityCheck:
    """``ln(y) (y - 1) >= 4 (sqrt(y) - 1)^2``, reported as ``rhs <= lhs``."""
    y = _positive(y)
    return _compare(4.0 * _sqrt_minus_one(y) ** 2, _log(y) * (y - 1.0))


def check_el_in2(y) -> InequalityCheck:
    """``lambda_B(y) <= 2 (1 + |ln y|) (sqrt(y) - 1)^2``."""
    y = _positive(y)
    return _compare(boltzmann_lambda(y), 2.0 * (1.0 + np.abs(_log(y))) * _sqrt_minus_one(y) ** 2)


def pinsker_pointwise(u) -> InequalityCheck:
    """``3 |u - 1|^2 <= (2u + 4) lambda_B(u)`` for ``u >= 0``."""
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise DomainError("u must be non-negative")
    return _compare(3.0 * (u - 1.0) ** 2, (2.0 * u + 4.0) * boltzmann_lambda(u))


def ckp_lower_bound(f, g, cell_volume: float = 1.0) -> InequalityCheck:
    """Csiszar-Kullback-Pinsker type bound
    ``int g lambda(f/g) >= 3 |f - g|_1^2 / (2 |f|_1 + 4 |g|_1)``.

    ``f`` and ``g`` are non-negative arrays; the last axis is summed with
    weight ``cell_volume`` (leading axes are independent samples).
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != g.shape:
        raise ArgumentError("f and g must have the same shape")
    if np.any(f < 0) or np.any(g < 0):
        raise DomainError("densities must be non-negative")
    with np.errstate(divide="ignore", invalid="ignore"):
        pos = (f > 0) & (g > 0)
        dens = np.where(pos, f * (np.log(np.where(pos, f, 1.0)) - np.log(np.where(pos, g, 1.0))), 0.0) - f + g
        dens = np.where((f > 0) & (g == 0), np.inf, dens)
    lhs = np.sum(dens, axis=-1) * cell_volume
    l1 = np.sum(np.abs(f - g), axis=-1) * cell_volume
    denom = (2.0 * np.sum(f, axis=-1) + 4.0 * np.sum(g, axis=-1)) * cell_volume
    with np.errstate(divide="ignore", invalid="ignore"):
        rhs = np.where(denom > 0, 3.0 * l1**2 / denom, 0.0)
    return _compare(rhs, lhs)


def aux1_bound(n_bar, p_bar, n_star, p_star) -> InequalityCheck:
    """``n* lambda(n_bar/n*) + p* lambda(p_bar/p*) <= C0 (sqrt(n_bar p_bar/(n* p*)) - 1)^2``.

    Requires ``n_bar - n* = p_bar - p*``.

    Raises:
        PreconditionError: If the conservation constraint is violated.
    """
    nb, pb, ns, ps = (np.asarray(v, dtype=float) for v in (n_bar, p_bar, n_star, p_star))
    for v in (nb, pb, ns, ps):
        _positive(v, "averages")
    scale = np.maximum.reduce([np.abs(nb), np.abs(pb), np.abs(ns), np.abs(ps), np.ones_like(nb)])
    if np.any(np.abs((nb - ns) - (pb - ps)) > 1e-10 * scale):
        raise PreconditionError("averages must satisfy n_bar - n* = p_bar - p*")
    c0 = np.vectorize(c0_product)(nb, pb, ns, ps)
    lhs = ns * boltzmann_lambda(nb / ns) + ps * boltzmann_lambda(pb / ps)
    q = nb * pb / (ns * ps)
    return _compare(lhs, c0 * _sqrt_minus_one(q) ** 2)


def aux2_bound(delta_n, delta_p, n_bar, p_bar, P_n, P_p, C_P, cell_volume: float = 1.0):
    """Average-exchange bound with deviations ``delta = sqrt(u) - int sqrt(u)``.

    ``(R_n D_n sqrt(p_bar) + R_p D_p sqrt(n_bar) - R_n R_p D_n D_p)^2
    <= 2 C_P (n_bar + p_bar) (P_n + P_p)`` where ``D = int delta^2`` and
    ``R_n = (sqrt(n_bar) + int sqrt(n))^{-1}``. The last axis of the deltas is
    spatial; ``n_bar``, ``P_n`` etc. broadcast over leading sample axes.

    Returns:
        ``(check, intermediates)`` where ``intermediates`` holds the
        bounds ``R_n D_n <= sqrt(n_bar)`` and ``R_n^2 D_n <= 1``.
    """
    dn = np.asarray(delta_n, dtype=float)
    dp = np.asarray(delta_p, dtype=float)
    nb, pb = np.asarray(n_bar, dtype=float), np.asarray(p_bar, dtype=float)
    Dn = np.sum(dn * dn, axis=-1) * cell_volume
    Dp = np.sum(dp * dp, axis=-1) * cell_volume
    if np.any(Dn > nb * (1 + 1e-12)) or np.any(Dp > pb * (1 + 1e-12)):
        raise PreconditionError("int delta^2 cannot exceed the average")
    mn = np.sqrt(np.maximum(nb - Dn, 0.0))
    mp = np.sqrt(np.maximum(pb - Dp, 0.0))
    Rn = 1.0 / (np.sqrt(nb) + mn)
    Rp = 1.0 / (np.sqrt(pb) + mp)
    lhs = (Rn * Dn * np.sqrt(pb) + Rp * Dp * np.sqrt(nb) - Rn * Rp * Dn * Dp) ** 2
    rhs = 2.0 * C_P * (nb + pb) * (np.asarray(P_n) + np.asarray(P_p))
    inter = {"RnDn": _compare(Rn * Dn, np.sqrt(nb)), "RpDp": _compare(Rp * Dp, np.sqrt(pb)),
             "Rn2Dn": _compare(Rn**2 * Dn, np.ones_like(Dn)),
             "Rp2Dp": _compare(Rp**2 * Dp, np.ones_like(Dp))}
    return _compare(lhs, rhs), inter


def aux2_from_fields(grid: Grid, n, p, C_P: float, e=None, e_star: float = 1.0):
    """Evaluate :func:`aux2_bound` for density fields on a torus grid.

    ``P_n`` uses the square-root Dirichlet form
    ``2 int |grad sqrt n|^2 + 2 int |grad sqrt(n e*/e)|^2 e/e*``; with ``e``
    omitted both terms coincide.
    """
    n = np.asarray(n, dtype=float)
    p = np.asarray(p, dtype=float)
    sn, sp_ = np.sqrt(n), np.sqrt(p)
    dn = sn - grid.mean(sn)[..., None] if n.ndim > grid.dim else sn - grid.mean(sn)
    dp = sp_ - grid.mean(sp_)[..., None] if p.ndim > grid.dim else sp_ - grid.mean(sp_)

    def production(f):
        first = 2.0 * grid.dirichlet(np.sqrt(f))
        if e is None:
            return 2.0 * first
        ratio = np.sqrt(f * e_star / e)
        return first + 2.0 * grid.dirichlet(ratio, e / e_star)

    Pn, Pp = production(n), production(p)
    nb, pb = grid.integrate(n), grid.integrate(p)
    return aux2_bound(dn, dp, nb, pb, Pn, Pp, C_P, grid.cell_volume)


def check_sobolev(grid: Grid, f, C: float, weight=None) -> InequalityCheck:
    """``|f|_{L^4}^2 <= C |grad f|^2 + |f|_{L^2}^2`` (weighted if ``weight``)."""
    nu = np.ones(grid.shape) if weight is None else np.asarray(weight, dtype=float)
    l4 = float(grid.integrate(nu * f**4)) ** 0.5
    l2 = float(grid.integrate(nu * f * f))
    return _compare(l4, C * float(grid.dirichlet(f, nu)) + l2)


def check_log_sobolev(grid: Grid, f, C: float, weight=None) -> InequalityCheck:
    """``int f ln(f / |f|_1) <= C int |grad sqrt f|^2`` (weighted if ``weight``)."""
    f = np.asarray(f, dtype=float)
    if np.any(f < 0):
        raise DomainError("f must be non-negative")
    nu = np.ones(grid.shape) if weight is None else np.asarray(weight, dtype=float)
    mass = float(grid.integrate(nu * f))
    with np.errstate(divide="ignore", invalid="ignore"):
        dens = np.where(f > 0, f * (np.log(np.where(f > 0, f, 1.0)) - np.log(mass)), 0.0)
    return _compare(float(grid.integrate(nu * dens)), C * float(grid.dirichlet(np.sqrt(f), nu)))


# ----------------------------------------------------------------------
# randomized oracle suite
# ----------------------------------------------------------------------

@dataclass
class OracleResult:
    name: str
    samples: int
    violations: int
    worst_ratio: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.violations == 0


def _scalar_samples(rng, samples):
    k = samples // 4
    y = np.exp(rng.uniform(np.log(1e-6), np.log(1e6), samples - k - 2))
    near = 1.0 + rng.normal(size=k) * np.exp(rng.uniform(np.log(1e-9), np.log(1e-1), k))
    return np.concatenate([y, near, [1.0, 0.25]])


def _random_fields(rng, samples, cells, grid):
    x = grid.centers[0]
    amp = np.exp(rng.uniform(-4.0, 1.5, (samples, 1)))
    modes = sum(rng.normal(size=(samples, 1)) * np.cos(2 * np.pi * k * x + rng.uniform(0, 2 * np.pi, (samples, 1))) / k
                for k in range(1, 6))
    rough = rng.normal(size=(samples, cells)) * rng.uniform(0.0, 1.0, (samples, 1))
    mix = rng.uniform(0.0, 1.0, (samples, 1))
    return np.exp(amp * (mix * modes + (1 - mix) * rough)) * np.exp(rng.uniform(-3.0, 3.0, (samples, 1)))


def run_oracle_suite(samples: int = 100_000, seed: int = 0) -> list:
    """Check every elementary inequality on ``samples`` random valid inputs."""
    import time

    from .diagnostics import poincare_constant

    rng = np.random.default_rng(seed)
    out = []

    def timed(name, fn):
        t0 = time.perf_counter()
        chk = fn()
        out.append(OracleResult(name, samples, chk.n_violations, chk.worst_ratio, time.perf_counter() - t0))

    y = _scalar_samples(rng, samples)
    timed("log-sqrt", lambda: check_el_in(y))
    timed("lambda-sqrt", lambda: check_el_in2(y))
    u = np.concatenate([[0.0], y[:-1]])
    timed("pinsker", lambda: pinsker_pointwise(u))

    def ckp():
        cells = 16
        f = np.exp(rng.normal(size=(samples, cells)) * rng.uniform(0, 3, (samples, 1)))
        g = np.exp(rng.normal(size=(samples, cells)) * rng.uniform(0, 3, (samples, 1)))
        f = np.where(rng.uniform(size=f.shape) < 0.05, 0.0, f)
        return ckp_lower_bound(f, g, 1.0 / cells)

    timed("ckp", ckp)

    def aux1():
        ns = np.exp(rng.uniform(-5, 5, samples))
        ps = np.exp(rng.uniform(-5, 5, samples))
        lo = -np.minimum(ns, ps)
        d = lo + (np.exp(rng.uniform(-6, 6, samples)) - lo) * rng.uniform(0.0, 1.0, samples) ** 3
        d = np.maximum(d, lo * (1 - 1e-9))
        return aux1_bound(ns + d, ps + d, ns, ps)

    timed("aux1", aux1)

    def aux2():
        cells = 32
        grid = Grid("torus", (cells,))
        cp, _ = poincare_constant(grid)
        n = _random_fields(rng, samples, cells, grid)
        p = _random_fields(rng, samples, cells, grid)
        return aux2_from_fields(grid, n, p, cp)[0]

    timed("aux2", aux2)
    return out


def sobolev_constant_needed(grid: Grid, f, weight=None) -> float:
    """Smallest ``C`` for which :func:`check_sobolev` holds for ``f`` (0 for constants)."""
    nu = np.ones(grid.shape) if weight is None else np.asarray(weight, dtype=float)
    l4 = float(grid.integrate(nu * f**4)) ** 0.5
    l2 = float(grid.integrate(nu * f * f))
    den = float(grid.dirichlet(f, nu))
    return max(l4 - l2, 0.0) / den if den > 0 else 0.0
