"""Entropy models, their derivatives, mobilities and relative entropies.

Two model families are provided.

``example2`` (default):
    ``S(x, u, e) = s(x, e) - sum_i [lambda_B(u_i) - u_i log w_i(x, e)]``
    with ``w_i = C_i exp(-V_i(x)) e^{b_i}`` and
    ``s = c e^sigma gamma(x)^(1 - sigma)`` (``sigma = 0`` selects
    ``s = c log e``).

``example1``:
    ``S(u, e) = sum_i [c_i u_i log e - u*_i lambda_B(u_i / u*_i)]``
    where ``c_i`` is stored in ``b`` and ``u*_i`` in ``coef``.

Fields have shape ``(I, ...)`` for densities and ``(...)`` for the energy.
Spatial dependence enters through ``x``, an array of coordinates of shape
``(d, ...)`` (or ``None`` for x-independent models).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ArgumentError, DegenerateMobilityError, DomainError, NumericalError

_LAMBDA_FLOOR = 1e-12
_LOG_FLOOR = 1e-300


def boltzmann_lambda(nu):
    """``lambda_B(nu) = nu log nu - nu + 1`` for ``nu >= 0``.

    Accurate near ``nu = 1`` (series) and continuous at ``nu = 0``.
    """
    nu = np.asarray(nu, dtype=float)
    if np.any(nu < 0) or np.any(np.isnan(nu)):
        raise DomainError("lambda_B requires non-negative arguments")
    d = nu - 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        safe = np.where(nu > _LAMBDA_FLOOR, nu, 1.0)
        direct = safe * np.log(safe) - safe + 1.0
        mid = safe * np.log1p(np.where(np.abs(d) < 0.5, d, 0.0)) - d
    # alternating series sum_{k>=2} (-1)^k d^k / (k (k - 1))
    series = np.zeros_like(d)
    dk = d * d
    for k in range(2, 14):
        series = series + (-1) ** k * dk / (k * (k - 1))
        dk = dk * d
    out = np.where(np.abs(d) < 1e-2, series, np.where(np.abs(d) < 0.5, mid, direct))
    out = np.where(nu <= _LAMBDA_FLOOR, 1.0 - nu, out)
    return out[()] if out.ndim == 0 else out


def xlog_ratio(x, y):
    """``x log(x / y)`` with the continuous extension ``0`` at ``x = 0``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = (x > _LOG_FLOOR) & (y > _LOG_FLOOR)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(ok, x * (np.log(np.where(ok, x, 1.0)) - np.log(np.where(ok, y, 1.0))), 0.0)
    return out


def _expand(v, ndim: int):
    v = np.asarray(v, dtype=float)
    return v.reshape(v.shape + (1,) * (ndim - v.ndim)) if v.ndim < ndim else v


@dataclass(frozen=True)
class EntropyModel:
    """Parameters of an entropy density.

    Args:
        kind: ``"example2"`` or ``"example1"``.
        b: Exponents ``b_i`` in [0, 1] (``c_i`` for ``example1``).
        coef: Constants ``C_i > 0`` (``u*_i`` for ``example1``).
        c: Heat weight ``c >= 0``.
        sigma: Exponent in [0, 1]; 0 means logarithmic heat entropy.
        potentials: Optional callables ``V_i(x)``, one per species.
        gamma: Optional callable ``gamma(x) >= 0``.
    """

    b: tuple
    coef: tuple
    c: float = 1.0
    sigma: float = 0.5
    kind: str = "example2"
    potentials: Optional[tuple] = None
    gamma: Optional[Callable] = None

    def __post_init__(self):
        b = tuple(float(v) for v in self.b)
        coef = tuple(float(v) for v in self.coef)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "coef", coef)
        if len(b) != len(coef):
            raise ArgumentError("b and coef must have one entry per species")
        if self.kind not in ("example1", "example2"):
            raise ArgumentError(f"unknown entropy kind {self.kind!r}")
        if any(v <= 0 for v in coef):
            raise DomainError("coefficients C_i must be positive")
        if self.kind == "example2":
            if any(v < 0 or v > 1 for v in b):
                raise DomainError("exponents b_i must lie in [0, 1]")
            if not 0.0 <= self.sigma <= 1.0:
                raise DomainError("sigma must lie in [0, 1]")
        if self.c < 0:
            raise DomainError("heat weight c must be non-negative")
        if self.potentials is not None:
            pots = tuple(self.potentials)
            if len(pots) != len(b):
                raise ArgumentError("one potential per species expected")
            object.__setattr__(self, "potentials", pots)

    @property
    def n_species(self) -> int:
        return len(self.b)

    @property
    def x_dependent(self) -> bool:
        return self.potentials is not None or self.gamma is not None

    @property
    def strictly_concave(self) -> bool:
        """Whether ``s'' < 0`` everywhere (so that M > 0 for every state)."""
        return self.kind == "example2" and self.c > 0 and self.sigma < 1

    # x-dependent coefficients -------------------------------------------
    def log_coef(self, x=None) -> np.ndarray:
        """``log C_i - V_i(x)``, shape ``(I,)`` or ``(I, ...)``."""
        base = np.log(np.asarray(self.coef))
        if self.potentials is None or x is None:
            return base
        return np.array([lc - np.asarray(v(x), dtype=float) for lc, v in zip(base, self.potentials)])

    def gamma_at(self, x=None):
        if self.gamma is None or x is None:
            return 1.0
        g = np.asarray(self.gamma(x), dtype=float)
        if np.any(g < 0):
            raise DomainError("gamma must be non-negative")
        return g

    # heat part ----------------------------------------------------------
    def shat(self, e, x=None, order: int = 0):
        """Heat entropy ``s`` or its ``order``-th derivative in ``e``."""
        e = np.asarray(e, dtype=float)
        if self.kind == "example1" or self.c == 0:
            return np.zeros_like(e)
        c, s = self.c, self.sigma
        if s == 0:
            return [c * np.log(e), c / e, -c / e**2][order]
        g = np.asarray(self.gamma_at(x), dtype=float) ** (1.0 - s)
        if order == 0:
            return c * e**s * g
        if order == 1:
            return c * s * e ** (s - 1.0) * g
        return c * s * (s - 1.0) * e ** (s - 2.0) * g

    def log_w(self, e, x=None):
        """``log w_i(x, e)``, shape ``(I, ...)``."""
        e = np.asarray(e, dtype=float)
        lc = _expand(self.log_coef(x), 1 + e.ndim)
        b = _expand(np.asarray(self.b), 1 + e.ndim)
        return lc + b * np.log(e)

    def w(self, e, x=None):
        return np.exp(self.log_w(e, x))


def _check_state(model: EntropyModel, u, e):
    u = np.asarray(u, dtype=float)
    e = np.asarray(e, dtype=float)
    if u.shape[0] != model.n_species:
        raise ArgumentError("density array must have one row per species")
    if np.any(e <= 0) or np.any(~np.isfinite(e)):
        raise DomainError("internal energy must be positive")
    if np.any(u < 0) or np.any(~np.isfinite(u)):
        raise DomainError("densities must be non-negative")
    return u, e


def entropy_density(model: EntropyModel, u, e, x=None):
    """Pointwise entropy density."""
    u, e = _check_state(model, u, e)
    lw = model.log_w(e, x)
    if model.kind == "example1":
        ustar = _expand(np.asarray(model.coef), u.ndim)
        b = _expand(np.asarray(model.b), u.ndim)
        return np.sum(b * u * np.log(e) - ustar * boltzmann_lambda(u / ustar), axis=0)
    ulogw = np.where(u > 0, u * lw, 0.0)
    return model.shat(e, x) - np.sum(boltzmann_lambda(u) - ulogw, axis=0)


def entropy_gradient(model: EntropyModel, u, e, x=None):
    """``(dS/du_i, dS/de)``: ``-log(u_i/w_i)`` and ``s' + sum u_i b_i / e``."""
    u, e = _check_state(model, u, e)
    if np.any(u <= 0):
        raise DomainError("gradient needs strictly positive densities")
    du = -(np.log(u) - model.log_w(e, x))
    b = _expand(np.asarray(model.b), u.ndim)
    de = model.shat(e, x, 1) + np.sum(u * b, axis=0) / e
    return du, de


def entropy_hessian(model: EntropyModel, u, e, x=None):
    """Hessian of the entropy in ``(u_1..u_I, e)``, shape ``(..., I+1, I+1)``.

    The result is negative semidefinite; ``-hessian`` has ``1/u_i`` on the
    density diagonal, ``-b_i/e`` off the diagonal and
    ``-s'' + sum u_i b_i / e^2`` in the energy corner.
    """
    u, e = _check_state(model, u, e)
    if np.any(u <= 0):
        raise DomainError("Hessian needs strictly positive densities")
    n = model.n_species
    shape = e.shape
    out = np.zeros(shape + (n + 1, n + 1))
    b = np.asarray(model.b)
    for i in range(n):
        out[..., i, i] = -1.0 / u[i]
        out[..., i, n] = b[i] / e
        out[..., n, i] = b[i] / e
    bb = _expand(b, u.ndim)
    out[..., n, n] = model.shat(e, x, 2) - np.sum(u * bb, axis=0) / e**2
    return out


def mobility_scalar(model: EntropyModel, u, e, x=None):
    """``M = -e^2 s'' + sum_i u_i (b_i - b_i^2)``; raises if ``M`` vanishes."""
    u, e = _check_state(model, u, e)
    b = _expand(np.asarray(model.b), u.ndim)
    m = -(e**2) * model.shat(e, x, 2) + np.sum(u * (b - b * b), axis=0)
    scale = np.maximum(1.0, e**2 * np.abs(model.shat(e, x, 2)) + np.sum(u, axis=0))
    if np.any(m <= 1e-300 * scale) or np.any(m <= 0):
        raise DegenerateMobilityError("scalar mobility M vanishes")
    return m


def mobility_tensor(model: EntropyModel, u, e, kappa: float = 1.0, x=None, check: bool = True):
    """Mobility ``-kappa (D^2 S)^{-1}`` in closed form, shape ``(..., I+1, I+1)``.

    Raises:
        DegenerateMobilityError: If ``M`` vanishes.
        NumericalError: If ``check`` is set and the product with the Hessian
            misses ``kappa I`` by more than 1e-8 (relative).
    """
    if kappa <= 0:
        raise DomainError("kappa must be positive")
    u, e = _check_state(model, u, e)
    m = mobility_scalar(model, u, e, x)
    n = model.n_species
    b = np.asarray(model.b)
    db = np.array([u[i] * b[i] for i in range(n)])  # delta b
    out = np.zeros(e.shape + (n + 1, n + 1))
    for i in range(n):
        for j in range(n):
            out[..., i, j] = db[i] * db[j] / m + (u[i] if i == j else 0.0)
        out[..., i, n] = e * db[i] / m
        out[..., n, i] = e * db[i] / m
    out[..., n, n] = e**2 / m
    out *= kappa
    if check:
        prod = -np.einsum("...ij,...jk->...ik", entropy_hessian(model, u, e, x), out)
        err = np.abs(prod - kappa * np.eye(n + 1))
        # scale by the size of the factors entering each product entry
        size = np.einsum("...ij,...jk->...ik", np.abs(entropy_hessian(model, u, e, x)), np.abs(out))
        if np.any(err > 1e-8 * np.maximum(size, kappa)):
            raise NumericalError("mobility tensor fails the inverse check")
    return out


def inverse_quadratic_form(model: EntropyModel, u, e, z_u, z_e, x=None):
    """``z . (-D^2 S)^{-1} z`` via the closed form
    ``sum u_i z_i^2 + (sum u_i b_i z_i + e z_e)^2 / M``."""
    u, e = _check_state(model, u, e)
    m = mobility_scalar(model, u, e, x)
    b = _expand(np.asarray(model.b), u.ndim)
    z_u = np.asarray(z_u, dtype=float)
    return np.sum(u * z_u * z_u, axis=0) + (np.sum(u * b * z_u, axis=0) + e * z_e) ** 2 / m


# ----------------------------------------------------------------------
# relative entropies
# ----------------------------------------------------------------------

def _coerce_eq(eq):
    return float(eq.C_n), float(eq.C_p), eq.e_star


def relative_entropy_torus(state, eq, c: float) -> float:
    """Relative entropy of the square-root model on the torus.

    ``int w_n lambda(n/w_n) + w_p lambda(p/w_p)
    + (c + C_n + C_p) / (2 sqrt(e*)) (sqrt(e) - sqrt(e*))^2``
    with ``w = C sqrt(e)``.
    """
    g = state.grid
    cn, cp, es = _coerce_eq(eq)
    es = float(np.mean(es))
    n, p, e = state.u[0], state.u[1], state.e
    if np.any(e <= 0):
        raise DomainError("internal energy must be positive")
    se = np.sqrt(e)
    wn, wp = cn * se, cp * se
    dens = wn * boltzmann_lambda(n / wn) + wp * boltzmann_lambda(p / wp)
    dens = dens + (c + cn + cp) / (2.0 * np.sqrt(es)) * (se - np.sqrt(es)) ** 2
    return float(g.integrate(dens))


def relative_entropy_confined(state, eq, c: float, V) -> float:
    """Relative entropy of the confined model, ``w = C exp(-V) sqrt(e)``.

    The energy part is ``(c + C_n + C_p)/2 int (sqrt(e) - sqrt(e*))^2``.
    """
    g = state.grid
    cn, cp, es = _coerce_eq(eq)
    n, p, e = state.u[0], state.u[1], state.e
    if np.any(e <= 0):
        raise DomainError("internal energy must be positive")
    se = np.sqrt(e)
    ev = np.exp(-np.asarray(V, dtype=float))
    wn, wp = cn * ev * se, cp * ev * se
    dens = wn * boltzmann_lambda(n / wn) + wp * boltzmann_lambda(p / wp)
    dens = dens + 0.5 * (c + cn + cp) * (se - np.sqrt(es)) ** 2
    return float(g.integrate(dens))


def _power_bregman(e, es, q):
    """``e*^q + q e*^(q-1) (e - e*) - e^q``, accurate near ``e = e*``.

    With ``L = log(e/e*)`` this is ``e*^q (q expm1(L) - expm1(q L))``; for
    small ``|L|`` the series ``sum_k (q - q^k) L^k / k!`` avoids cancellation.
    """
    e = np.asarray(e, dtype=float)
    if q == 0 or q == 1:
        return np.zeros_like(e)
    L = np.log(e) - np.log(es)
    direct = q * np.expm1(L) - np.expm1(q * L)
    series = np.zeros_like(L)
    term = np.ones_like(L)
    for k in range(1, 16):
        term = term * L / k
        series = series + (q - q**k) * term
    return np.asarray(es, dtype=float) ** q * np.where(np.abs(L) < 0.1, series, direct)


def relative_entropy_general(state, eq, model: EntropyModel, x=None) -> float:
    """Relative entropy for power-law weights and heat entropy.

    ``sum int Ct_i w_i lambda(u_i / (Ct_i w_i))
    + sum int Ct_i [w_i(e*) + w_i'(e*)(e - e*) - w_i(e)]
    + int [s(e*) + s'(e*)(e - e*) - s(e)]``
    where ``Ct_i = u*_i / w_i(e*)`` are the equilibrium multipliers.
    """
    if model.kind != "example2":
        return relative_entropy_bregman(state, eq, model, x)
    g = state.grid
    u, e = _check_state(model, state.u, state.e)
    es = np.broadcast_to(np.asarray(eq.e_star, dtype=float), e.shape)
    ct = np.asarray(eq.C_tilde, dtype=float)
    lw = model.log_w(e, x)
    dens = np.zeros_like(e)
    for i in range(model.n_species):
        m = ct[i] * np.exp(lw[i])
        dens = dens + m * boltzmann_lambda(u[i] / m)
        coef = ct[i] * np.exp(_expand(model.log_coef(x), 1 + e.ndim)[i])
        dens = dens + coef * _power_bregman(e, es, model.b[i])
    if model.c > 0:
        if model.sigma == 0:
            dens = dens + model.c * (np.log(es) + (e - es) / es - np.log(e))
        else:
            gam = np.asarray(model.gamma_at(x), dtype=float) ** (1.0 - model.sigma)
            dens = dens + model.c * gam * _power_bregman(e, es, model.sigma)
    return float(g.integrate(dens))


def relative_entropy_bregman(state, eq, model: EntropyModel, x=None) -> float:
    """Defining form ``int S(U*) + DS(U*).(U - U*) - S(U)``."""
    g = state.grid
    u, e = _check_state(model, state.u, state.e)
    us = np.broadcast_to(_expand(eq.u_star, u.ndim), u.shape)
    es = np.broadcast_to(np.asarray(eq.e_star, dtype=float), e.shape)
    du, de = entropy_gradient(model, us, es, x)
    dens = (entropy_density(model, us, es, x) + np.sum(du * (u - us), axis=0)
            + de * (e - es) - entropy_density(model, u, e, x))
    return float(g.integrate(dens))
