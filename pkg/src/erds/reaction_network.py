"""Mass-action reaction networks in gradient (Onsager) form.

Concentrations live in arrays of shape ``(I, ...)`` where ``I`` is the
number of species and the trailing axes are spatial. Monomials are always
evaluated in log space to avoid overflow.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ArgumentError, DomainError

RateFn = Callable[[np.ndarray, np.ndarray], np.ndarray]

_SERIES_THRESHOLD = 1e-8


def lambda_mean(a, b):
    """Logarithmic mean ``(a - b) / (log a - log b)``.

    Uses a second-order series when the logs are within 1e-8 of each other.
    Accepts scalars or broadcastable arrays of positive reals.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a <= 0) or np.any(b <= 0) or np.any(~np.isfinite(a)) or np.any(~np.isfinite(b)):
        raise DomainError("lambda_mean requires positive finite arguments")
    a, b = np.broadcast_arrays(a, b)
    a, b = np.maximum(a, b), np.minimum(a, b)
    diff = a - b
    ratio = a / b
    near = np.abs(ratio - 1.0) < 0.5
    with np.errstate(divide="ignore", invalid="ignore"):
        dlog = np.where(near, np.log1p(np.where(near, diff / b, 0.0)), np.log(a) - np.log(b))
        direct = diff / dlog
    mid = 0.5 * (a + b)
    series = mid - diff * diff / (12.0 * mid)
    out = np.where(np.abs(dlog) < _SERIES_THRESHOLD, series, direct)
    return out[()] if out.ndim == 0 else out


def constant_rate(k: float, energy_exponent: float = 1.0) -> RateFn:
    """Rate ``k* = k e^q`` with ``q = energy_exponent``.

    With ``q = 1`` the reaction ``X_n + X_p <-> 0`` has right-hand side
    ``k (e - n p)`` for the square-root entropy model.
    """
    if k <= 0:
        raise DomainError("rate constant must be positive")

    def rate(u, e):
        return k * np.power(np.asarray(e, dtype=float), energy_exponent) * np.ones(np.shape(u)[1:])

    return rate


def read_shockley_hall(k0: float, c_n: float = 0.0, c_p: float = 0.0,
                       energy_exponent: float = 1.0) -> RateFn:
    """Read-Shockley-Hall rate ``k = k0 / (1 + c_n n + c_p p)`` times ``e^q``.

    The first two species are taken as ``n`` and ``p``.
    """
    if k0 <= 0 or c_n < 0 or c_p < 0:
        raise DomainError("need k0 > 0 and c_n, c_p >= 0")

    def rate(u, e):
        u = np.asarray(u, dtype=float)
        k = k0 / (1.0 + c_n * u[0] + c_p * u[1])
        return k * np.power(np.asarray(e, dtype=float), energy_exponent)

    return rate


@dataclass(frozen=True)
class Reaction:
    """A reversible reaction ``alpha <-> beta`` with rate ``k*(u, e)``."""

    alpha: tuple
    beta: tuple
    rate_fn: RateFn

    def __post_init__(self):
        if tuple(self.alpha) == tuple(self.beta):
            raise DomainError("trivial reaction with alpha == beta")

    @property
    def gamma(self) -> np.ndarray:
        return np.asarray(self.alpha, dtype=float) - np.asarray(self.beta, dtype=float)


def stoich_projection(vectors, n_species: int | None = None) -> np.ndarray:
    """Orthogonal projection onto the complement of span(vectors).

    Args:
        vectors: Sequence of stoichiometric vectors ``alpha - beta`` (or
            :class:`Reaction` objects).
        n_species: Needed only when ``vectors`` is empty.

    Returns:
        Symmetric idempotent ``(I, I)`` matrix.
    """
    vecs = [r.gamma if isinstance(r, Reaction) else np.asarray(r, dtype=float) for r in vectors]
    if not vecs:
        if n_species is None:
            raise ArgumentError("n_species required for an empty reaction list")
        return np.eye(n_species)
    dim = vecs[0].size
    if any(v.size != dim for v in vecs):
        raise ArgumentError("stoichiometric vectors have different lengths")
    basis = []
    # modified Gram-Schmidt with one re-orthogonalisation pass
    for v in vecs:
        w = v.copy()
        for _ in range(2):
            for q in basis:
                w -= (q @ w) * q
        nrm = np.linalg.norm(w)
        if nrm > 1e-12 * max(1.0, np.linalg.norm(v)):
            basis.append(w / nrm)
    if not basis:
        return np.eye(dim)
    q = np.array(basis)
    return np.eye(dim) - q.T @ q


def _log_ratio(u, w):
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    if np.any(u <= 0) or np.any(w <= 0):
        raise DomainError("concentrations and reference weights must be positive")
    return np.log(u) - np.log(w)


class ReactionNetwork:
    """Collection of reversible mass-action reactions among ``I`` species.

    Args:
        n_species: Number of species ``I``.
        reactions: Sequence of :class:`Reaction`.
    """

    def __init__(self, n_species: int, reactions: Sequence[Reaction] = ()):
        self.n_species = int(n_species)
        self.reactions = tuple(reactions)
        for r in self.reactions:
            if len(r.alpha) != self.n_species or len(r.beta) != self.n_species:
                raise ArgumentError("stoichiometric vector length differs from species count")
            if min(r.alpha) < 0 or min(r.beta) < 0:
                raise DomainError("stoichiometric coefficients must be non-negative")
        self.projection = stoich_projection(self.reactions, self.n_species)
        vals, vecs = np.linalg.eigh(self.projection)
        self.complement_basis = vecs[:, vals > 0.5]

    @property
    def gammas(self) -> np.ndarray:
        if not self.reactions:
            return np.zeros((0, self.n_species))
        return np.array([r.gamma for r in self.reactions])

    def rates(self, u, e) -> np.ndarray:
        """Evaluate ``k*_r(u, e)`` for every reaction, shape ``(R, ...)``."""
        u = np.asarray(u, dtype=float)
        shape = u.shape[1:]
        if not self.reactions:
            return np.zeros((0,) + shape)
        return np.array([np.broadcast_to(r.rate_fn(u, e), shape) for r in self.reactions])

    def _log_ratios(self, u, w):
        """``log(u^b/w^b)`` and ``d = log(u^a/w^a) - log(u^b/w^b)`` per reaction."""
        lr = _log_ratio(u, w)
        beta = np.array([r.beta for r in self.reactions], dtype=float)
        lb = np.tensordot(beta, lr, axes=(1, 0))
        d = np.tensordot(self.gammas, lr, axes=(1, 0))
        return lb, d

    def rhs(self, u, w, k_star) -> np.ndarray:
        """Reaction right-hand side ``-sum_r k*_r (u^a/w^a - u^b/w^b)(a - b)``."""
        u = np.asarray(u, dtype=float)
        if not self.reactions:
            _log_ratio(u, w)
            return np.zeros_like(u)
        lb, d = self._log_ratios(u, w)
        k_star = np.asarray(k_star, dtype=float)
        if np.any(k_star <= 0):
            raise DomainError("rates must be positive")
        # u^a/w^a - u^b/w^b without cancellation
        flux = k_star * np.exp(lb) * np.expm1(d)
        return -np.tensordot(self.gammas, flux, axes=(0, 0))

    def onsager(self, u, w, k_star) -> np.ndarray:
        """Onsager matrix, shape ``(..., I, I)``.

        Satisfies ``H (log u - log w) = -rhs`` pointwise.
        """
        u = np.asarray(u, dtype=float)
        shape = u.shape[1:]
        out = np.zeros(shape + (self.n_species, self.n_species))
        if not self.reactions:
            _log_ratio(u, w)
            return out
        lb, d = self._log_ratios(u, w)
        # log-mean of (u^a/w^a, u^b/w^b) as b expm1(d)/d
        small = np.abs(d) < 1e-8
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(small, 1.0 + 0.5 * d + d * d / 6.0, np.expm1(d) / np.where(small, 1.0, d))
        lam = np.asarray(k_star, dtype=float) * np.exp(lb) * rel
        g = self.gammas
        outer = g[:, :, None] * g[:, None, :]
        return np.einsum("r...,rij->...ij", lam, outer)

    def check_detailed_balance(self, w, forward_rates, backward_rates, rtol: float = 1e-10):
        """Check ``k_fw w^alpha = k_bw w^beta`` for every reaction.

        Args:
            w: Reference weights, shape ``(I,)`` or ``(I, ...)``.
            forward_rates: Forward rate constants evaluated at ``w``.
            backward_rates: Backward rate constants evaluated at ``w``.

        Returns:
            ``(balanced, residuals)`` where residuals are
            ``log(k_fw w^alpha) - log(k_bw w^beta)`` per reaction.
        """
        if not self.reactions:
            return True, np.zeros(0)
        lw = np.log(np.asarray(w, dtype=float))
        kf = np.asarray(forward_rates, dtype=float)
        kb = np.asarray(backward_rates, dtype=float)
        if kf.shape[0] != len(self.reactions) or kb.shape[0] != len(self.reactions):
            raise ArgumentError("one forward and one backward rate per reaction expected")
        if np.any(kf <= 0) or np.any(kb <= 0):
            raise DomainError("rates must be positive")
        res = []
        for i, r in enumerate(self.reactions):
            la = np.tensordot(np.asarray(r.alpha, float), lw, axes=(0, 0))
            lb = np.tensordot(np.asarray(r.beta, float), lw, axes=(0, 0))
            res.append(np.log(kf[i]) + la - np.log(kb[i]) - lb)
        res = np.array(res)
        return bool(np.all(np.abs(np.expm1(res)) <= rtol)), res


def bipolar_network(rate_fn: RateFn) -> ReactionNetwork:
    """Electron-hole recombination ``X_n + X_p <-> 0``."""
    return ReactionNetwork(2, [Reaction((1, 1), (0, 0), rate_fn)])
