"""Uniform finite-volume grids on the unit torus or a centred box.

Face-based helpers use the convention that the face between cells ``j`` and
``j+1`` along an axis carries the dual volume ``h^d``. On a torus every cell
owns its right face; on a box only interior faces exist (no-flux walls).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import ArgumentError, DomainError


def bernoulli(z):
    """Bernoulli function ``z / (exp(z) - 1)`` with ``B(0) = 1``."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-10
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(small, 1.0 - 0.5 * z, z / np.expm1(np.where(small, 1.0, z)))
    return out


@dataclass(frozen=True)
class Grid:
    """Cell-centred grid.

    Args:
        kind: ``"torus"`` for the periodic unit cube ``[0, 1)^d`` or
            ``"box"`` for ``[-L, L]^d`` with no-flux walls.
        n: Cells per axis.
        half_width: ``L`` for boxes, ignored on the torus.
    """

    kind: str
    n: tuple
    half_width: float = 1.0

    def __post_init__(self):
        if self.kind not in ("torus", "box"):
            raise ArgumentError(f"unknown grid kind {self.kind!r}")
        n = tuple(int(v) for v in np.atleast_1d(self.n))
        if len(n) not in (1, 2):
            raise ArgumentError("only d = 1 or d = 2 is supported")
        if min(n) < 3:
            raise ArgumentError("need at least 3 cells per axis")
        object.__setattr__(self, "n", n)
        if self.kind == "box" and self.half_width <= 0:
            raise DomainError("box half-width must be positive")

    @property
    def dim(self) -> int:
        return len(self.n)

    @property
    def shape(self) -> tuple:
        return self.n

    @property
    def periodic(self) -> bool:
        return self.kind == "torus"

    @property
    def side(self) -> float:
        return 1.0 if self.periodic else 2.0 * self.half_width

    @property
    def h(self) -> tuple:
        return tuple(self.side / m for m in self.n)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def volume(self) -> float:
        return self.side ** self.dim

    def axes_coords(self):
        lo = 0.0 if self.periodic else -self.half_width
        return [lo + (np.arange(m) + 0.5) * hh for m, hh in zip(self.n, self.h)]

    @property
    def centers(self) -> np.ndarray:
        """Cell centres, shape ``(d, *shape)``."""
        return np.array(np.meshgrid(*self.axes_coords(), indexing="ij"))

    def integrate(self, f) -> np.ndarray:
        """Midpoint-rule integral over the trailing spatial axes."""
        f = np.asarray(f, dtype=float)
        axes = tuple(range(f.ndim - self.dim, f.ndim))
        return np.sum(f, axis=axes) * self.cell_volume

    def mean(self, f):
        return self.integrate(f) / self.volume

    # face helpers -------------------------------------------------------
    def face_pair(self, f, axis: int):
        """Values left and right of every face along ``axis``.

        ``axis`` counts spatial axes; leading component axes are allowed.
        """
        f = np.asarray(f)
        ax = f.ndim - self.dim + axis
        if self.periodic:
            return f, np.roll(f, -1, axis=ax)
        n = f.shape[ax]
        return np.take(f, range(n - 1), axis=ax), np.take(f, range(1, n), axis=ax)

    def face_diff(self, f, axis: int):
        left, right = self.face_pair(f, axis)
        return (right - left) / self.h[axis]

    def divergence(self, flux, axis: int):
        """Cell divergence of face fluxes along ``axis``."""
        flux = np.asarray(flux, dtype=float)
        ax = flux.ndim - self.dim + axis
        if self.periodic:
            return (flux - np.roll(flux, 1, axis=ax)) / self.h[axis]
        pad = [(0, 0)] * flux.ndim
        pad[ax] = (1, 1)
        fp = np.pad(flux, pad)
        n = fp.shape[ax]
        return (np.take(fp, range(1, n), axis=ax) - np.take(fp, range(n - 1), axis=ax)) / self.h[axis]

    def face_sum(self, values):
        """Integrate a face quantity with dual volume ``h^d`` per face."""
        values = np.asarray(values, dtype=float)
        axes = tuple(range(values.ndim - self.dim, values.ndim))
        return np.sum(values, axis=axes) * self.cell_volume

    def dirichlet(self, g, weight=None):
        """Discrete ``int |grad g|^2 weight`` with face-averaged weight."""
        total = 0.0
        for a in range(self.dim):
            d = self.face_diff(g, a)
            if weight is None:
                total = total + self.face_sum(d * d)
            else:
                wl, wr = self.face_pair(weight, a)
                total = total + self.face_sum(0.5 * (wl + wr) * d * d)
        return total

    # sparse operators ---------------------------------------------------
    def drift_diffusion_matrix(self, psi=None) -> sp.csc_matrix:
        """Sparse matrix of ``q -> div(grad q + q grad psi)``.

        With ``psi = None`` this is the standard five-point Laplacian. The
        Scharfetter-Gummel fluxes make ``exp(-psi)`` an exact null vector.
        """
        size = int(np.prod(self.n))
        if psi is None:
            psi = np.zeros(self.n)
        psi = np.asarray(psi, dtype=float).reshape(self.n)
        idx = np.arange(size).reshape(self.n)
        mat = sp.csc_matrix((size, size))
        for a in range(self.dim):
            il, ir = self.face_pair(idx, a)
            pl, pr = self.face_pair(psi, a)
            il, ir, pl, pr = (v.ravel() for v in (il, ir, pl, pr))
            h = self.h[a]
            bp = bernoulli(-(pr - pl)) / h**2
            bm = bernoulli(pr - pl) / h**2
            rows = np.concatenate([il, il, ir, ir])
            cols = np.concatenate([ir, il, ir, il])
            vals = np.concatenate([bp, -bm, -bp, bm])
            mat = mat + sp.csc_matrix((vals, (rows, cols)), shape=(size, size))
        return mat.tocsc()

    def laplacian_matrix(self) -> sp.csc_matrix:
        return self.drift_diffusion_matrix(None)


class ImplicitSolver:
    """Prefactorised solver for ``(I - dt kappa A) x = b``."""

    def __init__(self, grid: Grid, matrix: sp.spmatrix, kappa: float, dt: float):
        self.grid = grid
        size = matrix.shape[0]
        self._lu = splu((sp.identity(size, format="csc") - dt * kappa * matrix).tocsc())

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        return self._lu.solve(b.ravel()).reshape(b.shape)

    def solve_many(self, bs):
        """Solve for a stack of right-hand sides of shape ``(k, *grid.shape)``."""
        bs = np.asarray(bs, dtype=float)
        flat = bs.reshape(bs.shape[0], -1).T
        return self._lu.solve(np.ascontiguousarray(flat)).T.reshape(bs.shape)


@lru_cache(maxsize=64)
def _cached_solver(grid: Grid, psi_key, kappa: float, dt: float) -> ImplicitSolver:
    psi = None if psi_key is None else np.frombuffer(psi_key, dtype=float)
    return ImplicitSolver(grid, grid.drift_diffusion_matrix(psi), kappa, dt)


def implicit_solver(grid: Grid, kappa: float, dt: float, psi=None) -> ImplicitSolver:
    """Cached backward-Euler solver for the (drift-)diffusion operator."""
    key = None if psi is None else np.ascontiguousarray(psi, dtype=float).ravel().tobytes()
    return _cached_solver(grid, key, float(kappa), float(dt))


@dataclass
class StateField:
    """Densities ``u`` (shape ``(I, *grid.shape)``) and internal energy ``e``."""

    grid: Grid
    u: np.ndarray
    e: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.e = np.asarray(self.e, dtype=float)
        if self.e.shape != self.grid.shape or self.u.shape[1:] != self.grid.shape:
            raise ArgumentError("field shapes do not match the grid")

    @property
    def n(self):
        return self.u[0]

    @property
    def p(self):
        return self.u[1]

    def copy(self) -> "StateField":
        return StateField(self.grid, self.u.copy(), self.e.copy())

    def extrema(self) -> dict:
        return {"e_min": float(self.e.min()), "e_max": float(self.e.max()),
                "u_min": [float(v.min()) for v in self.u]}
