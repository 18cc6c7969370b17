"""Uniform 1D/2D grids and second-order finite-difference operators.

Boundary conventions: periodic wraps, Neumann mirrors ghost values (zero
flux), Dirichlet keeps the boundary entries fixed in the state array and the
operators return zero on those rows.  Non-periodic grids use trapezoid
quadrature weights, which is what makes the discrete operators symmetric.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "Grid",
    "StateField",
    "inner",
    "norm",
    "laplacian",
    "divergence_of_flux",
    "grad_sq_energy",
]

_BCS = ("periodic", "neumann", "dirichlet")


@dataclass(frozen=True)
class Grid:
    dim: int
    length: tuple[float, ...]
    npts: tuple[int, ...]
    bc: str

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("only 1D and 2D grids supported")
        if self.bc not in _BCS:
            raise ValueError(f"bc must be one of {_BCS}")
        if len(self.length) != self.dim or len(self.npts) != self.dim:
            raise ValueError("length/npts must match dim")
        if min(self.npts) < 3:
            raise ValueError("need at least 3 points per axis")

    @property
    def h(self) -> tuple[float, ...]:
        if self.bc == "periodic":
            return tuple(l / n for l, n in zip(self.length, self.npts))
        return tuple(l / (n - 1) for l, n in zip(self.length, self.npts))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.npts

    def axis(self, d: int = 0, origin: float = 0.0) -> np.ndarray:
        n = self.npts[d]
        if self.bc == "periodic":
            return origin + self.h[d] * np.arange(n)
        return origin + self.h[d] * np.arange(n)

    @cached_property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @cached_property
    def weights(self) -> np.ndarray:
        """Quadrature weights (trapezoid on non-periodic grids)."""
        if self.bc == "periodic":
            return np.ones(self.shape)
        ws = []
        for n in self.npts:
            w = np.ones(n)
            w[0] = w[-1] = 0.5
            ws.append(w)
        if self.dim == 1:
            return ws[0]
        return np.outer(ws[0], ws[1])

    def interior_mask(self) -> np.ndarray:
        mask = np.ones(self.shape, dtype=bool)
        if self.bc == "dirichlet":
            if self.dim == 1:
                mask[0] = mask[-1] = False
            else:
                mask[0, :] = mask[-1, :] = False
                mask[:, 0] = mask[:, -1] = False
        return mask


def make_grid_1d(length: float, npts: int, bc: str) -> Grid:
    return Grid(dim=1, length=(length,), npts=(npts,), bc=bc)


def make_grid_2d(length: float, npts: int, bc: str) -> Grid:
    return Grid(dim=2, length=(length, length), npts=(npts, npts), bc=bc)


@dataclass
class StateField:
    """A discrete solution tied to its grid."""

    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError("field shape does not match grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")


def inner(grid: Grid, a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sum(grid.weights * a * b) * grid.cell_volume)


def norm(grid: Grid, a: np.ndarray) -> float:
    return float(np.sqrt(max(inner(grid, a, a), 0.0)))


def _second_diff(u: np.ndarray, axis: int, h: float, bc: str) -> np.ndarray:
    if bc == "periodic":
        return (
            np.roll(u, -1, axis=axis) - 2.0 * u + np.roll(u, 1, axis=axis)
        ) / h**2
    # mirror ghosts: u[-1] := u[1], u[N] := u[N-2]
    up = np.roll(u, -1, axis=axis)
    um = np.roll(u, 1, axis=axis)
    sl = [slice(None)] * u.ndim
    sl_first, sl_second = list(sl), list(sl)
    sl_first[axis], sl_second[axis] = 0, 1
    sl_last, sl_penult = list(sl), list(sl)
    sl_last[axis], sl_penult[axis] = -1, -2
    um[tuple(sl_first)] = u[tuple(sl_second)]
    up[tuple(sl_last)] = u[tuple(sl_penult)]
    return (up - 2.0 * u + um) / h**2


def laplacian(grid: Grid, u: np.ndarray) -> np.ndarray:
    """Centered 5-point (3-point in 1D) Laplacian.

    Dirichlet rows are zeroed: boundary entries carry fixed data and do not
    evolve.
    """
    if u.shape != grid.shape:
        raise ValueError("field shape does not match grid")
    bc = "periodic" if grid.bc == "periodic" else "neumann"
    out = np.zeros_like(u)
    for d in range(grid.dim):
        out += _second_diff(u, d, grid.h[d], bc)
    if grid.bc == "dirichlet":
        out = np.where(grid.interior_mask(), out, 0.0)
    return out


def divergence_of_flux(grid: Grid, a: np.ndarray, u: np.ndarray) -> np.ndarray:
    """div(a grad u) with arithmetic face averages of the cell coefficient.

    Neumann boundaries impose zero flux through the boundary faces, which
    keeps the operator symmetric and mass conserving under the trapezoid
    weights.
    """
    if u.shape != grid.shape or a.shape != grid.shape:
        raise ValueError("field shape does not match grid")
    if grid.bc == "dirichlet":
        raise NotImplementedError("flux-form operator not used on dirichlet grids")
    out = np.zeros_like(u)
    for d in range(grid.dim):
        h = grid.h[d]
        if grid.bc == "periodic":
            a_plus = 0.5 * (a + np.roll(a, -1, axis=d))
            du_plus = (np.roll(u, -1, axis=d) - u) / h
            flux = a_plus * du_plus
            out += (flux - np.roll(flux, 1, axis=d)) / h
        else:
            up = np.roll(u, -1, axis=d)
            ap = 0.5 * (a + np.roll(a, -1, axis=d))
            flux = ap * (up - u) / h
            sl_last = [slice(None)] * u.ndim
            sl_last[d] = -1
            flux[tuple(sl_last)] = 0.0  # zero flux through boundary face
            fm = np.roll(flux, 1, axis=d)
            sl_first = [slice(None)] * u.ndim
            sl_first[d] = 0
            fm[tuple(sl_first)] = 0.0
            div = (flux - fm) / h
            # trapezoid weights halve the boundary rows; compensate so the
            # weighted operator stays symmetric
            div[tuple(sl_first)] *= 2.0
            div[tuple(sl_last)] *= 2.0
            out += div
    return out


def grad_sq_energy(grid: Grid, u: np.ndarray) -> float:
    """Integral of |grad u|^2 / 2 by face differences."""
    total = 0.0
    vol = grid.cell_volume
    for d in range(grid.dim):
        h = grid.h[d]
        if grid.bc == "periodic":
            du = (np.roll(u, -1, axis=d) - u) / h
            total += 0.5 * float(np.sum(du * du)) * vol
        else:
            du = (np.diff(u, axis=d)) / h
            if grid.dim == 2:
                # interior faces weighted by the transverse trapezoid rule
                wt = np.ones(grid.npts[1 - d])
                wt[0] = wt[-1] = 0.5
                wshape = [1, 1]
                wshape[1 - d] = -1
                total += 0.5 * float(np.sum(du * du * wt.reshape(wshape))) * vol
            else:
                total += 0.5 * float(np.sum(du * du)) * vol
    return total
