"""Periodic 1-D grids and the transport discretizations used by the PDE models."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WENO_EPS = 1e-6
_LINEAR_WEIGHTS = np.array([0.1, 0.6, 0.3])


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform periodic cells on ``[x_lo, x_hi]``."""

    nx: int
    x_lo: float = 0.0
    x_hi: float = 2.0

    def __post_init__(self):
        if self.nx < 4:
            raise ValueError("a spatial grid needs at least 4 cells")
        if not self.x_hi > self.x_lo:
            raise ValueError("x_hi must exceed x_lo")

    @property
    def dx(self) -> float:
        return (self.x_hi - self.x_lo) / self.nx

    @property
    def centers(self) -> np.ndarray:
        return self.x_lo + (np.arange(self.nx) + 0.5) * self.dx

    @property
    def faces(self) -> np.ndarray:
        return self.x_lo + np.arange(self.nx + 1) * self.dx


@dataclass(frozen=True)
class VelocityGrid:
    """Midpoint rule on ``[-vmax, vmax]`` with ``nv`` points."""

    nv: int = 150
    vmax: float = 15.0

    def __post_init__(self):
        if self.nv < 8:
            raise ValueError("a velocity grid needs at least 8 points")
        if not self.vmax > 0:
            raise ValueError("vmax must be positive")

    @property
    def dv(self) -> float:
        return 2.0 * self.vmax / self.nv

    @property
    def points(self) -> np.ndarray:
        return -self.vmax + (np.arange(self.nv) + 0.5) * self.dv

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.nv, self.dv)


def upwind_derivative(u, wind, dx):
    """One-sided difference of cell values along axis 0 (periodic).

    ``wind`` may be a scalar or broadcast against the trailing axes of ``u``;
    positive wind uses the left neighbour, negative the right one.
    """
    wind = np.asarray(wind, dtype=float)
    back = (u - np.roll(u, 1, axis=0)) / dx
    fwd = (np.roll(u, -1, axis=0) - u) / dx
    return np.where(wind > 0, back, fwd)


def weno5_flux(cell_values, wind, return_weights=False):
    """WENO5-JS reconstruction at the right interface ``i+1/2`` of every cell.

    Positive ``wind`` gives the left-biased (upwind) value from cells
    ``i-2..i+2``; negative wind gives the right-biased value from cells
    ``i-1..i+3``. Periodic along axis 0.
    """
    u = np.asarray(cell_values, dtype=float)
    if u.shape[0] < 5:
        raise ValueError("WENO5 needs at least 5 cells")
    if wind > 0:
        um2, um1, u0, up1, up2 = (np.roll(u, k, axis=0) for k in (2, 1, 0, -1, -2))
    else:
        # mirror image of the stencil about i+1/2
        um2, um1, u0, up1, up2 = (np.roll(u, k, axis=0) for k in (-3, -2, -1, 0, 1))
    q0 = (2 * um2 - 7 * um1 + 11 * u0) / 6
    q1 = (-um1 + 5 * u0 + 2 * up1) / 6
    q2 = (2 * u0 + 5 * up1 - up2) / 6
    b0 = 13 / 12 * (um2 - 2 * um1 + u0) ** 2 + 0.25 * (um2 - 4 * um1 + 3 * u0) ** 2
    b1 = 13 / 12 * (um1 - 2 * u0 + up1) ** 2 + 0.25 * (um1 - up1) ** 2
    b2 = 13 / 12 * (u0 - 2 * up1 + up2) ** 2 + 0.25 * (3 * u0 - 4 * up1 + up2) ** 2
    a0 = _LINEAR_WEIGHTS[0] / (WENO_EPS + b0) ** 2
    a1 = _LINEAR_WEIGHTS[1] / (WENO_EPS + b1) ** 2
    a2 = _LINEAR_WEIGHTS[2] / (WENO_EPS + b2) ** 2
    tot = a0 + a1 + a2
    w0, w1, w2 = a0 / tot, a1 / tot, a2 / tot
    vals = w0 * q0 + w1 * q1 + w2 * q2
    if return_weights:
        return vals, np.stack([w0, w1, w2])
    return vals


def weno5_derivative(u, wind, dx):
    """Conservative ``d(u)/dx`` for constant-sign advection speed ``wind``."""
    flux = weno5_flux(u, wind)
    return (flux - np.roll(flux, 1, axis=0)) / dx


def transport_derivative(u, wind, dx, scheme="upwind"):
    if scheme == "upwind":
        return upwind_derivative(u, wind, dx)
    if scheme == "weno5":
        return weno5_derivative(u, wind, dx)
    raise ValueError(f"unknown transport scheme {scheme!r}")


def l2_norm(err, dx, dv=None):
    """Discrete L2 norm over cells (and velocity points when ``dv`` is given)."""
    w = dx if dv is None else dx * dv
    return float(np.sqrt(w * np.sum(np.asarray(err) ** 2)))
