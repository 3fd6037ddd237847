"""Hyperbolic relaxation system and the Broadwell discrete-velocity model."""
from __future__ import annotations

import numpy as np

from ..integrator import RelaxationStructure, TwoDerivativeSystem
from .grids import SpatialGrid, transport_derivative


class _HyperbolicRelaxation(RelaxationStructure):
    def __init__(self, eps, flux):
        self.eps = eps
        self.flux = flux

    def moments(self, u):
        return u[..., :1]

    def equilibrium(self, omega):
        w = omega[..., 0]
        return np.stack([w, self.flux(w)], axis=-1)

    def rate(self, omega):
        return np.ones(omega.shape[:-1])

    def relax(self, u_e, omega, alpha):
        u1 = u_e[..., 0]
        return np.stack([u1, (u_e[..., 1] + alpha * self.flux(u1)) / (1.0 + alpha)], axis=-1)


class HyperbolicRelaxation(TwoDerivativeSystem):
    """``u1_t + u2_x = 0``, ``u2_t + u1_x = (F(u1) - u2)/eps`` on a periodic grid.

    Transport is first-order upwind on the characteristic variables
    ``u1 + u2`` (speed +1) and ``u1 - u2`` (speed -1).
    """

    has_F = True

    def __init__(self, eps, flux_F, grid: SpatialGrid):
        if not eps > 0:
            raise ValueError("eps must be positive")
        self.eps = eps
        self.flux_F = flux_F
        self.grid = grid
        self.relaxation = _HyperbolicRelaxation(eps, flux_F)

    def eval_F(self, u):
        dx = self.grid.dx
        wp = u[:, 0] + u[:, 1]
        wm = u[:, 0] - u[:, 1]
        tp = -transport_derivative(wp, 1.0, dx)
        tm = transport_derivative(wm, -1.0, dx)
        return np.stack([(tp + tm) / 2, (tp - tm) / 2], axis=-1)

    def collision(self, u):
        q = np.zeros_like(u)
        q[:, 1] = self.flux_F(u[:, 0]) - u[:, 1]
        return q

    def eval_G(self, u):
        return self.collision(u) / self.eps

    def eval_Gdot(self, u):
        return -self.eval_G(u) / self.eps


def hyperbolic_relaxation(eps, flux_F=None, grid: SpatialGrid | None = None) -> HyperbolicRelaxation:
    if flux_F is None:
        flux_F = lambda u: 0.5 * u * u  # noqa: E731
    return HyperbolicRelaxation(eps, flux_F, grid or SpatialGrid(40))


# columns of a Broadwell state
PLUS, ZERO, MINUS = 0, 1, 2
_COLLISION_SIGN = np.array([1.0, -1.0, 1.0])
_SPEEDS = (1.0, 0.0, -1.0)


class _Broadwell(RelaxationStructure):
    def __init__(self, eps):
        self.eps = eps

    def moments(self, f):
        rho = f[..., PLUS] + 2 * f[..., ZERO] + f[..., MINUS]
        m = f[..., PLUS] - f[..., MINUS]
        return np.stack([rho, m], axis=-1)

    def equilibrium(self, omega):
        rho, m = omega[..., 0], omega[..., 1]
        return np.stack(
            [(rho + m) ** 2 / (4 * rho), (rho * rho - m * m) / (4 * rho), (rho - m) ** 2 / (4 * rho)],
            axis=-1,
        )

    def rate(self, omega):
        return omega[..., 0]

    def relax(self, f_e, omega, alpha):
        # the collision invariant q = f0^2 - f+ f- satisfies q = q_e / (1 + alpha rho)
        q_e = f_e[..., ZERO] ** 2 - f_e[..., PLUS] * f_e[..., MINUS]
        q = q_e / (1.0 + alpha * omega[..., 0])
        return f_e + (alpha * q)[..., None] * _COLLISION_SIGN


class Broadwell(TwoDerivativeSystem):
    """Three-velocity Broadwell model; state columns are ``(f+, f0, f-)``."""

    has_F = True

    def __init__(self, eps, grid: SpatialGrid, transport="upwind"):
        if not eps > 0:
            raise ValueError("eps must be positive")
        self.eps = eps
        self.grid = grid
        self.transport = transport
        self.relaxation = _Broadwell(eps)

    max_speed = 1.0

    def eval_F(self, f):
        dx = self.grid.dx
        out = np.zeros_like(f)
        out[:, PLUS] = -transport_derivative(f[:, PLUS], 1.0, dx, self.transport)
        out[:, MINUS] = transport_derivative(f[:, MINUS], -1.0, dx, self.transport)
        return out

    def collision(self, f):
        q = f[..., ZERO] ** 2 - f[..., PLUS] * f[..., MINUS]
        return q[..., None] * _COLLISION_SIGN

    def eval_G(self, f):
        return self.collision(f) / self.eps

    def eval_Gdot(self, f):
        rho = f[..., PLUS] + 2 * f[..., ZERO] + f[..., MINUS]
        return -(rho / self.eps)[..., None] * self.eval_G(f)

    def jacobian_G(self, f):
        fp, f0, fm = f[:, PLUS], f[:, ZERO], f[:, MINUS]
        dq = np.stack([-fm, 2 * f0, -fp], axis=-1)
        return _COLLISION_SIGN[None, :, None] * dq[:, None, :] / self.eps

    def initial_data(self):
        x = self.grid.centers
        f = np.empty((self.grid.nx, 3))
        f[:, PLUS] = 1 + 0.2 * np.exp(0.3 * np.sin(np.pi * x))
        f[:, MINUS] = np.exp(0.2 * np.cos(2 * np.pi * x))
        f[:, ZERO] = 1 / (1 + 0.3 * np.sin(np.pi * x))
        return f

    @staticmethod
    def fluid_variables(f):
        """``(rho, m, z)`` with ``z = f+ + f-``."""
        rho = f[..., PLUS] + 2 * f[..., ZERO] + f[..., MINUS]
        return rho, f[..., PLUS] - f[..., MINUS], f[..., PLUS] + f[..., MINUS]


def broadwell(eps, grid: SpatialGrid | None = None, transport="upwind") -> Broadwell:
    return Broadwell(eps, grid or SpatialGrid(40), transport)
