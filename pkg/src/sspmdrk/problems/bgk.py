"""1-D BGK equation discretized on a periodic cell grid and a velocity grid."""
from __future__ import annotations

import numpy as np

from ..integrator import NonPhysicalState, RelaxationStructure, TwoDerivativeSystem
from .grids import SpatialGrid, VelocityGrid, transport_derivative


class NonPhysicalMoments(NonPhysicalState):
    def __init__(self, cell: int, rho: float, T: float):
        super().__init__(f"cell {cell}: density {rho:.3e}, temperature {T:.3e}")
        self.cell = cell


def maxwellian(rho, u, T, v):
    """``rho/sqrt(2 pi T) exp(-(v - u)^2/(2T))``, broadcasting cells against ``v``."""
    rho, u, T = (np.asarray(a, dtype=float)[..., None] for a in (rho, u, T))
    return rho / np.sqrt(2 * np.pi * T) * np.exp(-((v - u) ** 2) / (2 * T))


def mixed_regime_eps(x, eps0=1e-5):
    return eps0 + np.tanh(1 - 11 * (x - 1)) + np.tanh(1 + 11 * (x - 1))


class _BGKRelaxation(RelaxationStructure):
    def __init__(self, system: "BGK1D"):
        self.sys = system
        self.eps = system.eps

    def moments(self, f):
        return self.sys.moments(f)

    def equilibrium(self, omega):
        return self.sys.maxwellian_from_moments(omega)

    def rate(self, omega):
        return np.ones(omega.shape[:-1])

    def relax(self, f_e, omega, alpha):
        M = self.sys.maxwellian_from_moments(omega)
        a = np.broadcast_to(np.asarray(alpha, dtype=float), f_e.shape[:-1])[..., None]
        return (f_e + a * M) / (1.0 + a)


class BGK1D(TwoDerivativeSystem):
    """``f_t + v f_x = (M[f] - f)/eps(x)`` with ``f`` of shape ``(nx, nv)``.

    ``eps(x)`` is sampled at cell centres. Moments are ``(rho, rho u, E)``
    with ``E = rho u^2/2 + rho T/2``.
    """

    has_F = True

    def __init__(self, eps_field, grid: SpatialGrid, vgrid: VelocityGrid, transport="upwind"):
        self.grid = grid
        self.vgrid = vgrid
        self.transport = transport
        eps = eps_field(grid.centers) if callable(eps_field) else np.full(grid.nx, float(eps_field))
        eps = np.asarray(eps, dtype=float)
        if np.any(eps <= 0):
            raise ValueError("eps(x) must be positive on every cell")
        self.eps = eps
        self.v = vgrid.points
        self.w = vgrid.weights
        self._phi = np.stack([np.ones_like(self.v), self.v, 0.5 * self.v**2], axis=-1) * self.w[:, None]
        self.relaxation = _BGKRelaxation(self)

    @property
    def max_speed(self) -> float:
        return float(np.max(np.abs(self.v)))

    def moments(self, f):
        return f @ self._phi

    def primitive(self, omega, check=True):
        rho = omega[..., 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = omega[..., 1] / rho
            T = 2 * omega[..., 2] / rho - u * u
        if check:
            bad = ~((rho > 0) & (T > 0))
            if np.any(bad):
                k = int(np.flatnonzero(bad.ravel())[0])
                raise NonPhysicalMoments(k, float(rho.ravel()[k]), float(T.ravel()[k]))
        return rho, u, T

    def maxwellian_from_moments(self, omega):
        rho, u, T = self.primitive(omega)
        return maxwellian(rho, u, T, self.v)

    def collision(self, f):
        return self.maxwellian_from_moments(self.moments(f)) - f

    def eval_G(self, f):
        return self.collision(f) / self.eps[:, None]

    def eval_Gdot(self, f):
        return -self.eval_G(f) / self.eps[:, None]

    def eval_F(self, f):
        return -self.v * self._dx_flux(f)

    def _dx_flux(self, f):
        dx = self.grid.dx
        if self.transport == "upwind":
            return transport_derivative(f, self.v, dx, "upwind")
        pos = self.v > 0
        out = np.empty_like(f)
        out[:, pos] = transport_derivative(f[:, pos], 1.0, dx, self.transport)
        out[:, ~pos] = transport_derivative(f[:, ~pos], -1.0, dx, self.transport)
        return out

    def entropy(self, f):
        """Discrete entropy ``dx sum_k sum_j w_j f log f``."""
        if np.any(f <= 0):
            raise ValueError("entropy is undefined for nonpositive f")
        return float(self.grid.dx * np.sum(f * np.log(f) * self.w))

    def totals(self, f):
        """Domain totals of mass, momentum and energy."""
        return self.grid.dx * self.moments(f).sum(axis=0)

    def check_resolution(self, rho, u, T, tol=1e-8):
        """Raise if the velocity grid misrepresents the moments of ``M[rho, u, T]``."""
        M = maxwellian(rho, u, T, self.v)
        got = self.moments(M)
        want = np.stack(
            np.broadcast_arrays(
                np.asarray(rho, float), np.asarray(rho, float) * u, 0.5 * np.asarray(rho, float) * (u * u + T)
            ),
            axis=-1,
        )
        err = float(np.max(np.abs(got - want)))
        if err > tol:
            raise ValueError(f"velocity grid does not resolve the Maxwellian (moment error {err:.2e})")
        return err

    def initial_data(self):
        x = self.grid.centers
        rho = 1 + 0.2 * np.sin(2 * np.pi * x)
        u = np.ones_like(x)
        T = 1 / (1 + 0.2 * np.sin(np.pi * x))
        self.check_resolution(rho, u, T)
        self.check_resolution(rho, -0.5 * u, T)
        return 0.7 * maxwellian(rho, u, T, self.v) + 0.3 * maxwellian(rho, -0.5 * u, T, self.v)


def bgk_1d(eps_field, grid: SpatialGrid | None = None, vgrid: VelocityGrid | None = None,
           transport="upwind") -> BGK1D:
    if isinstance(eps_field, str):
        if eps_field != "mixed":
            raise ValueError(f"unknown eps field {eps_field!r}")
        eps_field = mixed_regime_eps
    return BGK1D(eps_field, grid or SpatialGrid(40), vgrid or VelocityGrid(), transport)


def cfl_dt(system, cfl: float) -> float:
    """``cfl * dx / max_speed`` for a grid system."""
    return cfl * system.grid.dx / system.max_speed


__all__ = ["BGK1D", "NonPhysicalMoments", "bgk_1d", "cfl_dt", "maxwellian", "mixed_regime_eps"]
