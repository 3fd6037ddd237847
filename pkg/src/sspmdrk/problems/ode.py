"""Scalar and two-component ODE test problems."""
from __future__ import annotations

import numpy as np

from ..integrator import RelaxationStructure, TwoDerivativeSystem


class ScalarDecay(TwoDerivativeSystem):
    """``u' = -10 u^2``; positive for all time, exact solution ``u0/(1 + 10 u0 t)``."""

    dim = 1

    def eval_G(self, u):
        return -10.0 * u * u

    def eval_Gdot(self, u):
        return 200.0 * u**3

    def jacobian_G(self, u):
        return np.diag(-20.0 * u)

    def jacobian_Gdot(self, u):
        return np.diag(600.0 * u * u)

    @staticmethod
    def exact(t, u0=10.0):
        return u0 / (1.0 + 10.0 * u0 * t)


def scalar_decay() -> ScalarDecay:
    return ScalarDecay()


class _OdeRelaxation(RelaxationStructure):
    def __init__(self, eps, f, g):
        self.eps = eps
        self._f, self._g = f, g

    def moments(self, u):
        return u[:1]

    def equilibrium(self, omega):
        return np.array([omega[0], self._g(omega[0])])

    def rate(self, omega):
        return self._f(omega[0])

    def relax(self, u_e, omega, alpha):
        u1 = u_e[0]
        fa = alpha * self._f(u1)
        return np.array([u1, (u_e[1] + fa * self._g(u1)) / (1.0 + fa)])


class OdeRelaxation(TwoDerivativeSystem):
    """``u1' = u2``, ``u2' = f(u1)(g(u1) - u2)/eps`` with ``f = 1 + u1^2``, ``g = sin u1``.

    The stiff part relaxes ``u2`` to ``g(u1)``; as ``eps -> 0`` the first
    component follows ``u1' = g(u1)``.
    """

    dim = 2
    has_F = True

    def __init__(self, eps: float):
        if not eps > 0:
            raise ValueError("eps must be positive")
        self.eps = eps
        self.relaxation = _OdeRelaxation(eps, self.f, self.g)

    @staticmethod
    def f(u1):
        return 1.0 + u1 * u1

    @staticmethod
    def g(u1):
        return np.sin(u1)

    def eval_F(self, u):
        return np.array([u[1], 0.0])

    def collision(self, u):
        return np.array([0.0, self.f(u[0]) * (self.g(u[0]) - u[1])])

    def eval_G(self, u):
        return self.collision(u) / self.eps

    def eval_Gdot(self, u):
        return -(self.f(u[0]) / self.eps) * self.eval_G(u)

    def jacobian_G(self, u):
        u1, u2 = u
        dq1 = 2 * u1 * (np.sin(u1) - u2) + self.f(u1) * np.cos(u1)
        return np.array([[0.0, 0.0], [dq1, -self.f(u1)]]) / self.eps

    def limit_rhs(self, omega):
        """Right-hand side of the reduced equation ``w' = R T(E(w))``."""
        return np.array([self.g(omega[0])])

    @staticmethod
    def limit_solution(t, u1_0=2.0):
        """Closed form of ``u1' = sin(u1)``: ``tan(u1/2) = tan(u1_0/2) e^t``."""
        return 2.0 * np.arctan(np.exp(t) * np.tan(u1_0 / 2.0))


def ode_relaxation(eps: float) -> OdeRelaxation:
    return OdeRelaxation(eps)
