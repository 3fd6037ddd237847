"""Stage solver and time stepping for Shu-Osher tableaus.

States are numpy arrays. A 1-D state is one coupled system; a 2-D state of
shape ``(ncell, nblock)`` is a grid problem whose stiff operator acts on each
row independently, so the implicit stage equations are solved row by row.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .tableau import DIRK, IMEX, ShuOsherTableau


class StageSolveError(RuntimeError):
    """Base class for failures of the implicit stage solve."""

    stage: int | None = None
    step_index: int | None = None


class NonConvergence(StageSolveError):
    def __init__(self, iters: int, residual: float):
        super().__init__(f"Newton did not converge in {iters} iterations (residual {residual:.3e})")
        self.iters = iters
        self.residual = residual


class SingularJacobian(StageSolveError):
    pass


class NonPhysicalState(RuntimeError):
    """A state left the domain where the model is defined (e.g. negative temperature)."""


class RelaxationStructure:
    """Moment operator, local equilibrium and relaxation rate of a stiff term.

    For a stiff operator ``G = Q/eps`` it is assumed that ``moments(Q(u)) = 0``,
    ``moments(equilibrium(w)) = w`` and ``Q'(u)Q(u) = -rate(moments(u)) Q(u)``.
    Subclasses implementing :meth:`relax` give a closed-form solution of the
    backward relaxation problem ``u = u_e + alpha Q(u)``.
    """

    eps: float | np.ndarray = 1.0

    def moments(self, u):
        raise NotImplementedError

    def equilibrium(self, omega):
        raise NotImplementedError

    def rate(self, omega):
        raise NotImplementedError

    def relax(self, u_e, omega, alpha):
        return None

    @property
    def has_closed_form(self) -> bool:
        return type(self).relax is not RelaxationStructure.relax


class TwoDerivativeSystem:
    """Problem ``u' = F(u) + G(u)`` with ``Gdot = G'(u) G(u)`` available.

    ``eval_G`` already includes any ``1/eps`` factor and ``eval_Gdot`` any
    ``1/eps**2``. Subclasses without a non-stiff part leave ``eval_F`` alone.
    """

    relaxation: RelaxationStructure | None = None
    has_F: bool = False

    def eval_F(self, u):
        raise NotImplementedError(f"{type(self).__name__} has no non-stiff operator")

    def eval_G(self, u):
        raise NotImplementedError

    def eval_Gdot(self, u):
        raise NotImplementedError

    jacobian_G: Callable | None = None
    jacobian_Gdot: Callable | None = None


class FunctionSystem(TwoDerivativeSystem):
    """Build a system from plain callables."""

    def __init__(self, G, Gdot, F=None, jac_G=None, jac_Gdot=None, relaxation=None):
        self._G, self._Gdot, self._F = G, Gdot, F
        self.has_F = F is not None
        self.jacobian_G = jac_G
        self.jacobian_Gdot = jac_Gdot
        self.relaxation = relaxation

    def eval_F(self, u):
        if self._F is None:
            return super().eval_F(u)
        return self._F(u)

    def eval_G(self, u):
        return self._G(u)

    def eval_Gdot(self, u):
        return self._Gdot(u)


@dataclass(frozen=True)
class StepperConfig:
    newton_abs_tol: float = 1e-12
    newton_rel_tol: float = 1e-10
    newton_max_iters: int = 50
    jacobian_mode: str = "analytic"  # "analytic" | "finite-difference"
    fast_path: str = "auto"  # "auto" | "force-newton"

    def __post_init__(self):
        if not (self.newton_abs_tol > 0 and self.newton_rel_tol > 0):
            raise ValueError("Newton tolerances must be positive")
        if self.newton_max_iters < 1:
            raise ValueError("newton_max_iters must be at least 1")
        if self.jacobian_mode not in ("analytic", "finite-difference"):
            raise ValueError(f"unknown jacobian_mode {self.jacobian_mode!r}")
        if self.fast_path not in ("auto", "force-newton"):
            raise ValueError(f"unknown fast_path {self.fast_path!r}")


@dataclass
class StageInfo:
    iters: int
    residual: float
    fast_path: bool


@dataclass
class StepStats:
    stage_newton_iters: list[int] = field(default_factory=list)
    residual_norms: list[float] = field(default_factory=list)
    used_fast_path: list[bool] = field(default_factory=list)
    stage_min: list[float] = field(default_factory=list)

    def _add(self, info: StageInfo, u):
        self.stage_newton_iters.append(info.iters)
        self.residual_norms.append(info.residual)
        self.used_fast_path.append(info.fast_path)
        self.stage_min.append(float(np.min(u)))


def _maxabs(x) -> float:
    return float(np.abs(x).max())


def _fd_jacobian(fun, u, base):
    """Forward-difference Jacobian; row-local (batched) for 2-D states."""
    h_all = 1e-7 * (1.0 + np.abs(u))
    if u.ndim == 1:
        n = u.shape[0]
        J = np.empty((n, n))
        for k in range(n):
            up = u.copy()
            up[k] += h_all[k]
            J[:, k] = (fun(up) - base) / h_all[k]
        return J
    ncell, nb = u.shape
    J = np.empty((ncell, nb, nb))
    for k in range(nb):
        up = u.copy()
        up[:, k] += h_all[:, k]
        J[:, :, k] = (fun(up) - base) / h_all[:, k, None]
    return J


def _jacobians(u, G, sys, cfg):
    analytic = cfg.jacobian_mode == "analytic"
    if analytic and sys.jacobian_G is not None:
        JG = sys.jacobian_G(u)
    else:
        JG = _fd_jacobian(sys.eval_G, u, G)
    if analytic and sys.jacobian_Gdot is not None:
        JGd = sys.jacobian_Gdot(u)
    elif sys.relaxation is not None:
        rel = sys.relaxation
        scale = np.asarray(rel.rate(rel.moments(u)) / rel.eps, dtype=float)
        JGd = -(scale[..., None, None] if u.ndim == 2 else scale) * JG
    else:
        JGd = _fd_jacobian(sys.eval_Gdot, u, sys.eval_Gdot(u))
    return JG, JGd


def _newton(rhs, a, adot, sys, cfg, guess):
    u = np.array(guess, dtype=float, copy=True)
    eye = np.eye(u.shape[-1])
    res_norm = math.inf
    for it in range(1, cfg.newton_max_iters + 1):
        G = sys.eval_G(u)
        res = u - rhs - a * G
        if adot != 0.0:
            res -= adot * sys.eval_Gdot(u)
        res_norm = _maxabs(res)
        if not math.isfinite(res_norm):
            break
        if res_norm < cfg.newton_abs_tol + cfg.newton_rel_tol * _maxabs(u):
            return u, StageInfo(it, res_norm, False)
        JG, JGd = _jacobians(u, G, sys, cfg)
        J = eye - a * JG - adot * JGd
        try:
            if J.shape == (1, 1):
                if J[0, 0] == 0.0:
                    raise np.linalg.LinAlgError("Singular matrix")
                du = res / J[0, 0]
            elif u.ndim == 1:
                du = np.linalg.solve(J, res)
            else:
                du = np.linalg.solve(J, res[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian(f"stage Jacobian is singular: {exc}") from exc
        u -= du
        # with a stiff G the residual floor is set by rounding in u times |a G'|;
        # a correction below the tolerance means the iterate cannot improve
        if _maxabs(du) <= cfg.newton_abs_tol + cfg.newton_rel_tol * _maxabs(u):
            res = u - rhs - a * sys.eval_G(u)
            if adot != 0.0:
                res -= adot * sys.eval_Gdot(u)
            return u, StageInfo(it, _maxabs(res), False)
    raise NonConvergence(cfg.newton_max_iters, res_norm)


def _relaxation_solve(rhs, a, adot, rel: RelaxationStructure):
    """Closed-form stage; also returns ``c`` with ``a G + adot Gdot = c G`` (broadcast to rows)."""
    omega = rel.moments(rhs)
    coef = a - adot * np.asarray(rel.rate(omega)) / rel.eps
    u = rel.relax(rhs, omega, coef / rel.eps)
    if rhs.ndim == 2 and np.ndim(coef) == 1:
        coef = coef[:, None]
    return u, coef


def solve_stage(rhs, d, ddot, dt, sys: TwoDerivativeSystem, cfg: StepperConfig | None = None, guess=None):
    """Solve ``u = rhs + dt d G(u) + dt^2 ddot Gdot(u)``.

    Uses the closed-form relaxation solve when the system provides one and
    ``cfg.fast_path == "auto"``, Newton otherwise. The fast-path residual is
    evaluated through ``Gdot = -(rate/eps) G``.
    """
    cfg = cfg or StepperConfig()
    rhs = np.asarray(rhs, dtype=float)
    a, adot = dt * d, dt * dt * ddot
    rel = sys.relaxation
    if cfg.fast_path == "auto" and rel is not None and rel.has_closed_form:
        u, coef = _relaxation_solve(rhs, a, adot, rel)
        res = u - rhs - coef * sys.eval_G(u)
        return u, StageInfo(0, _maxabs(res), True)
    return _newton(rhs, a, adot, sys, cfg, rhs if guess is None else guess)


def explicit_operator(method: ShuOsherTableau, sys: TwoDerivativeSystem):
    if method.kind == IMEX:
        if not sys.has_F:
            raise ValueError(f"IMEX method {method.name!r} needs a system with a non-stiff operator F")
        return sys.eval_F
    if method.kind == DIRK:
        return sys.eval_G
    return None


def step(u, dt, method: ShuOsherTableau, sys: TwoDerivativeSystem, cfg: StepperConfig | None = None):
    """Advance one step of size ``dt``; returns ``(u_next, StepStats)``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    cfg = cfg or StepperConfig()
    u = np.asarray(u, dtype=float)
    F = explicit_operator(method, sys)
    P, W, D, Dd, Re = method.P, method.W, method.D, method.Ddot, method.Re
    h = dt / method.r
    stages: list[np.ndarray] = []
    fe_pairs: dict[int, np.ndarray] = {}
    stats = StepStats()
    for i in range(method.s):
        ue = Re[i] * u
        for j in range(i):
            if P[i, j] != 0.0:
                ue = ue + P[i, j] * stages[j]
            if W[i, j] != 0.0:
                if j not in fe_pairs:
                    fe_pairs[j] = stages[j] + h * F(stages[j])
                ue = ue + W[i, j] * fe_pairs[j]
        if D[i] == 0.0 and Dd[i] == 0.0:
            ui, info = ue, StageInfo(0, 0.0, False)
        else:
            try:
                ui, info = solve_stage(ue, D[i], Dd[i], dt, sys, cfg, guess=ue)
            except StageSolveError as exc:
                exc.stage = i + 1
                exc.args = (f"stage {i + 1} of {method.name}: {exc}",)
                raise
        stages.append(ui)
        stats._add(info, ui)
    return stages[-1], stats


@dataclass
class Trajectory:
    times: list[float]
    states: list[np.ndarray]
    stats: list[StepStats]
    final: np.ndarray
    dt: float
    method: str

    @property
    def n_steps(self) -> int:
        return len(self.stats)


class IntegrationError(RuntimeError):
    """A step failed; ``trajectory`` holds everything computed before it."""

    def __init__(self, step_index: int, cause: Exception, trajectory: Trajectory):
        super().__init__(f"step {step_index} failed: {cause}")
        self.step_index = step_index
        self.cause = cause
        self.trajectory = trajectory


def integrate(
    u0,
    t0: float,
    t_end: float,
    n_steps: int,
    method: ShuOsherTableau,
    sys: TwoDerivativeSystem,
    cfg: StepperConfig | None = None,
    monitors: Sequence[Callable] = (),
    snapshots: str | Iterable[int] = "all",
) -> Trajectory:
    """Take ``n_steps`` fixed steps from ``t0`` to ``t_end``.

    Each monitor is called as ``monitor(step_index, t, u, stats)``, first with
    the initial state (index 0, ``stats=None``) and then after every step.
    ``snapshots`` is ``"all"``, ``"final"`` or a collection of step indices to
    keep in ``Trajectory.states``.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    if not t_end > t0:
        raise ValueError("t_end must exceed t0")
    cfg = cfg or StepperConfig()
    dt = (t_end - t0) / n_steps
    keep_all = snapshots == "all"
    keep = set() if snapshots in ("all", "final") else set(snapshots)
    u = np.array(u0, dtype=float, copy=True)
    traj = Trajectory(times=[t0], states=[u], stats=[], final=u, dt=dt, method=method.name)
    if not keep_all and 0 not in keep:
        traj.times, traj.states = [], []
    for mon in monitors:
        mon(0, t0, u, None)
    for n in range(1, n_steps + 1):
        try:
            u, st = step(u, dt, method, sys, cfg)
        except (StageSolveError, NonPhysicalState) as exc:
            if isinstance(exc, StageSolveError):
                exc.step_index = n
            raise IntegrationError(n, exc, traj) from exc
        t = t0 + n * dt
        traj.stats.append(st)
        traj.final = u
        if keep_all or n in keep or (snapshots == "final" and n == n_steps):
            traj.times.append(t)
            traj.states.append(u)
        for mon in monitors:
            mon(n, t, u, st)
    return traj
