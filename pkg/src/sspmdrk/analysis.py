"""Convergence studies, run monitors, reference solutions and asymptotic-limit checks."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .integrator import IntegrationError, StepperConfig, Trajectory, integrate
from .problems import (
    SpatialGrid,
    VelocityGrid,
    bgk_1d,
    broadwell,
    hyperbolic_relaxation,
    ode_relaxation,
    scalar_decay,
)
from .tableau import IMEX, ShuOsherTableau, get_method

ROUNDOFF_GUARD = 1e2 * np.finfo(float).eps
ERROR_NORMS = ("sum-abs", "discrete-L2", "discrete-L2-xv")


class NoConvergence(RuntimeError):
    pass


# ---------------------------------------------------------------- problem setups


@dataclass(frozen=True)
class ProblemSetup:
    """A named model together with its grid, initial data and run length."""

    name: str
    kind: str  # "ode" | "pde" | "kinetic"
    t_end: float
    nx: int = 40
    nv: int = 150
    vmax: float = 15.0
    transport: str = "upwind"
    eps_field: str | None = None

    def build(self, eps=None, nx: int | None = None):
        nx = nx or self.nx
        if self.name == "scalar-decay":
            return scalar_decay()
        if self.name == "ode-relaxation":
            return ode_relaxation(eps)
        if self.name == "hyperbolic-relaxation":
            return hyperbolic_relaxation(eps, grid=SpatialGrid(nx))
        if self.name == "broadwell":
            return broadwell(eps, SpatialGrid(nx), self.transport)
        if self.name == "bgk":
            field_ = self.eps_field if self.eps_field is not None else eps
            return bgk_1d(field_, SpatialGrid(nx), VelocityGrid(self.nv, self.vmax), self.transport)
        raise ValueError(f"unknown problem {self.name!r}")

    def initial_state(self, system) -> np.ndarray:
        if self.name == "scalar-decay":
            return np.array([10.0])
        if self.name == "ode-relaxation":
            return np.array([2.0, 0.0])
        if self.name == "hyperbolic-relaxation":
            x = system.grid.centers
            u1 = 1.0 + 0.5 * np.sin(np.pi * x)
            return np.stack([u1, system.flux_F(u1)], axis=-1)
        return system.initial_data()

    @property
    def default_norm(self) -> str:
        return {"ode": "sum-abs", "pde": "discrete-L2", "kinetic": "discrete-L2-xv"}[self.kind]

    def max_speed(self) -> float:
        return self.vmax if self.name == "bgk" else 1.0


_KINDS = {
    "scalar-decay": ("ode", 2.0),
    "ode-relaxation": ("ode", 1.0),
    "hyperbolic-relaxation": ("pde", 0.1),
    "broadwell": ("pde", 0.1),
    "bgk": ("kinetic", 0.1),
}


def problem_setup(name: str, **params) -> ProblemSetup:
    if name not in _KINDS:
        raise ValueError(f"unknown problem {name!r}; choose from {', '.join(_KINDS)}")
    kind, t_end = _KINDS[name]
    params.setdefault("t_end", t_end)
    return ProblemSetup(name=name, kind=kind, **params)


def error_norm(diff, norm: str, system=None) -> float:
    diff = np.asarray(diff)
    if norm == "sum-abs":
        return float(np.sum(np.abs(diff)))
    if norm == "discrete-L2":
        return float(np.sqrt(system.grid.dx * np.sum(diff**2)))
    if norm == "discrete-L2-xv":
        return float(np.sqrt(system.grid.dx * system.vgrid.dv * np.sum(diff**2)))
    raise ValueError(f"unknown error norm {norm!r}")


def _n_steps(t_span: float, dt: float) -> int:
    n = max(1, int(round(t_span / dt)))
    return n


# ---------------------------------------------------------------- monitors


@dataclass
class MonitorReport:
    kind: str
    violations: list[tuple[int, str]] = field(default_factory=list)
    trace: list[float] = field(default_factory=list)

    @property
    def passes(self) -> bool:
        return not self.violations

    @property
    def first_violation(self) -> int | None:
        return self.violations[0][0] if self.violations else None

    def format(self) -> str:
        head = f"{self.kind}: {'PASS' if self.passes else 'FAIL'}"
        if self.trace:
            head += f" (extremes {min(self.trace):.6e} .. {max(self.trace):.6e} over {len(self.trace)} records)"
        return "\n".join([head] + [f"  step {n}: {msg}" for n, msg in self.violations])


class PositivityMonitor:
    """Flags nonpositive state entries, stage values and (kinetic) moments.

    A step that fails because no admissible stage solution exists is
    recorded as a violation as well.
    """

    def __init__(self, system=None):
        self.system = system
        self.report = MonitorReport("positivity")

    def __call__(self, n, t, u, stats):
        lo = float(np.min(u))
        if stats is not None and stats.stage_min:
            lo = min(lo, min(stats.stage_min))
        self.report.trace.append(lo)
        if lo <= 0:
            self.report.violations.append((n, f"minimum value {lo:.6e}"))
            return
        prim = getattr(self.system, "primitive", None)
        if prim is not None and np.ndim(u) == 2:
            rho, _, T = prim(self.system.moments(u), check=False)
            if np.any(rho <= 0) or np.any(T <= 0):
                self.report.violations.append((n, f"moments: min rho {rho.min():.3e}, min T {T.min():.3e}"))

    def failed(self, n, exc):
        self.report.violations.append((n, f"step failed: no admissible stage solution ({exc.cause})"))


class EntropyMonitor:
    """Flags any per-step increase of the discrete entropy beyond ``rel_tol``."""

    def __init__(self, system, rel_tol=1e-10):
        self.system = system
        self.rel_tol = rel_tol
        self.report = MonitorReport("entropy")

    def __call__(self, n, t, u, stats):
        S = self.system.entropy(u)
        tr = self.report.trace
        if tr and S - tr[-1] > self.rel_tol * abs(tr[-1]):
            self.report.violations.append((n, f"entropy rose by {S - tr[-1]:.3e} to {S:.12e}"))
        tr.append(S)


def domain_totals(system, u) -> np.ndarray:
    """Cell-summed conserved moments times ``dx``."""
    if hasattr(system, "totals"):
        return np.asarray(system.totals(u))
    return system.grid.dx * system.relaxation.moments(u).sum(axis=0)


class ConservationMonitor:
    """Flags drift of the domain totals relative to the initial ones."""

    def __init__(self, system, rel_tol=1e-11):
        self.system = system
        self.rel_tol = rel_tol
        self.report = MonitorReport("conservation")
        self._ref = None

    def __call__(self, n, t, u, stats):
        tot = domain_totals(self.system, u)
        if self._ref is None:
            self._ref = tot
            self._scale = max(float(np.max(np.abs(tot))), np.finfo(float).tiny)
        drift = float(np.max(np.abs(tot - self._ref))) / self._scale
        self.report.trace.append(drift)
        if drift > self.rel_tol:
            self.report.violations.append((n, f"relative drift {drift:.3e}"))


def monitored_run(u0, t0, t_end, n_steps, method, system, monitors=(), cfg=None, snapshots="final"):
    """Integrate with monitors; returns ``(trajectory, error)`` and never raises on step failure."""
    try:
        return integrate(u0, t0, t_end, n_steps, method, system, cfg, monitors, snapshots), None
    except IntegrationError as exc:
        for mon in monitors:
            if hasattr(mon, "failed"):
                mon.failed(exc.step_index, exc)
        return exc.trajectory, exc


def _replay(trajectory: Trajectory, mon):
    if len(trajectory.states) != trajectory.n_steps + 1:
        raise ValueError("monitor replay needs a trajectory recorded with snapshots='all'")
    for n, u in enumerate(trajectory.states):
        mon(n, trajectory.times[n], u, trajectory.stats[n - 1] if n else None)
    return mon.report


def positivity_monitor(trajectory: Trajectory, system=None) -> MonitorReport:
    return _replay(trajectory, PositivityMonitor(system))


def entropy_monitor(trajectory: Trajectory, system, rel_tol=1e-10) -> MonitorReport:
    return _replay(trajectory, EntropyMonitor(system, rel_tol))


def conservation_monitor(trajectory: Trajectory, system, rel_tol=1e-11) -> MonitorReport:
    return _replay(trajectory, ConservationMonitor(system, rel_tol))


# ---------------------------------------------------------------- references


REFERENCE_METHOD = "ssp-imex-mdrk-3"
# stage solves driven to rounding so that Newton tolerances do not accumulate
# over the many steps of a refined run
REFERENCE_CONFIG = StepperConfig(newton_abs_tol=1e-15, newton_rel_tol=1e-15)


def reference_solution(setup: ProblemSetup, eps=None, t_end=None, *, nx=None, dt=None,
                       method: ShuOsherTableau | str | None = None, tol=1e-11, n0=16, max_halvings=20,
                       cfg=None):
    """Reference final state.

    ODE problems: the highest-order built-in IMEX method (implicit Taylor for
    problems without a non-stiff part) with the step halved until successive
    results differ by less than ``tol``, or until two successive Richardson
    extrapolations do; the extrapolated value is returned. Grid problems: ``method`` run at ``dt/4`` on the same grid.
    """
    t_end = setup.t_end if t_end is None else t_end
    system = setup.build(eps, nx)
    u0 = setup.initial_state(system)
    if t_end == 0:
        return u0
    if setup.kind != "ode":
        if dt is None or method is None:
            raise ValueError("grid references need the method and the step being refined")
        m = get_method(method) if isinstance(method, str) else method
        traj, err = monitored_run(u0, 0.0, t_end, 4 * _n_steps(t_end, dt), m, system, cfg=cfg)
        if err is not None:
            raise err
        return traj.final
    m = get_method(REFERENCE_METHOD if system.has_F else "ssp-imdrk-4")
    cfg = cfg or REFERENCE_CONFIG
    order = m.design_order
    prev = prev_x = None
    n = n0
    for _ in range(max_halvings + 1):
        cur = integrate(u0, 0.0, t_end, n, m, system, cfg, snapshots="final").final
        if prev is not None:
            cur_x = cur + (cur - prev) / (2**order - 1)
            if float(np.max(np.abs(cur - prev))) < tol:
                return cur_x
            if prev_x is not None and float(np.max(np.abs(cur_x - prev_x))) < tol:
                return cur_x
            prev_x = cur_x
        prev, n = cur, 2 * n
    raise NoConvergence(f"reference for {setup.name} did not settle below {tol:g} after {max_halvings} halvings")


# ---------------------------------------------------------------- convergence


def fit_order(dts, errors, window: int = 4, guard: float = ROUNDOFF_GUARD):
    """Least-squares slope of log(error) against log(dt).

    Uses the ``window`` smallest steps whose error is finite and above
    ``guard``; returns ``None`` with fewer than two usable points.
    """
    pts = [(d, e) for d, e in zip(dts, errors) if e is not None and math.isfinite(e) and e > guard]
    pts = sorted(pts)[:window]
    if len(pts) < 2:
        return None
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0])


@dataclass
class ConvergenceStudy:
    problem: str
    method: str
    eps_values: list[float]
    dt_values: list[float]
    errors: list[list[float | None]]  # eps x dt; None marks a failed run
    estimated_orders: list[float | None]
    failures: list[str] = field(default_factory=list)

    def order_for(self, eps) -> float | None:
        return self.estimated_orders[self.eps_values.index(eps)]

    def rows(self):
        for i, eps in enumerate(self.eps_values):
            for j, dt in enumerate(self.dt_values):
                yield eps, dt, self.errors[i][j], self.estimated_orders[i]

    def to_csv(self, header: str = "") -> str:
        lines = [header.rstrip("\n")] if header else []
        lines.append("eps,dt,error,order_estimate")
        for eps, dt, err, order in self.rows():
            e = "nan" if err is None else repr(float(err))
            o = "" if order is None else repr(round(order, 12))
            lines.append(f"{eps!r},{dt!r},{e},{o}")
        return "\n".join(lines) + "\n"

    def gnuplot_script(self, csv_name: str) -> str:
        out = csv_name.rsplit(".", 1)[0] + ".svg"
        plots = []
        for i, eps in enumerate(self.eps_values):
            plots.append(
                f"'{csv_name}' every ::{i * len(self.dt_values)}::{(i + 1) * len(self.dt_values) - 1} "
                f"using 2:3 with linespoints title 'eps = {eps:g}'"
            )
        return "\n".join([
            "set terminal svg size 640,480",
            f"set output '{out}'",
            "set datafile separator ','",
            "set key autotitle columnhead",
            "set logscale xy",
            "set format xy '10^{%T}'",
            "set xlabel 'dt'",
            "set ylabel 'error'",
            f"set title '{self.problem}, {self.method}'",
            "plot " + ", \\\n     ".join(plots),
            "",
        ])


def _dt_grid(setup: ProblemSetup, dt_list, nx_list, cfl):
    if nx_list is not None:
        if cfl is None:
            raise ValueError("a list of grids needs a CFL number")
        return [(cfl * (2.0 / nx) / setup.max_speed(), nx) for nx in nx_list]
    if not dt_list:
        raise ValueError("dt list is empty")
    return [(float(d), None) for d in dt_list]


def run_convergence(setup: ProblemSetup, method: ShuOsherTableau | str, eps_list: Sequence[float],
                    dt_list: Sequence[float] | None = None, error_norm_name: str | None = None, *,
                    nx_list: Sequence[int] | None = None, cfl: float | None = None, window: int = 4,
                    jobs: int = 1, cfg: StepperConfig | None = None,
                    reference_tol: float = 1e-11) -> ConvergenceStudy:
    """Temporal convergence of ``method`` for every ``eps`` in ``eps_list``.

    ODE problems compare against :func:`reference_solution`; grid problems
    against the same method at a quarter of the step on the same grid. For
    grid problems ``nx_list`` with ``cfl`` sets ``dt = cfl dx / max_speed``
    per grid instead of ``dt_list``. ``reference_tol`` is passed to the ODE
    reference; at intermediate ``eps`` a tight value needs steps well below
    ``eps`` and gets expensive.
    """
    m = get_method(method) if isinstance(method, str) else method
    norm = error_norm_name or setup.default_norm
    if norm not in ERROR_NORMS:
        raise ValueError(f"unknown error norm {norm!r}")
    if not eps_list:
        raise ValueError("eps list is empty")
    runs = _dt_grid(setup, dt_list, nx_list, cfl)
    dts = [d for d, _ in runs]
    if any(b >= a for a, b in zip(dts, dts[1:])):
        raise ValueError("dt values must be strictly decreasing")
    T = setup.t_end

    refs: dict = {}

    def ode_ref(eps):
        if eps not in refs:
            refs[eps] = reference_solution(setup, eps, T, tol=reference_tol)
        return refs[eps]

    def cell(eps, dt, nx):
        system = setup.build(eps, nx)
        u0 = setup.initial_state(system)
        n = _n_steps(T, dt)
        try:
            u = integrate(u0, 0.0, T, n, m, system, cfg, snapshots="final").final
            if setup.kind == "ode":
                ref = ode_ref(eps)
            else:
                ref = integrate(u0, 0.0, T, 4 * n, m, system, cfg, snapshots="final").final
        except (IntegrationError, NoConvergence) as exc:
            return None, f"eps={eps!r} dt={dt!r}: {exc}"
        return error_norm(u - ref, norm, system), None

    if setup.kind == "ode":
        for eps in eps_list:
            ode_ref(eps)
    tasks = [(eps, dt, nx) for eps in eps_list for dt, nx in runs]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda a: cell(*a), tasks))
    else:
        results = [cell(*a) for a in tasks]
    errors, failures = [], []
    for i, _ in enumerate(eps_list):
        row = results[i * len(runs):(i + 1) * len(runs)]
        errors.append([e for e, _ in row])
        failures.extend(msg for _, msg in row if msg)
    orders = [fit_order(dts, row, window) for row in errors]
    return ConvergenceStudy(setup.name, m.name, [float(e) for e in eps_list], dts, errors, orders, failures)


# ---------------------------------------------------------------- asymptotic limit


def explicit_part_step(omega, dt, method: ShuOsherTableau, rhs: Callable):
    """One step of the explicit scheme ``(Re, P, W, r)`` of an IMEX tableau."""
    stages = []
    fe = {}
    h = dt / method.r
    for i in range(method.s):
        w = method.Re[i] * omega
        for j in range(i):
            if method.P[i, j] != 0.0:
                w = w + method.P[i, j] * stages[j]
            if method.W[i, j] != 0.0:
                if j not in fe:
                    fe[j] = stages[j] + h * rhs(stages[j])
                w = w + method.W[i, j] * fe[j]
        stages.append(w)
    return stages[-1]


def limit_rhs(system) -> Callable:
    """``w -> R T(E(w))`` for a system with relaxation structure."""
    rel = system.relaxation
    return lambda w: rel.moments(system.eval_F(rel.equilibrium(w)))


@dataclass
class APCheck:
    method: str
    dt: float
    eps_values: list[float]
    deviations: list[float]

    def deviation(self, eps) -> float:
        return self.deviations[self.eps_values.index(eps)]

    def format(self) -> str:
        lines = [f"AP check, {self.method}, dt = {self.dt!r}", "eps,deviation"]
        lines += [f"{e!r},{d!r}" for e, d in zip(self.eps_values, self.deviations)]
        return "\n".join(lines) + "\n"


def ap_limit_check(setup: ProblemSetup, method: ShuOsherTableau | str, dt: float, eps_list: Sequence[float],
                   t_end: float | None = None, u0=None, nx=None, cfg=None) -> APCheck:
    """Distance between the projected IMEX solution and the explicit part on the limit system."""
    m = get_method(method) if isinstance(method, str) else method
    if m.kind != IMEX:
        raise ValueError("the AP check applies to IMEX methods")
    if np.any(m.D + np.abs(m.Ddot) <= 0):
        raise ValueError(f"{m.name} has a stage with d_ii + |ddot_ii| = 0")
    T = setup.t_end if t_end is None else t_end
    n = _n_steps(T, dt)
    devs = []
    for eps in eps_list:
        system = setup.build(eps, nx)
        start = setup.initial_state(system) if u0 is None else np.asarray(u0, dtype=float)
        rel = system.relaxation
        u = integrate(start, 0.0, T, n, m, system, cfg, snapshots="final").final
        omega = rel.moments(start)
        f = limit_rhs(system)
        for _ in range(n):
            omega = explicit_part_step(omega, T / n, m, f)
        devs.append(float(np.max(np.abs(rel.moments(u) - omega))))
    return APCheck(m.name, T / n, [float(e) for e in eps_list], devs)


# ---------------------------------------------------------------- mixed regime


def ssp_rk2(u0, t_end, n_steps, rhs, monitors=()):
    """Heun's method (two-stage SSP RK) for ``u' = rhs(u)``."""
    dt = t_end / n_steps
    u = np.array(u0, dtype=float)
    for mon in monitors:
        mon(0, 0.0, u, None)
    for n in range(1, n_steps + 1):
        u1 = u + dt * rhs(u)
        u = 0.5 * u + 0.5 * (u1 + dt * rhs(u1))
        for mon in monitors:
            mon(n, n * dt, u, None)
    return u


@dataclass
class MixedRegimeResult:
    profiles: dict[str, np.ndarray]  # name -> (nx, 3) array of rho, u, T
    positivity: dict[str, MonitorReport]
    x: np.ndarray
    dx: float
    dt: dict[str, float]

    def distance(self, a: str, b: str) -> float:
        return float(np.sqrt(self.dx * np.sum((self.profiles[a] - self.profiles[b]) ** 2)))


REFERENCE = "explicit-ssp-rk2"


def mixed_regime(methods=("ssp-imex-mdrk-2", "ssp-imex-mdrk-3"), nx=40, nv=150, vmax=15.0, t_end=0.5,
                 cfl=1 / 24, reference=True, ref_safety=0.5, cfg=None) -> MixedRegimeResult:
    """BGK with the spatially varying Knudsen number, IMEX runs and a resolved explicit reference."""
    setup = problem_setup("bgk", nx=nx, nv=nv, vmax=vmax, eps_field="mixed", t_end=t_end)
    system = setup.build()
    f0 = setup.initial_state(system)
    dx = system.grid.dx
    profiles, pos, dts = {}, {}, {}

    def prims(f):
        return np.stack(system.primitive(system.moments(f)), axis=-1)

    for name in methods:
        mon = PositivityMonitor(system)
        n = _n_steps(t_end, cfl * dx / vmax)
        traj, err = monitored_run(f0, 0.0, t_end, n, get_method(name), system, [mon], cfg)
        pos[name] = mon.report
        dts[name] = t_end / n
        if err is None:
            profiles[name] = prims(traj.final)
    if reference:
        dt_ref = min(ref_safety * float(system.eps.min()), 0.5 * dx / vmax)
        n = _n_steps(t_end, dt_ref)
        n = n if t_end / n <= dt_ref else n + 1
        mon = PositivityMonitor(system)
        f = ssp_rk2(f0, t_end, n, lambda g: system.eval_F(g) + system.eval_G(g), [mon])
        pos[REFERENCE] = mon.report
        dts[REFERENCE] = t_end / n
        profiles[REFERENCE] = prims(f)
    return MixedRegimeResult(profiles, pos, system.grid.centers, dx, dts)


def moments_table(system, f) -> np.ndarray:
    """Columns ``x, rho, u, T`` for a kinetic state."""
    rho, u, T = system.primitive(system.moments(f), check=False)
    return np.column_stack([system.grid.centers, rho, u, T])


__all__ = [
    "APCheck", "ConservationMonitor", "ConvergenceStudy", "EntropyMonitor", "MixedRegimeResult", "MonitorReport",
    "NoConvergence", "PositivityMonitor", "ProblemSetup", "ap_limit_check", "conservation_monitor",
    "domain_totals", "entropy_monitor", "error_norm", "explicit_part_step", "fit_order", "limit_rhs",
    "mixed_regime", "moments_table", "monitored_run", "positivity_monitor", "problem_setup",
    "reference_solution", "run_convergence", "ssp_rk2",
]
