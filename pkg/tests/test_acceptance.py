"""Acceptance criteria; each test prints one ``criterion N: PASS|FAIL`` line."""
import time

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from sspmdrk import get_method, integrate
from sspmdrk.analysis import (
    REFERENCE,
    ConservationMonitor,
    EntropyMonitor,
    PositivityMonitor,
    ap_limit_check,
    error_norm,
    mixed_regime,
    monitored_run,
    problem_setup,
    reference_solution,
    run_convergence,
)
from sspmdrk.problems import ode_relaxation, scalar_decay
from sspmdrk.tableau import (
    IMPLICIT,
    ShuOsherTableau,
    builtin_methods,
    check_order_conditions,
    max_condition_order,
    obstruction_bound,
    to_butcher,
    validate_ssp_signs,
)

from .test_problems import MODELS, _random_states
from .test_tableau import PRINTED

SSP_METHODS = ["implicit-taylor-2", "ssp-imdrk-3", "ssp-imdrk-4", "ssp-imex-mdrk-2", "ssp-imex-mdrk-3"]
IMEX_METHODS = ["ssp-imex-mdrk-2", "ssp-imex-mdrk-3"]


class Criterion:
    """Collects named checks and prints a single verdict line."""

    def __init__(self, number, limit_s):
        self.number = number
        self.limit = limit_s
        self.failed = []
        self.notes = []
        self.t0 = time.perf_counter()

    def check(self, ok, what):
        if not ok:
            self.failed.append(what)

    def note(self, text):
        self.notes.append(text)

    def finish(self, capsys):
        elapsed = time.perf_counter() - self.t0
        self.check(elapsed < self.limit, f"runtime {elapsed:.1f} s exceeds {self.limit:g} s")
        verdict = "PASS" if not self.failed else "FAIL"
        detail = "; ".join(self.notes + [f"FAILED {f}" for f in self.failed])
        with capsys.disabled():
            print(f"\ncriterion {self.number}: {verdict} ({elapsed:.2f} s) {detail}")
        assert not self.failed, self.failed


def test_criterion_1_tableaus(capsys):
    c = Criterion(1, 1.0)
    for name in SSP_METHODS:
        t = get_method(name)
        c.check(validate_ssp_signs(t).passes, f"{name} signs")
        bt = to_butcher(t)
        rep = check_order_conditions(bt, t.design_order)
        c.check(rep.passes and rep.max_abs_residual < 1e-12, f"{name} order {t.design_order}")
        if t.design_order < max_condition_order(t.kind):
            c.check(not check_order_conditions(bt, t.design_order + 1).passes, f"{name} fails order +1")
    c.note("5 methods")
    c.finish(capsys)


def test_criterion_2_butcher(capsys):
    c = Criterion(2, 1.0)
    worst = 0.0
    for name, mats in PRINTED.items():
        bt = to_butcher(get_method(name))
        for key, want in mats.items():
            d = float(np.max(np.abs(getattr(bt, key) - want)))
            worst = max(worst, d)
            c.check(d < 1e-12, f"{name} {key} off by {d:.1e}")
    t4 = get_method("ssp-imdrk-4")
    c.check(check_order_conditions(to_butcher(t4), 4).passes, "fourth-order method via converted form")
    c.note(f"max deviation {worst:.1e}")
    c.finish(capsys)


def _scalar_positive(method, dt):
    s = scalar_decay()
    mon = PositivityMonitor(s)
    monitored_run([10.0], 0.0, 2.0, round(2.0 / dt), get_method(method), s, [mon])
    return mon.report.passes


def test_criterion_3_positivity(capsys):
    c = Criterion(3, 1.0)
    for name in ("implicit-taylor-2", "ssp-imdrk-3", "ssp-imdrk-4"):
        for k in range(2, 7):
            c.check(_scalar_positive(name, 2.0**-k), f"{name} dt=1/{2**k}")
    c.check(not _scalar_positive("dirk-2", 1 / 32), "dirk-2 loses positivity at 1/32")
    c.check(_scalar_positive("dirk-2", 1 / 64), "dirk-2 positive at 1/64")
    c.check(not _scalar_positive("dirk-3", 1 / 64), "dirk-3 loses positivity at 1/64")
    c.check(_scalar_positive("dirk-3", 1 / 128), "dirk-3 positive at 1/128")
    c.finish(capsys)


def test_criterion_4_ode_order(capsys):
    c = Criterion(4, 30.0)
    setup = problem_setup("ode-relaxation")
    # independent cross-checks of the self-refined references
    ref1 = reference_solution(setup, 1.0)
    s1 = ode_relaxation(1.0)
    radau = solve_ivp(lambda t, u: s1.eval_F(u) + s1.eval_G(u), (0, 1), [2.0, 0.0], method="Radau",
                      rtol=1e-13, atol=1e-15).y[:, -1]
    c.check(np.max(np.abs(ref1 - radau)) < 1e-8, "eps=1 reference vs stiff solver")
    ref0 = reference_solution(setup, 1e-10)
    c.check(abs(ref0[0] - ode_relaxation(1e-10).limit_solution(1.0)) < 5e-10 + 1e-9, "eps=1e-10 reference vs limit")
    cases = [(1.0, [1e-2 * 2.0**-k for k in range(6)]), (1e-10, [1e-1 * 2.0**-k for k in range(6)])]
    for name, p, tol in (("ssp-imex-mdrk-2", 2.0, 0.25), ("ssp-imex-mdrk-3", 3.0, 0.3)):
        for eps, dts in cases:
            order = run_convergence(setup, name, [eps], dts).order_for(eps)
            c.note(f"{name} eps={eps:g}: {order:.3f}")
            c.check(order is not None and abs(order - p) <= tol, f"{name} eps={eps:g}")
    c.finish(capsys)


def test_criterion_5_ap(capsys):
    c = Criterion(5, 5.0)
    setup = problem_setup("ode-relaxation")
    for name in IMEX_METHODS:
        chk = ap_limit_check(setup, name, 0.05, [1e-6, 1e-12])
        d12, d6 = chk.deviation(1e-12), chk.deviation(1e-6)
        c.note(f"{name} dev(1e-12)={d12:.1e} ratio={d12 / d6:.1e}")
        c.check(d12 < 1e-8, f"{name} deviation")
        c.check(d12 / d6 < 1e-3, f"{name} ratio")
    c.finish(capsys)


def test_criterion_6_broadwell(capsys):
    c = Criterion(6, 120.0)
    setup = problem_setup("broadwell", transport="upwind", t_end=0.1)
    for name, p in (("ssp-imex-mdrk-2", 2.0), ("ssp-imex-mdrk-3", 3.0)):
        st = run_convergence(setup, name, [1.0, 1e-8], nx_list=[40, 80, 160], cfl=0.5)
        for eps in (1.0, 1e-8):
            order = st.order_for(eps)
            c.note(f"{name} eps={eps:g}: {order:.2f}")
            c.check(order is not None and abs(order - p) <= 0.3, f"{name} eps={eps:g} order")
            s = setup.build(eps, 160)
            mon = ConservationMonitor(s, rel_tol=1e-11)
            _, err = monitored_run(s.initial_data(), 0.0, 0.1, 16, get_method(name), s, [mon])
            c.check(err is None and mon.report.passes, f"{name} eps={eps:g} conservation")
    c.finish(capsys)


def test_criterion_7_bgk(capsys):
    c = Criterion(7, 300.0)
    eps = 1e-3
    setup = problem_setup("bgk", nx=40, nv=150, vmax=15.0, transport="upwind", t_end=0.1)
    s = setup.build(eps)
    f0 = setup.initial_state(s)
    dt = s.grid.dx / (2 * 15.0)
    n = round(0.1 / dt)
    errs = {}
    for name in IMEX_METHODS:
        m = get_method(name)
        mons = [PositivityMonitor(s), EntropyMonitor(s, 1e-10), ConservationMonitor(s, 1e-9)]
        traj, err = monitored_run(f0, 0.0, 0.1, n, m, s, mons)
        c.check(err is None, f"{name} integration")
        for mon in mons:
            c.check(mon.report.passes, f"{name} {mon.report.kind}")
        ref = reference_solution(setup, eps, 0.1, dt=0.1 / n, method=m)
        errs[name] = error_norm(traj.final - ref, "discrete-L2-xv", s)
        c.note(f"{name} error {errs[name]:.2e}")
    c.check(errs["ssp-imex-mdrk-3"] < errs["ssp-imex-mdrk-2"], "third order error smaller")
    c.finish(capsys)


def test_criterion_8_mixed_regime(capsys):
    c = Criterion(8, 600.0)
    res = mixed_regime(IMEX_METHODS, nx=40, t_end=0.5)
    for name in IMEX_METHODS:
        c.check(name in res.profiles and res.positivity[name].passes, f"{name} positivity")
    d = res.distance(*IMEX_METHODS)
    c.note(f"methods {d:.1e}")
    c.check(d < 5e-2, "methods agree")
    for name in IMEX_METHODS:
        dr = res.distance(name, REFERENCE)
        c.note(f"{name} vs reference {dr:.1e}")
        c.check(dr < 1e-1, f"{name} vs reference")
    c.finish(capsys)


def test_criterion_9_properties(capsys):
    c = Criterion(9, 30.0)
    rng = np.random.default_rng(9)
    for model in MODELS:
        s, states = _random_states(model, rng)
        R = s.relaxation
        eps = np.asarray(R.eps, float)
        eps_b = eps[:, None] if eps.ndim else eps
        for u in states:
            G = s.eval_G(u)
            Q = G * eps_b
            c.check(np.max(np.abs(R.moments(Q))) <= 1e-12 * max(1.0, np.max(np.abs(Q))), f"{model} conservation")
            omega = R.moments(u)
            E = R.equilibrium(omega)
            c.check(np.allclose(R.moments(E), omega, rtol=1e-12, atol=1e-12), f"{model} equilibrium moments")
            c.check(np.max(np.abs(s.eval_G(E) * eps_b)) <= 1e-12 * max(1.0, np.max(np.abs(E))),
                    f"{model} equilibrium is rest point")
            rate = np.asarray(R.rate(omega), float)
            rate = rate[..., None] if G.ndim == 2 else rate
            Gd = s.eval_Gdot(u)
            scale = np.max(np.abs(Gd)) + 1e-300
            c.check(np.max(np.abs(Gd + rate / eps_b * G)) <= 1e-10 * scale, f"{model} Gdot identity")
            for delta in (1e-5, 1e-6, 1e-7):
                fd = (s.eval_G(u + delta * G) - s.eval_G(u - delta * G)) / (2 * delta)
                c.check(np.max(np.abs(fd - Gd)) <= 1e-5 * scale, f"{model} Frechet fd {delta:g}")
            if model in ("broadwell", "bgk"):
                dt = s.grid.dx / s.max_speed - 1e-12
                c.check(np.all(u + dt * s.eval_F(u) > 0), f"{model} transport positivity")
            if model != "ode":
                for dt in (1e-3, 1.0, 1e3):
                    c.check(np.all(R.relax(u, omega, dt / eps) > 0), f"{model} backward positivity")
    worst = -np.inf
    for s_ in range(1, 7):
        for _ in range(1000):
            P = np.tril(rng.uniform(0, 1, (s_, s_)), -1)
            sums = P.sum(axis=1)
            P = P * np.where(sums > 0, rng.uniform(0, 1, s_) / np.where(sums > 0, sums, 1), 0)[:, None]
            t = ShuOsherTableau("rand", IMPLICIT, P, None, rng.uniform(0, 1, s_), -rng.uniform(0, 1, s_))
            gap, ks = obstruction_bound(t)
            worst = max(worst, gap - ks)
    c.check(worst <= 0, "obstruction inequality")
    c.note(f"4 models x 100 states; 6000 tableaus, max gap - k_s = {worst:.2e}")
    c.finish(capsys)


@pytest.mark.parametrize("name", [n for n, _ in builtin_methods()])
def test_builtins_listed(name):
    # every registered method is either a checked SSP method or a comparator
    assert name in SSP_METHODS or name.startswith("dirk-")
