"""Command-line front end: ``sspmdrk <subcommand>``.

Exit codes: 0 success, 1 numerical failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    REFERENCE,
    ConservationMonitor,
    EntropyMonitor,
    PositivityMonitor,
    ap_limit_check,
    mixed_regime,
    moments_table,
    monitored_run,
    problem_setup,
    run_convergence,
)
from .integrator import StepperConfig
from .tableau import (
    DIRK,
    ShuOsherTableau,
    TableauError,
    builtin_methods,
    check_order_conditions,
    get_method,
    load,
    max_condition_order,
    obstruction_bound,
    to_butcher,
    validate_ssp_signs,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

EXIT_OK, EXIT_NUMERICAL, EXIT_USAGE = 0, 1, 2


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------- config handling


def read_config(path) -> dict:
    if path is None:
        raise ConfigError("this subcommand needs --config PATH")
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name)
    if not isinstance(sec, dict):
        raise ConfigError(f"config is missing the [{name}] section")
    return sec


_PROBLEM_KEYS = {"name", "eps", "eps_field", "nx", "nv", "vmax", "transport", "t_end", "cfl"}


def _problem(cfg: dict):
    sec = _section(cfg, "problem")
    unknown = set(sec) - _PROBLEM_KEYS
    if unknown:
        raise ConfigError(f"unknown [problem] keys: {', '.join(sorted(unknown))}")
    if "name" not in sec:
        raise ConfigError("[problem] needs a name")
    params = {k: sec[k] for k in ("nx", "nv", "vmax", "transport", "t_end", "eps_field") if k in sec}
    if params.get("transport", "upwind") not in ("upwind", "weno5"):
        raise ConfigError(f"unknown transport {params['transport']!r}")
    try:
        setup = problem_setup(sec["name"], **params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return setup, sec


def _method(name) -> ShuOsherTableau:
    try:
        return get_method(name)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0]) if exc.args else f"unknown method {name!r}") from exc


def _stepper(cfg: dict) -> StepperConfig:
    try:
        return StepperConfig(**cfg.get("newton", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[newton]: {exc}") from exc


def _float_list(sec: dict, key: str, required=True) -> list[float] | None:
    val = sec.get(key)
    if val is None:
        if required:
            raise ConfigError(f"missing key {key!r}")
        return None
    if not isinstance(val, list):
        val = [val]
    try:
        return [float(v) for v in val]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key!r} must be numbers") from exc


def config_hash(cfg: dict, extra: dict) -> str:
    blob = json.dumps({"config": cfg, "flags": extra}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------- manifests and output


class Outputs:
    """Collects output files and writes them with a manifest comment header."""

    def __init__(self, out_dir, subcommand, cfg_hash, method, params):
        self.dir = Path(out_dir)
        self.subcommand = subcommand
        self.cfg_hash = cfg_hash
        self.method = method
        self.params = params
        self.files: dict[str, tuple[str, str]] = {}  # name -> (body, comment prefix)
        self.t0 = time.perf_counter()

    def add(self, name: str, body: str, comment: str = "#"):
        self.files[name] = (body, comment)

    def manifest(self, status: str) -> list[str]:
        params = ", ".join(f"{k}={self.params[k]!r}" for k in sorted(self.params))
        return [
            "sspmdrk run manifest",
            f"subcommand: {self.subcommand}",
            f"config_sha256: {self.cfg_hash}",
            f"method: {self.method}",
            f"parameters: {params}",
            f"outputs: {', '.join(sorted(self.files))}",
            f"version: {__version__}",
            f"status: {status}",
            f"wall_time: {time.perf_counter() - self.t0:.3f} s",
        ]

    def write(self, status: str = "OK") -> list[Path]:
        self.dir.mkdir(parents=True, exist_ok=True)
        header = self.manifest(status)
        paths = []
        for name in sorted(self.files):
            body, c = self.files[name]
            p = self.dir / name
            p.write_text("".join(f"{c} {line}\n" for line in header) + body)
            paths.append(p)
        return paths


def _fmt(x) -> str:
    return repr(float(x))


def _csv(columns: list[str], rows) -> str:
    lines = [",".join(columns)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- verify-tableaus


def method_report(t: ShuOsherTableau) -> tuple[str, bool]:
    """Text report for one tableau and whether it is SSP and meets its order."""
    lines = [f"method {t.name} ({t.kind}, {t.s} stages, r = {t.r!r})"]
    signs = validate_ssp_signs(t)
    ssp = signs.passes
    if t.kind == DIRK:
        lines.append("  SSP signs: not SSP (comparator)" if not ssp else "  SSP signs: pass")
    else:
        lines.append("  " + signs.format().replace("\n", "\n  "))
    bt = to_butcher(t)
    top = max_condition_order(t.kind)
    design = t.design_order
    order_ok = True
    if design is None:
        design = 0
        for p in range(1, top + 1):
            if check_order_conditions(bt, p).passes:
                design = p
        lines.append(f"  highest order satisfied: {design}")
    else:
        rep = check_order_conditions(bt, design)
        order_ok = rep.passes
        lines.append("  " + rep.format().replace("\n", "\n  "))
    if 0 < design < top:
        nxt = check_order_conditions(bt, design + 1)
        lines.append(f"  order {design + 1}: max residual {nxt.max_abs_residual:.3e} ({'pass' if nxt.passes else 'fail'})")
    return "\n".join(lines), ssp and order_ok


def _obstruction_samples(rng, s, count):
    worst = -np.inf
    for _ in range(count):
        P = np.tril(rng.uniform(0, 1, (s, s)), -1)
        sums = P.sum(axis=1)
        scale = np.where(sums > 0, rng.uniform(0, 1, s) / np.maximum(sums, 1e-300), 0.0)
        P = P * scale[:, None]
        D = rng.uniform(0, 1, s)
        Dd = -rng.uniform(0, 1, s)
        t = ShuOsherTableau("random", "implicit-two-derivative", P, None, D, Dd)
        gap, ks = obstruction_bound(t)
        worst = max(worst, gap - ks)
    return worst


def cmd_verify_tableaus(args, _cfg) -> int:
    failed = False
    for _, t in builtin_methods():
        text, ok = method_report(t)
        print(text)
        if t.kind != DIRK and not ok:
            failed = True
    for path in args.files:
        try:
            t = load(path)
        except (OSError, TableauError) as exc:
            print(f"error: {path}: {exc}", file=sys.stderr)
            return EXIT_USAGE
        text, ok = method_report(t)
        print(f"file {path}")
        print(text)
        if not ok:
            failed = True
    if args.samples:
        rng = np.random.default_rng(args.seed)
        for s in range(1, 7):
            worst = _obstruction_samples(rng, s, args.samples)
            verdict = "holds" if worst <= 0 else "VIOLATED"
            print(f"obstruction s={s}: {args.samples} samples, max(bTe - bTc - k_s) = {worst:.3e} ({verdict})")
            failed |= worst > 0
    return EXIT_NUMERICAL if failed else EXIT_OK


# ---------------------------------------------------------------- run


def _grid_columns(setup, system, u):
    x = system.grid.centers
    if setup.name == "broadwell":
        names = ["f_plus", "f_zero", "f_minus"]
    elif setup.name == "hyperbolic-relaxation":
        names = ["u1", "u2"]
    else:
        names = [f"f_{j}" for j in range(u.shape[1])]
    return _csv(["x"] + names, np.column_stack([x, u]))


def cmd_run(args, cfg) -> int:
    setup, psec = _problem(cfg)
    rsec = _section(cfg, "run")
    method = _method(rsec.get("method"))
    stepper = _stepper(cfg)
    eps = psec.get("eps")
    if setup.name not in ("scalar-decay",) and eps is None and setup.eps_field is None:
        raise ConfigError("[problem] needs eps (or eps_field)")
    system = setup.build(eps)
    u0 = setup.initial_state(system)
    T = float(setup.t_end)
    if "n_steps" in rsec:
        n = int(rsec["n_steps"])
    elif "dt" in rsec:
        n = max(1, round(T / float(rsec["dt"])))
    elif "cfl" in psec and setup.kind != "ode":
        n = max(1, round(T / (float(psec["cfl"]) * system.grid.dx / setup.max_speed())))
    else:
        raise ConfigError("[run] needs dt or n_steps (or [problem] cfl for grid problems)")
    if n < 1:
        raise ConfigError("n_steps must be positive")
    wanted = rsec.get("monitors", ["positivity"])
    mons = {}
    for name in wanted:
        if name == "positivity":
            mons[name] = PositivityMonitor(system)
        elif name == "entropy":
            if setup.name != "bgk":
                raise ConfigError("the entropy monitor needs the bgk problem")
            mons[name] = EntropyMonitor(system, float(rsec.get("entropy_tol", 1e-10)))
        elif name == "conservation":
            if setup.kind == "ode":
                raise ConfigError("the conservation monitor needs a grid problem")
            mons[name] = ConservationMonitor(system, float(rsec.get("conservation_tol", 1e-11)))
        else:
            raise ConfigError(f"unknown monitor {name!r}")
    params = {"problem": setup.name, "eps": eps if setup.eps_field is None else setup.eps_field,
              "t_end": T, "n_steps": n, "dt": T / n}
    if setup.kind != "ode":
        params.update(nx=setup.nx, transport=setup.transport)
    if setup.kind == "kinetic":
        params.update(nv=setup.nv, vmax=setup.vmax)
    out = Outputs(args.out, "run", config_hash(cfg, {}), method.name, params)
    snaps = "all" if setup.kind == "ode" else "final"
    traj, err = monitored_run(u0, 0.0, T, n, method, system, list(mons.values()), stepper, snaps)
    if setup.kind == "ode":
        cols = ["t"] + [f"u{k + 1}" for k in range(len(u0))]
        out.add("trajectory.csv", _csv(cols, [[t, *u] for t, u in zip(traj.times, traj.states)]))
    else:
        out.add("final_state.csv", _grid_columns(setup, system, traj.final))
        if setup.kind == "kinetic":
            out.add("moments.csv", _csv(["x", "rho", "u", "T"], moments_table(system, traj.final)))
        elif setup.name == "broadwell":
            rho, mom, z = system.fluid_variables(traj.final)
            out.add("moments.csv", _csv(["x", "rho", "m", "z"], np.column_stack([system.grid.centers, rho, mom, z])))
    report = "".join(m.report.format() + "\n" for m in mons.values())
    if err is not None:
        report += f"integration: FAILED at step {err.step_index}: {err.cause}\n"
    out.add("monitors.txt", report)
    status = "OK" if err is None else f"FAILED at step {err.step_index}: {err.cause}"
    out.write(status)
    print(report, end="")
    return EXIT_OK if err is None else EXIT_NUMERICAL


# ---------------------------------------------------------------- convergence


def cmd_convergence(args, cfg) -> int:
    setup, psec = _problem(cfg)
    csec = _section(cfg, "convergence")
    methods = csec.get("methods") or ([csec["method"]] if "method" in csec else [])
    if not methods:
        raise ConfigError("[convergence] needs method or methods")
    ms = [_method(m) for m in methods]
    eps_list = _float_list(csec, "eps", required=setup.name != "scalar-decay") or [1.0]
    dt_list = _float_list(csec, "dt", required=False)
    nx_list = csec.get("nx")
    cfl = psec.get("cfl")
    if nx_list is None and not dt_list:
        raise ConfigError("[convergence] needs a nonempty dt list (or nx with [problem] cfl)")
    if dt_list and any(b >= a for a, b in zip(dt_list, dt_list[1:])):
        raise ConfigError("dt values must be strictly decreasing")
    stepper = _stepper(cfg)
    failed = False
    for m in ms:
        t0 = time.perf_counter()
        try:
            study = run_convergence(setup, m, eps_list, None if nx_list else dt_list, csec.get("norm"),
                                    nx_list=nx_list, cfl=cfl, window=int(csec.get("window", 4)),
                                    jobs=args.jobs, cfg=stepper,
                                    reference_tol=float(csec.get("reference_tol", 1e-11)))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        params = {"problem": setup.name, "eps": eps_list, "t_end": setup.t_end,
                  "norm": csec.get("norm") or setup.default_norm}
        if nx_list:
            params.update(nx=nx_list, cfl=cfl)
        out = Outputs(args.out, "convergence", config_hash(cfg, {}), m.name, params)
        out.t0 = t0
        stem = f"convergence_{setup.name}_{m.name}"
        out.add(f"{stem}.csv", study.to_csv())
        out.add(f"{stem}.gnuplot", study.gnuplot_script(f"{stem}.csv"))
        status = "OK"
        if study.failures:
            failed = True
            status = "FAILED runs: " + "; ".join(study.failures)
        out.write(status)
        for eps, order in zip(study.eps_values, study.estimated_orders):
            txt = "n/a" if order is None else f"{order:.3f}"
            print(f"{m.name} eps={eps:g}: estimated order {txt}")
        for msg in study.failures:
            print(f"  failed: {msg}")
    return EXIT_NUMERICAL if failed else EXIT_OK


# ---------------------------------------------------------------- ap-check


def cmd_ap_check(args, cfg) -> int:
    setup, _ = _problem(cfg)
    asec = _section(cfg, "ap")
    methods = asec.get("methods") or [asec.get("method", "ssp-imex-mdrk-2")]
    eps_list = _float_list(asec, "eps")
    if "dt" not in asec:
        raise ConfigError("[ap] needs dt")
    dt = float(asec["dt"])
    t_end = float(asec.get("t_end", setup.t_end))
    for name in methods:
        m = _method(name)
        try:
            res = ap_limit_check(setup, m, dt, eps_list, t_end=t_end, cfg=_stepper(cfg))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        params = {"problem": setup.name, "dt": dt, "t_end": t_end, "eps": eps_list}
        out = Outputs(args.out, "ap-check", config_hash(cfg, {}), m.name, params)
        out.add(f"ap_check_{setup.name}_{m.name}.csv",
                _csv(["eps", "deviation"], zip(res.eps_values, res.deviations)))
        out.write()
        print(res.format(), end="")
    return EXIT_OK


# ---------------------------------------------------------------- mixed-regime


def cmd_mixed_regime(args, cfg) -> int:
    sec = cfg.get("mixed", {})
    methods = sec.get("methods", ["ssp-imex-mdrk-2", "ssp-imex-mdrk-3"])
    for m in methods:
        _method(m)
    params = {"nx": int(sec.get("nx", 40)), "nv": int(sec.get("nv", 150)), "vmax": float(sec.get("vmax", 15.0)),
              "t_end": float(sec.get("t_end", 0.5)), "cfl": float(sec.get("cfl", 1 / 24)),
              "reference": bool(sec.get("reference", True))}
    res = mixed_regime(tuple(methods), cfg=_stepper(cfg), **params)
    out = Outputs(args.out, "mixed-regime", config_hash(cfg, {}), ",".join(methods), params)
    names = list(res.profiles)
    for name in names:
        rows = np.column_stack([res.x, res.profiles[name]])
        out.add(f"mixed_moments_{name}.csv", _csv(["x", "rho", "u", "T"], rows))
    dist = [(a, b, res.distance(a, b)) for i, a in enumerate(names) for b in names[i + 1:]]
    summary = "run_a,run_b,l2_distance\n" + "".join(f"{a},{b},{_fmt(d)}\n" for a, b, d in dist)
    out.add("mixed_regime_distances.csv", summary)
    out.add("mixed_regime_positivity.txt", "".join(f"{k} {v.format()}\n" for k, v in res.positivity.items()))
    plots = ", \\\n     ".join(f"'mixed_moments_{n}.csv' using 1:2 with linespoints title '{n}'" for n in names)
    out.add("mixed_regime.gnuplot", "\n".join([
        "set terminal svg size 640,480", "set output 'mixed_regime_rho.svg'", "set datafile separator ','",
        "set key autotitle columnhead", "set xlabel 'x'", "set ylabel 'rho'", "plot " + plots, "",
    ]))
    missing = [m for m in methods if m not in res.profiles]
    status = "OK" if not missing else "FAILED runs: " + ", ".join(missing)
    out.write(status)
    for k, v in res.positivity.items():
        print(f"{k}: {v.format().splitlines()[0]}")
    for a, b, d in dist:
        print(f"distance {a} vs {b}: {d:.3e}")
    if REFERENCE in res.profiles:
        print(f"reference dt = {res.dt[REFERENCE]:.3e}")
    return EXIT_NUMERICAL if missing else EXIT_OK


# ---------------------------------------------------------------- entry point


COMMANDS = {
    "verify-tableaus": cmd_verify_tableaus,
    "run": cmd_run,
    "convergence": cmd_convergence,
    "ap-check": cmd_ap_check,
    "mixed-regime": cmd_mixed_regime,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS, help="TOML experiment config")
    common.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--jobs", metavar="N", type=int, default=argparse.SUPPRESS, help="worker cap")
    common.add_argument("--seed", metavar="N", type=int, default=argparse.SUPPRESS, help="seed for random checks")
    parser = argparse.ArgumentParser(prog="sspmdrk", parents=[common], description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    v = sub.add_parser("verify-tableaus", parents=[common], help="check SSP signs and order conditions")
    v.add_argument("files", nargs="*", metavar="FILE", help="extra tableau files")
    v.add_argument("--samples", type=int, default=0, help="random tableaus per stage count for the obstruction check")
    sub.add_parser("run", parents=[common], help="integrate one configured problem")
    sub.add_parser("convergence", parents=[common], help="temporal convergence study")
    sub.add_parser("ap-check", parents=[common], help="asymptotic-limit check")
    sub.add_parser("mixed-regime", parents=[common], help="BGK with variable Knudsen number")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    for key, default in (("config", None), ("out", "."), ("jobs", 1), ("seed", 0)):
        if not hasattr(args, key):
            setattr(args, key, default)
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.config or args.command not in ("verify-tableaus", "mixed-regime"):
            cfg = read_config(args.config)
        else:
            cfg = {}
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
