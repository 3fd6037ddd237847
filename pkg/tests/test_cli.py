import io
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from sspmdrk import get_method
from sspmdrk.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main, method_report
from sspmdrk.tableau import dumps

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def _body(path):
    """File contents without the manifest header."""
    return "".join(line for line in Path(path).read_text().splitlines(True) if not line.startswith("#"))


def _table(path):
    return np.loadtxt(io.StringIO(_body(path)), delimiter=",", skiprows=1, ndmin=2)


def _manifest(path):
    return {
        k.strip(): v.strip()
        for k, v in (line[2:].split(":", 1) for line in Path(path).read_text().splitlines()
                     if line.startswith("# ") and ":" in line)
    }


# ---------------------------------------------------------------- verify-tableaus


def test_verify_builtins(capsys):
    assert main(["verify-tableaus"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in ("implicit-taylor-2", "ssp-imdrk-3", "ssp-imdrk-4", "ssp-imex-mdrk-2", "ssp-imex-mdrk-3"):
        assert f"method {name} " in out
    assert out.count("SSP signs: not SSP (comparator)") == 2


def test_verify_user_file_bad_sign(tmp_path, capsys):
    text = dumps(get_method("ssp-imdrk-3")).replace(
        "diag_Ddot = [-0.16666666666666666,", "diag_Ddot = [0.16666666666666666,")
    p = _write(tmp_path, "bad.toml", text)
    assert main(["verify-tableaus", str(p)]) == EXIT_NUMERICAL
    out = capsys.readouterr().out
    assert "Ddot" in out.split(f"file {p}")[1]


def test_verify_user_file_copy_identical(tmp_path, capsys):
    t = get_method("ssp-imdrk-3")
    p = _write(tmp_path, "copy.toml", dumps(t))
    assert main(["verify-tableaus", str(p)]) == EXIT_OK
    out = capsys.readouterr().out
    builtin_text, _ = method_report(t)
    assert out.split(f"file {p}\n")[1].strip() == builtin_text.strip()
    assert out.count(builtin_text) == 2


def test_verify_user_file_parse_error(tmp_path, capsys):
    p = _write(tmp_path, "broken.toml", "[method]\nname = \"x\"\nP = [[0.0,\n")
    assert main(["verify-tableaus", str(p)]) == EXIT_USAGE
    assert "line" in capsys.readouterr().err


def test_verify_missing_file(tmp_path):
    assert main(["verify-tableaus", str(tmp_path / "absent.toml")]) == EXIT_USAGE


def test_verify_obstruction_samples(capsys):
    assert main(["verify-tableaus", "--samples", "50", "--seed", "3"]) == EXIT_OK
    lines = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("obstruction")]
    assert len(lines) == 6 and all("holds" in ln for ln in lines)


# ---------------------------------------------------------------- usage errors


def test_usage_errors(tmp_path, capsys):
    assert main([]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["run"]) == EXIT_USAGE  # no config
    assert main(["run", "--config", str(tmp_path / "nope.toml")]) == EXIT_USAGE
    bad = _write(tmp_path, "bad.toml", "[problem\n")
    assert main(["run", "--config", str(bad)]) == EXIT_USAGE
    unknown = _write(tmp_path, "u.toml", '[problem]\nname = "lorenz"\n[run]\nmethod = "dirk-2"\ndt = 0.1\n')
    assert main(["run", "--config", str(unknown)]) == EXIT_USAGE
    meth = _write(tmp_path, "m.toml", '[problem]\nname = "scalar-decay"\n[run]\nmethod = "rk4"\ndt = 0.1\n')
    assert main(["run", "--config", str(meth)]) == EXIT_USAGE
    assert main(["verify-tableaus", "--jobs", "0"]) == EXIT_USAGE
    capsys.readouterr()


def test_global_flags_either_side(tmp_path):
    cfg = str(CONFIGS / "scalar_decay.toml")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--config", cfg, "--out", str(a), "run"]) == EXIT_OK
    assert main(["run", "--config", cfg, "--out", str(b)]) == EXIT_OK
    assert _body(a / "trajectory.csv") == _body(b / "trajectory.csv")


# ---------------------------------------------------------------- run


def test_run_scalar_positive(tmp_path, capsys):
    assert main(["run", "--config", str(CONFIGS / "scalar_decay.toml"), "--out", str(tmp_path)]) == EXIT_OK
    data = _table(tmp_path / "trajectory.csv")
    assert data.shape == (9, 2)
    assert np.all(data[:, 1] > 0)
    assert "positivity: PASS" in (tmp_path / "monitors.txt").read_text()
    m = _manifest(tmp_path / "trajectory.csv")
    assert m["subcommand"] == "run" and m["method"] == "implicit-taylor-2" and m["status"] == "OK"
    assert len(m["config_sha256"]) == 64
    assert "trajectory.csv" in m["outputs"] and "wall_time" in m


def test_run_failure_exit_and_marker(tmp_path, capsys):
    code = main(["run", "--config", str(CONFIGS / "scalar_decay_dirk2.toml"), "--out", str(tmp_path)])
    assert code == EXIT_NUMERICAL
    m = _manifest(tmp_path / "trajectory.csv")
    assert m["status"].startswith("FAILED at step 1")
    rep = (tmp_path / "monitors.txt").read_text()
    assert "positivity: FAIL" in rep and "integration: FAILED" in rep
    # the initial state is kept
    assert _body(tmp_path / "trajectory.csv").splitlines()[1] == "0.0,10.0"


def test_run_broadwell_moments(tmp_path, capsys):
    assert main(["run", "--config", str(CONFIGS / "broadwell_run.toml"), "--out", str(tmp_path)]) == EXIT_OK
    mom = _table(tmp_path / "moments.csv")
    assert mom.shape == (80, 4)
    assert _body(tmp_path / "moments.csv").splitlines()[0] == "x,rho,m,z"
    rho, m, z = mom[:, 1], mom[:, 2], mom[:, 3]
    np.testing.assert_allclose(z, (rho**2 + m**2) / (2 * rho), rtol=1e-6)
    assert "conservation: PASS" in (tmp_path / "monitors.txt").read_text()
    assert _manifest(tmp_path / "moments.csv")["parameters"].find("t_end=0.1") >= 0


def test_run_bgk_short(tmp_path, capsys):
    cfg = _write(tmp_path, "bgk.toml", "\n".join([
        "[problem]", 'name = "bgk"', "eps = 1e-3", "nx = 12", "nv = 60", "vmax = 10.0", "t_end = 0.01",
        "[run]", 'method = "ssp-imex-mdrk-3"', "n_steps = 4",
        'monitors = ["positivity", "entropy", "conservation"]', "conservation_tol = 1e-9", "",
    ]))
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    assert _body(out / "moments.csv").splitlines()[0] == "x,rho,u,T"
    assert _table(out / "final_state.csv").shape == (12, 61)
    rep = (out / "monitors.txt").read_text()
    assert "entropy: PASS" in rep and "conservation: PASS" in rep


def test_run_byte_identical(tmp_path, capsys):
    cfg = str(CONFIGS / "broadwell_run.toml")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", cfg, "--out", str(a)]) == EXIT_OK
    assert main(["run", "--config", cfg, "--out", str(b)]) == EXIT_OK
    for name in ("final_state.csv", "moments.csv", "monitors.txt"):
        strip = [ln for ln in (a / name).read_text().splitlines() if not ln.startswith("# wall_time")]
        other = [ln for ln in (b / name).read_text().splitlines() if not ln.startswith("# wall_time")]
        assert strip == other


def test_run_bad_monitor(tmp_path, capsys):
    cfg = _write(tmp_path, "c.toml",
                 '[problem]\nname = "scalar-decay"\n[run]\nmethod = "ssp-imdrk-3"\ndt = 0.5\nmonitors = ["entropy"]\n')
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_USAGE


# ---------------------------------------------------------------- convergence


def test_convergence_outputs(tmp_path, capsys):
    cfg = _write(tmp_path, "c.toml", "\n".join([
        "[problem]", 'name = "ode-relaxation"', "t_end = 1.0",
        "[convergence]", 'method = "ssp-imex-mdrk-2"', "eps = [1e-10]", "dt = [0.1, 0.05, 0.025, 0.0125]", "",
    ]))
    assert main(["convergence", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_OK
    csv = tmp_path / "convergence_ode-relaxation_ssp-imex-mdrk-2.csv"
    rows = _body(csv).splitlines()
    assert rows[0] == "eps,dt,error,order_estimate"
    order = float(rows[-1].split(",")[3])
    assert abs(order - 2.0) < 0.25
    gp = (tmp_path / "convergence_ode-relaxation_ssp-imex-mdrk-2.gnuplot").read_text()
    assert "convergence_ode-relaxation_ssp-imex-mdrk-2.csv" in gp
    assert "estimated order" in capsys.readouterr().out


def test_convergence_empty_dt(tmp_path, capsys):
    cfg = _write(tmp_path, "c.toml", "\n".join([
        "[problem]", 'name = "ode-relaxation"',
        "[convergence]", 'method = "ssp-imex-mdrk-2"', "eps = [1.0]", "dt = []", "",
    ]))
    assert main(["convergence", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_USAGE
    assert "dt" in capsys.readouterr().err


def test_convergence_grid(tmp_path, capsys):
    cfg = _write(tmp_path, "c.toml", "\n".join([
        "[problem]", 'name = "broadwell"', "t_end = 0.1", "cfl = 0.5",
        "[convergence]", 'method = "ssp-imex-mdrk-3"', "eps = [1.0]", "nx = [20, 40]", "",
    ]))
    assert main(["convergence", "--config", str(cfg), "--out", str(tmp_path), "--jobs", "2"]) == EXIT_OK
    rows = _body(tmp_path / "convergence_broadwell_ssp-imex-mdrk-3.csv").splitlines()
    assert [float(r.split(",")[1]) for r in rows[1:]] == [0.05, 0.025]


def test_convergence_failed_runs_exit(tmp_path, capsys):
    cfg = _write(tmp_path, "c.toml", "\n".join([
        "[problem]", 'name = "scalar-decay"', "t_end = 0.25",
        "[convergence]", 'method = "dirk-2"', "dt = [0.25, 0.0078125]", "",
    ]))
    assert main(["convergence", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_NUMERICAL
    csv = tmp_path / "convergence_scalar-decay_dirk-2.csv"
    assert _manifest(csv)["status"].startswith("FAILED runs")
    assert ",nan," in _body(csv)


# ---------------------------------------------------------------- ap-check and mixed regime


def test_ap_check(tmp_path, capsys):
    assert main(["ap-check", "--config", str(CONFIGS / "ap_check.toml"), "--out", str(tmp_path)]) == EXIT_OK
    for m in ("ssp-imex-mdrk-2", "ssp-imex-mdrk-3"):
        data = _table(tmp_path / f"ap_check_ode-relaxation_{m}.csv")
        eps, dev = data[:, 0], data[:, 1]
        assert dev[eps == 1e-12][0] < 1e-8
        assert dev[eps == 1e-12][0] / dev[eps == 1e-6][0] < 1e-3


def test_mixed_regime_small(tmp_path, capsys):
    cfg = _write(tmp_path, "m.toml", "\n".join([
        "[mixed]", "nx = 16", "nv = 60", "vmax = 10.0", "t_end = 0.01", "reference = false", "",
    ]))
    assert main(["mixed-regime", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_OK
    for m in ("ssp-imex-mdrk-2", "ssp-imex-mdrk-3"):
        assert _body(tmp_path / f"mixed_moments_{m}.csv").splitlines()[0] == "x,rho,u,T"
    dist = _body(tmp_path / "mixed_regime_distances.csv").splitlines()
    assert dist[0] == "run_a,run_b,l2_distance" and len(dist) == 2
    assert "PASS" in (tmp_path / "mixed_regime_positivity.txt").read_text()


def test_console_script_entry():
    proc = subprocess.run([sys.executable, "-m", "sspmdrk.cli", "verify-tableaus"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "ssp-imex-mdrk-3" in proc.stdout


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.toml")))
def test_shipped_configs_parse(name):
    from sspmdrk.cli import read_config

    cfg = read_config(CONFIGS / name)
    assert "problem" in cfg or "mixed" in cfg
