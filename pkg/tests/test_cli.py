import csv

import numpy as np
import pytest

from tdbem.cli import (
    RunConfig,
    eoc_values,
    load_config,
    main,
    make_config,
    parse_config,
    preset,
    rank_summary,
    step_schedule,
    write_errors,
)
from tdbem.mesh import load_mesh


def _read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_parse_config():
    cfg = parse_config("# comment\nbackend = aca  # trailing\nfmm.order = 3\neps-aca=1e-5\n\n")
    assert cfg == {"backend": "aca", "fmm_order": 3, "eps_aca": 1e-5}
    with pytest.raises(ValueError, match="line 1: unknown key"):
        parse_config("colour = red")
    with pytest.raises(ValueError, match="line 2: expected"):
        parse_config("N = 3\nnonsense")
    with pytest.raises(ValueError, match="bad value"):
        parse_config("N = many")


def test_defaults():
    cfg = RunConfig(eps_aca=1e-5)
    assert cfg.eps == pytest.approx(1e-3) and cfg.tol == 1e-5
    with pytest.raises(ValueError):
        RunConfig(backend="gpu")
    with pytest.raises(ValueError):
        RunConfig(problem="robin")
    assert RunConfig().probe_points().shape == (2, 3)


def test_presets():
    for L, (lev, order, eps) in {1: (1, 1, 1e-4), 3: (2, 3, 1e-6), 5: (4, 5, 1e-8)}.items():
        p = preset(f"paper-level-{L}")
        assert (p["fmm_levels"], p["fmm_order"]) == (lev, order)
        assert p["eps_aca"] == pytest.approx(eps)
    with pytest.raises(ValueError):
        preset("paper-level-9")
    cfg = make_config({"preset": "paper-level-2", "eps_aca": 1e-7})
    assert cfg.level == 2 and cfg.eps_aca == 1e-7 and cfg.eps == pytest.approx(1e-5)


def test_step_schedule():
    from tdbem.mesh import unit_cube
    m = unit_cube(1)
    assert len(step_schedule(make_config({"preset": "paper-level-1"}), m)) == 10
    steps = step_schedule(RunConfig(mesh="x.off", T=3.0), m)
    assert len(steps) == 9 and steps.sum() == pytest.approx(3.0)
    assert steps[0] <= 0.7 * m.h
    s = step_schedule(RunConfig(schedule="0.1, 0.2;0.3"), m)
    assert np.allclose(s, [0.1, 0.2, 0.3])
    with pytest.raises(ValueError):
        step_schedule(RunConfig(schedule="0.1,-1"), m)


def test_errors_and_eoc(tmp_path):
    path = tmp_path / "errors.csv"
    write_errors(path, [{"level": 1, "h": 0.5, "dt": 0.3, "Lmax": 0.8},
                        {"level": 2, "h": 0.25, "dt": 0.15, "Lmax": 0.4}])
    rows = _read_csv(path)
    assert rows[0] == ["level", "h", "dt", "Lmax", "eoc"]
    assert rows[1][4] == "" and float(rows[2][4]) == pytest.approx(1.0)
    assert eoc_values([0.8, 0.4, 0.1]) == pytest.approx([1.0, 2.0])


def test_rank_summary():
    lo, mean, hi = rank_summary([3, 1, 8])
    assert lo <= mean <= hi and (lo, hi) == (1, 8)
    assert rank_summary([]) == (0.0, 0.0, 0.0)


def test_mesh_command(tmp_path, capsys):
    out = tmp_path / "cube.off"
    assert main(["mesh", "cube", "--level", "2", "--out", str(out)]) == 0
    m = load_mesh(out)
    assert (m.n_vertices, m.n_triangles) == (194, 384)
    assert "194 vertices" in capsys.readouterr().out


def test_bad_config_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("backend = quantum\n")
    assert main(["run", "--config", str(cfg)]) == 2
    assert "backend" in capsys.readouterr().err


@pytest.mark.parametrize("backend", ["dense", "aca"])
def test_run_writes_outputs(tmp_path, backend):
    out = tmp_path / "out"
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"preset = paper-level-1\nbackend = {backend}\nout = {out}\n")
    assert main(["stats", "--config", str(cfg)]) == 0
    for name in ("traces.csv", "errors.csv", "compression.csv", "ranks.csv", "freq_histogram.csv",
                 "manifest.txt"):
        assert (out / name).exists()
    traces = _read_csv(out / "traces.csv")
    assert traces[0] == ["step", "t_mid", "probe_0", "probe_1"] and len(traces) == 11
    assert all(np.isfinite(float(v)) for row in traces[1:] for v in row)
    manifest = dict(line.split(" = ", 1) for line in (out / "manifest.txt").read_text().splitlines())
    for key in ("backend", "eps_aca", "contour.q", "contour.k", "contour.N_Q", "Lmax",
                "lhs.rank_mean", "rhs.compression", "causality.ok"):
        assert key in manifest
    assert manifest["causality.ok"] == "True"
    comp = {r[0]: float(r[1]) for r in _read_csv(out / "compression.csv")[1:]}
    if backend == "dense":
        assert comp == {"lhs": 1.0, "rhs": 1.0, "total": 1.0}
    else:
        assert comp["total"] < 1.0
    hist = _read_csv(out / "freq_histogram.csv")
    assert len(hist) - 1 == int(manifest["contour.N_Q"]) // 2


def test_failure_manifest(tmp_path):
    out = tmp_path / "out"
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"mesh = {tmp_path / 'missing.off'}\nout = {out}\n")
    assert main(["run", "--config", str(cfg)]) == 2
    assert "failure = " in (out / "manifest.txt").read_text()


def test_load_config_roundtrip(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("problem = mixed\nN = 12\nT = 2.5\n")
    cfg = load_config(path)
    assert (cfg.problem, cfg.N, cfg.T) == ("mixed", 12, 2.5)


def test_convergence_command(tmp_path, capsys):
    out = tmp_path / "conv"
    assert main(["convergence", "--problem", "mixed", "--levels", "1", "--out", str(out)]) == 0
    rows = _read_csv(out / "errors.csv")
    assert len(rows) == 2 and rows[1][0] == "1"
    assert (out / "level1" / "manifest.txt").exists()
    assert "level 1: Lmax" in capsys.readouterr().out
