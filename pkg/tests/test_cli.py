import os
import subprocess
import sys

import numpy as np
import pytest

from cnlf_mhd.cli import ConfigError, PRESETS, RunConfig, main, parse_config, run_experiment, write_vtk
from cnlf_mhd.mesh import build_rect_mesh


def test_empty_config_gives_defaults():
    cfg = parse_config("")
    assert (cfg.nu, cfg.mu, cfg.sigma, cfg.T, cfg.n) == (1.0, 1.0, 1.0, 1.0, 8)


def test_stiff_regime_keys():
    cfg = parse_config("physics.nu = 0.001\nphysics.sigma = 1000  # comment\n")
    assert (cfg.nu, cfg.mu, cfg.sigma) == (0.001, 1.0, 1000.0)


@pytest.mark.parametrize("text, needle", [
    ("physics.nu = -1", "nu"),
    ("\n\nphysics.viscosity = 1", "line 3"),
    ("mesh.n 8", "line 1"),
    ("mesh.n = eight", "line 1"),
    ("experiment.kind = sweep", "experiment.kind"),
    ("space.magnetic = edge", "space.magnetic"),
])
def test_config_errors(text, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config(text)


def test_presets():
    assert parse_config("", "table3").sigma == 1000.0
    ha10 = parse_config("mesh.n = 12", "hartmann-ha10")
    assert (ha10.nu, ha10.sigma, ha10.n, ha10.kind) == (0.1, 10.0, 12, "hartmann")
    assert set(PRESETS) == {"table1", "table2", "table3", "table4", "hartmann-ha1", "hartmann-ha10"}
    with pytest.raises(ConfigError):
        parse_config("", "table9")


def test_scheme_snaps_final_time():
    cfg = parse_config("time.T = 1.0\nmesh.n = 6")
    sc = cfg.scheme()
    assert sc.dt == pytest.approx(0.1 / 6) and sc.num_steps == 60


def test_vtk_two_triangles(tmp_path):
    mesh = build_rect_mesh(1, 1)
    path = tmp_path / "f.vtk"
    write_vtk(mesh, {"c": np.full(4, 2.0), "v": np.ones((2, 4))}, path)
    text = path.read_text().splitlines()
    assert "POINTS 4 double" in text
    assert "CELLS 2 8" in text
    i = text.index("CELL_TYPES 2")
    assert text[i + 1:i + 3] == ["5", "5"]
    assert "VECTORS v double" in text
    with pytest.raises(ValueError):
        write_vtk(mesh, {"bad": np.ones(5)}, path)


def test_single_zero_run_is_silent_and_deterministic(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"r{k}"
        cfg = parse_config(f"run.problem = zero\nmesh.n = 4\ntime.T = 0.25\noutput.dir = {out}")
        assert run_experiment(cfg) == 0
        outs.append((out / "energy_log.csv").read_bytes())
    assert outs[0] == outs[1]
    rows = np.loadtxt(tmp_path / "r0" / "energy_log.csv", delimiter=",", skiprows=1)
    assert np.abs(rows[:, 2:6]).max() <= 1e-12
    assert (tmp_path / "r0" / "fields.vtk").exists()


def test_convergence_csv(tmp_path):
    cfg = parse_config(f"experiment.kind = convergence\nmesh.resolutions = 8, 16\noutput.dir = {tmp_path}")
    assert run_experiment(cfg) == 0
    rows = (tmp_path / "convergence.csv").read_text().splitlines()
    assert rows[0].startswith("1/h,||u_h-u||_0")
    assert [r.split(",")[0] for r in rows] == ["1/h", "8", "16", "1/h", "16"]
    order = float(rows[4].split(",")[1])
    assert 1.8 <= order <= 2.3


def test_hartmann_run(tmp_path):
    cfg = parse_config("experiment.kind = hartmann\nmesh.n = 2\ntime.dt = 0.1\ntime.T = 100\nsteady.tol = 1e-3\n"
                       f"output.vtk = no\noutput.dir = {tmp_path}")
    assert run_experiment(cfg) == 0
    rows = (tmp_path / "hartmann_slice.csv").read_text().splitlines()
    assert rows[0] == "y,u1_h,u1,H1_h,H1" and len(rows) == 22
    summary = (tmp_path / "hartmann_summary.txt").read_text()
    assert "steady True" in summary


def test_hartmann_without_steady_state_fails(tmp_path):
    cfg = parse_config("experiment.kind = hartmann\nmesh.n = 2\ntime.dt = 0.1\ntime.T = 0.3\n"
                       f"output.vtk = no\noutput.dir = {tmp_path}")
    assert run_experiment(cfg) == 3


def test_main_run_and_config_error(tmp_path, capsys):
    conf = tmp_path / "c.conf"
    conf.write_text("run.problem = zero\nmesh.n = 2\ntime.T = 0.2\n")
    assert main(["run", "--config", str(conf), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "energy_log.csv").exists()
    conf.write_text("physics.nu = 0\n")
    assert main(["run", "--config", str(conf)]) == 1
    assert "config error" in capsys.readouterr().err


def test_console_script_with_thread_cap(tmp_path):
    conf = tmp_path / "c.conf"
    conf.write_text("run.problem = zero\nmesh.n = 2\ntime.T = 0.2\n")
    env = dict(os.environ, CNLF_MHD_THREADS="1")
    proc = subprocess.run([sys.executable, "-m", "cnlf_mhd.cli", "run", "--config", str(conf),
                           "--out", str(tmp_path / "o")], env=env, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr


def test_run_config_validation():
    with pytest.raises(ConfigError):
        RunConfig(n=0)
    with pytest.raises(ConfigError):
        RunConfig(dt=-0.1)
