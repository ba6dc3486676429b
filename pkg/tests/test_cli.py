import subprocess
import sys

import pytest

from conftest import MESHES
from fracsim.cli import main
from fracsim.scene import parse_scene


def write_scene(tmp_path, extra=""):
    p = tmp_path / "s.scene"
    p.write_text(f"""
[material m]
preset = test
[body]
node = {MESHES / 'block.node'}
ele = {MESHES / 'block.ele'}
material = m
[integrator]
dt = 1e-4
max_steps = 5
[output]
directory = {tmp_path / 'out'}
{extra}
""")
    return p


def test_mesh_info_unit_tet(capsys):
    assert main(["mesh-info", str(MESHES / "unit_tet.node"), str(MESHES / "unit_tet.ele")]) == 0
    out = dict(line.split(" ", 1) for line in capsys.readouterr().out.splitlines())
    assert out["nodes"] == "4" and out["elements"] == "1"
    assert float(out["volume"]) == pytest.approx(1 / 6, rel=1e-12)
    assert out["boundary_faces"] == "4" and out["valid"] == "yes"


def test_validate_ok(tmp_path, capsys):
    assert main(["validate", str(write_scene(tmp_path))]) == 0
    assert capsys.readouterr().out.startswith("ok")


def test_validate_broken_scene(tmp_path, capsys):
    p = write_scene(tmp_path)
    p.write_text(p.read_text().replace("material = m", "material = nope"))
    assert main(["validate", str(p)]) != 0
    assert "nope" in capsys.readouterr().err


def test_validate_missing_mesh(tmp_path, capsys):
    p = write_scene(tmp_path)
    p.write_text(p.read_text().replace("block.node", "missing.node"))
    assert main(["validate", str(p)]) != 0
    assert capsys.readouterr().err


def test_simulate_dt_override_echoed(tmp_path, capsys):
    p = write_scene(tmp_path)
    out = tmp_path / "elsewhere"
    assert main(["simulate", str(p), "--dt", "5e-5", "--max-steps", "3", "--out", str(out)]) == 0
    spec = parse_scene(out / "resolved.scene")
    assert spec.integrator.dt == 5e-5 and spec.integrator.max_steps == 3
    # frame_interval stays at the scene's 1e-4: frames at steps 0, 2 and the last one
    assert (out / "frame_000002.obj").exists() and not (out / "frame_000003.obj").exists()
    assert not (tmp_path / "out").exists()


def test_simulate_zero_steps(tmp_path):
    p = write_scene(tmp_path)
    assert main(["simulate", str(p), "--max-steps", "0"]) == 0
    assert sorted(x.name for x in (tmp_path / "out").iterdir()) == [
        "frame_000000.obj", "resolved.scene", "stats.csv"]


def test_simulate_abort_exit_code(tmp_path, capsys):
    p = write_scene(tmp_path, "frame_interval = 1\n")
    p.write_text(p.read_text().replace("dt = 1e-4", "dt = 1\nmax_substeps = 2"))
    assert main(["simulate", str(p)]) == 2
    assert "aborted" in capsys.readouterr().err


def test_estimate_dt(tmp_path, capsys):
    assert main(["estimate-dt", str(write_scene(tmp_path))]) == 0
    assert float(capsys.readouterr().out) > 0


@pytest.mark.parametrize("argv", [[], ["bogus"], ["simulate"], ["simulate", "x.scene", "--dt", "-1"]])
def test_usage_errors(argv, capsys):
    assert main(argv) != 0
    assert capsys.readouterr().err


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "fracsim", "mesh-info", str(MESHES / "unit_tet.node"),
                        str(MESHES / "unit_tet.ele")], capture_output=True, text=True)
    assert r.returncode == 0 and "elements 1" in r.stdout
