import math

import numpy as np
import pytest

from conftest import MESHES
from fracsim.dynamics import kinetic_energy
from fracsim.meshcore import connected_components, read_obj
from fracsim.scene import (PRESETS, STATS_HEADER, SceneError, SimulationAborted, assemble, format_scene,
                           override, parse_scene, read_stats_csv, run)


def scene_file(tmp_path, body="", extra="", name="s.scene"):
    text = f"""
[material m]
preset = test
{body}
[body]
node = {MESHES / 'block.node'}
ele = {MESHES / 'block.ele'}
material = m
{extra}
"""
    p = tmp_path / name
    p.write_text(text)
    return p


def test_minimal_scene_defaults(tmp_path):
    spec = parse_scene(scene_file(tmp_path))
    assert spec.materials["m"] == PRESETS["test"]
    assert spec.integrator.dt == 1e-4 and spec.integrator.max_steps == 1000
    assert spec.integrator.gravity == (0.0, 0.0, -9.81)
    assert spec.contact.penalty_k == 1e8
    assert spec.output.frame_interval == spec.integrator.dt
    assert spec.output.stats == "stats.csv"
    b = spec.bodies[0]
    assert b.translate == (0.0, 0.0, 0.0) and b.velocity == (0.0, 0.0, 0.0) and b.fixed == ()


def test_preset_override(tmp_path):
    spec = parse_scene(scene_file(tmp_path, body="toughness = 12.5"))
    assert spec.materials["m"].toughness == 12.5
    assert spec.materials["m"].lame_mu == PRESETS["test"].lame_mu


def test_undeclared_material_named(tmp_path):
    p = scene_file(tmp_path)
    p.write_text(p.read_text().replace("material = m", "material = granite"))
    with pytest.raises(SceneError) as err:
        parse_scene(p)
    msg = str(err.value)
    assert "granite" in msg and "body 0" in msg


@pytest.mark.parametrize("extra, key", [
    ("[integrator]\ndt = 1e-4\nspeed = 3\n", "speed"),
    ("[integrator]\ndt = -1\n", None),
    ("[integrator]\ndt = 1e-4\ndt = 2e-4\n", "dt"),
    ("[contact]\nground = maybe\n", "ground"),
    ("[output]\nframe_interval = 1e-6\n", "frame_interval"),
    ("[weather]\nrain = 1\n", None),
])
def test_bad_scene_reports_line_and_key(tmp_path, extra, key):
    p = scene_file(tmp_path, extra=extra)
    with pytest.raises(SceneError) as err:
        parse_scene(p)
    assert err.value.line > 0
    if key is not None:
        assert err.value.key == key
        assert key in str(err.value)


def test_resolved_echo_round_trip(tmp_path):
    extra = """
[fixed]
box_min = 0, 0, 0
box_max = 0.05, 1, 1
velocity = 0, 0, 0.5
[contact]
ground_k = 2e5
[integrator]
dt = 2e-4
duration = 0.01
gravity = 0, 0, -1
[fracture]
crack_depth_limit = 3
[output]
directory = out
frame_interval = 1e-3
"""
    spec = parse_scene(scene_file(tmp_path, extra=extra))
    assert spec.integrator.max_steps == 50
    echo = tmp_path / "echo.scene"
    echo.write_text(format_scene(spec))
    again = parse_scene(echo)
    assert again == spec
    assert format_scene(again) == format_scene(spec)


def test_override_wins(tmp_path):
    spec = parse_scene(scene_file(tmp_path))
    new = override(spec, out=str(tmp_path / "o"), dt=5e-5, max_steps=7)
    assert new.integrator.dt == 5e-5 and new.integrator.max_steps == 7
    assert new.output.directory == str(tmp_path / "o")
    assert spec.integrator.dt == 1e-4  # original untouched


def test_assemble_places_bodies(tmp_path):
    extra = """
[body]
node = {n}
ele = {e}
material = m
translate = 1, 0, 0.5
rotate = 0, 0, 90
velocity = 0, 0, -1
""".format(n=MESHES / "unit_tet.node", e=MESHES / "unit_tet.ele")
    spec = parse_scene(scene_file(tmp_path, extra=extra))
    mesh, mats = assemble(spec)
    assert mesh.n_elements == 49 and len(mats) == 1
    tet = mesh.world_pos[-4:]
    np.testing.assert_allclose(tet[1], [1.0, 1.0, 0.5], atol=1e-12)  # x axis turned onto y
    np.testing.assert_allclose(mesh.velocity[-4:], np.tile([0, 0, -1.0], (4, 1)))
    assert mesh.mass.sum() == pytest.approx(1000.0 * (0.008 + 1 / 6), rel=1e-12)


def test_zero_step_run(tmp_path):
    extra = f"""
[body]
node = {MESHES / 'unit_tet.node'}
ele = {MESHES / 'unit_tet.ele'}
material = m
translate = 3, 0, 0
[output]
directory = {tmp_path / 'out'}
"""
    spec = parse_scene(scene_file(tmp_path, extra=extra))
    stats = run(spec, steps=0)
    assert len(stats.frames) == 1 and stats.final.fragments == 2
    assert (tmp_path / "out" / "frame_000000.obj").exists()
    assert not (tmp_path / "out" / "frame_000001.obj").exists()
    rows = read_stats_csv(tmp_path / "out" / "stats.csv")
    assert len(rows) == 1 and rows[0]["fragments"] == "2"


def fixed_bar_scene(tmp_path, steps=40):
    extra = f"""
[fixed]
box_min = -1, -1, -1
box_max = 0.001, 1, 1
[contact]
ground = false
[integrator]
dt = 1e-3
max_steps = {steps}
[output]
directory = {tmp_path / 'out'}
frame_interval = 5e-3
"""
    return parse_scene(scene_file(tmp_path, extra=extra))


def test_run_outputs_and_invariants(tmp_path):
    spec = fixed_bar_scene(tmp_path)
    audit = []

    def hook(state, fs):
        mesh = state.mesh
        ke = 0.5 * np.sum(mesh.mass[:, None] * mesh.velocity ** 2)
        audit.append((fs, connected_components(mesh)[0], ke, mesh.n_nodes, mesh.n_elements,
                      mesh.world_pos.copy()))

    stats = run(spec, state_hook=hook)
    assert stats.steps == 40
    assert len(stats.frames) == 9
    out = tmp_path / "out"
    assert (out / "resolved.scene").exists()
    assert parse_scene(out / "resolved.scene") == spec
    rows = read_stats_csv(out / "stats.csv")
    assert list(rows[0]) == STATS_HEADER
    assert [float(r["time"]) for r in rows] == pytest.approx([k * 5e-3 for k in range(9)])
    for k, (fs, frags, ke, n, m, pos) in enumerate(audit):
        assert fs.fragments == frags
        assert fs.ke == pytest.approx(ke, rel=1e-9, abs=1e-300)
        assert (fs.nodes, fs.elements) == (n, m)
        verts, _ = read_obj(out / f"frame_{k:06d}.obj")
        assert len(verts) > 0
    # the clamped face never moves
    mesh, _ = assemble(spec)
    clamped = mesh.material_pos[:, 0] <= 0.001
    np.testing.assert_array_equal(audit[-1][5][clamped], mesh.world_pos[clamped])
    # gravity bends the free end downward
    assert audit[-1][5][~clamped, 2].min() < mesh.world_pos[~clamped, 2].min()
    assert all(r["ms"] == "0" for r in rows)


def test_runs_are_byte_identical(tmp_path):
    outs = []
    for tag in ("a", "b"):
        d = tmp_path / tag
        d.mkdir()
        spec = fixed_bar_scene(d, steps=20)
        run(spec)
        outs.append(d / "out")
    names = sorted(p.name for p in outs[0].iterdir())
    assert names == sorted(p.name for p in outs[1].iterdir())
    for n in names:
        if n == "resolved.scene":
            continue  # contains the output path
        assert (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes(), n


def test_abort_flushes_stats(tmp_path):
    extra = f"""
[integrator]
dt = 1.0
max_steps = 3
max_substeps = 2
[output]
directory = {tmp_path / 'out'}
frame_interval = 1.0
"""
    spec = parse_scene(scene_file(tmp_path, extra=extra))
    with pytest.raises(SimulationAborted) as err:
        run(spec)
    assert err.value.step == 0
    assert len(read_stats_csv(tmp_path / "out" / "stats.csv")) == 1


def test_shipped_scenes_parse():
    from conftest import ROOT
    for p in sorted((ROOT / "scenes").rglob("*.scene")):
        spec = parse_scene(p)
        assert spec.integrator.max_steps >= 1
        assert math.isfinite(spec.materials[spec.bodies[0].material].toughness)
