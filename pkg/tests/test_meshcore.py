import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import MESHES, jittered_box, random_rotation, random_tet, single_tet_mesh
from fracsim.meshcore import (_orient, DanglingIndexError, DegenerateElementError, MeshParseError, TetMesh,
                              boundary_faces, box_mesh, build_node_to_elements, connected_components,
                              element_volume, face_area_vectors, load_tet_mesh, read_obj,
                              unit_cube_mesh, validate_mesh, write_obj_frame, write_tet_mesh)


def _write(path, text):
    path.write_text(text)
    return path


def test_unit_tet_volume():
    assert element_volume([0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]) == pytest.approx(1 / 6)


def test_coplanar_volume_zero():
    assert element_volume([0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]) == 0.0


def test_volume_sign_flips_with_orientation():
    assert element_volume([0, 0, 0], [0, 1, 0], [1, 0, 0], [0, 0, 1]) == pytest.approx(-1 / 6)


def test_volume_against_monte_carlo(rng):
    t = random_tet(rng, min_volume=0.05)
    lo, hi = t.min(axis=0), t.max(axis=0)
    pts = rng.uniform(lo, hi, size=(1_000_000, 3))
    # barycentric test against an independent inverse
    M = np.linalg.inv((t[1:] - t[0]).T)
    lam = (pts - t[0]) @ M.T
    inside = np.all(lam >= 0, axis=1) & (lam.sum(axis=1) <= 1)
    est = inside.mean() * np.prod(hi - lo)
    assert element_volume(*t) == pytest.approx(est, rel=0.01)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_volume_rigid_invariance(seed):
    rng = np.random.default_rng(seed)
    t = random_tet(rng)
    R = random_rotation(rng)
    moved = t @ R.T + rng.normal(size=3) * 10
    v0 = element_volume(*t)
    assert element_volume(*moved) == pytest.approx(v0, rel=1e-12, abs=0)


def test_load_zero_based(tmp_path):
    node = _write(tmp_path / "a.node", "4 3 0 0\n0 0 0 0\n1 1 0 0\n2 0 1 0\n3 0 0 1\n")
    ele = _write(tmp_path / "a.ele", "1 4 0\n0 0 1 2 3\n")
    mesh = load_tet_mesh(node, ele)
    assert mesh.n_nodes == 4 and mesh.n_elements == 1
    assert mesh.rest_volume[0] == pytest.approx(1 / 6)
    np.testing.assert_allclose(mesh.basis[0], np.eye(3))
    assert mesh.node_to_elements == [{0}, {0}, {0}, {0}]


def test_load_one_based_with_comments(tmp_path):
    node = _write(tmp_path / "a.node",
                  "# header\n4 3 0 0\n1 0 0 0  # origin\n2 1 0 0\n3 0 1 0\n\n4 0 0 1\n")
    ele = _write(tmp_path / "a.ele", "1 4 0\n1 1 2 3 4\n")
    mesh = load_tet_mesh(node, ele)
    np.testing.assert_array_equal(mesh.elements, [[0, 1, 2, 3]])


def test_load_rejects_inverted(tmp_path):
    node = _write(tmp_path / "a.node", "4 3 0 0\n0 0 0 0\n1 1 0 0\n2 0 1 0\n3 0 0 1\n")
    ele = _write(tmp_path / "a.ele", "1 4 0\n0 0 2 1 3\n")
    with pytest.raises(DegenerateElementError) as err:
        load_tet_mesh(node, ele)
    assert err.value.element == 0


def test_load_rejects_dangling(tmp_path):
    node = _write(tmp_path / "a.node", "4 3 0 0\n0 0 0 0\n1 1 0 0\n2 0 1 0\n3 0 0 1\n")
    ele = _write(tmp_path / "a.ele", "1 4 0\n0 0 1 2 9\n")
    with pytest.raises(DanglingIndexError) as err:
        load_tet_mesh(node, ele)
    assert err.value.index == 9


@pytest.mark.parametrize("text, line", [
    ("4 2 0 0\n", 1),
    ("4 3 0 0\n0 0 0\n", 2),
    ("4 3 0 0\n0 0 0 0\n1 1 0 x\n", 3),
    ("2 3 0 0\n0 0 0 0\n", 2),
])
def test_load_reports_line(tmp_path, text, line):
    node = _write(tmp_path / "a.node", text)
    ele = _write(tmp_path / "a.ele", "1 4 0\n0 0 1 2 3\n")
    with pytest.raises(MeshParseError) as err:
        load_tet_mesh(node, ele)
    assert err.value.lineno == line


def test_write_load_round_trip(tmp_path, rng):
    mesh = jittered_box(rng)
    write_tet_mesh(mesh, tmp_path / "m.node", tmp_path / "m.ele", base=1)
    again = load_tet_mesh(tmp_path / "m.node", tmp_path / "m.ele")
    np.testing.assert_array_equal(again.material_pos, mesh.material_pos)
    np.testing.assert_array_equal(again.elements, mesh.elements)


def test_shipped_unit_tet_loads():
    mesh = load_tet_mesh(MESHES / "unit_tet.node", MESHES / "unit_tet.ele")
    assert mesh.n_elements == 1 and validate_mesh(mesh).ok


def test_validate_ok_and_inverted():
    mesh = unit_cube_mesh()
    assert validate_mesh(mesh).ok
    bad = mesh.copy()
    bad.elements[2, [1, 2]] = bad.elements[2, [2, 1]]
    report = validate_mesh(bad)
    assert not report.ok
    assert any("element 2" in v for v in report.violations)


def test_validate_detects_stale_adjacency():
    mesh = unit_cube_mesh()
    mesh.node_to_elements[0].add(4)
    assert not validate_mesh(mesh).ok


def test_validate_detects_hanging_node():
    # two tets on either side of a square face, one side split in two
    X = [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0.5, 0.5, 1], [0.5, 0.5, -1]]
    X = np.array(X, dtype=float)
    good = TetMesh.from_arrays(X, _orient(X, np.array([[0, 1, 2, 4], [0, 2, 3, 4], [0, 2, 1, 5], [0, 3, 2, 5]])))
    assert validate_mesh(good).ok
    # bisect one lower tet on the shared diagonal only: node 6 hangs on edge 0-2
    X = np.vstack([X, [0.5, 0.5, 0.0]])
    bad = TetMesh.from_arrays(X, _orient(X, np.array([[0, 1, 2, 4], [0, 2, 3, 4], [0, 6, 1, 5],
                                                     [6, 2, 1, 5], [0, 3, 2, 5]])))
    assert not validate_mesh(bad).ok


def test_boundary_single_tet():
    assert len(boundary_faces(single_tet_mesh())) == 4


def test_boundary_cube_area():
    mesh = unit_cube_mesh()
    faces = boundary_faces(mesh)
    assert len(faces) == 12
    a = face_area_vectors(mesh.world_pos, faces)
    assert np.linalg.norm(a, axis=1).sum() == pytest.approx(6.0, abs=1e-9)
    # outward: area vector points away from the cube centre
    c = mesh.world_pos[faces].mean(axis=1) - 0.5
    assert np.all(np.einsum("ij,ij->i", a, c) > 0)


def test_boundary_two_tets_sharing_face():
    X = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [0, 0, -1]]
    mesh = TetMesh.from_arrays(X, [[0, 1, 2, 3], [0, 2, 1, 4]])
    faces = boundary_faces(mesh)
    assert len(faces) == 6
    assert not any(set(f) == {0, 1, 2} for f in faces.tolist())


def test_closed_surface_net_area_zero(rng):
    mesh = jittered_box(rng, n=(4, 3, 2))
    a = face_area_vectors(mesh.world_pos, boundary_faces(mesh))
    assert np.abs(a.sum(axis=0)).max() < 1e-9


def test_components():
    assert connected_components(box_mesh(4, 1, 1))[0] == 1
    X = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]
    X = X + [[x + 5, y, z] for x, y, z in X]
    mesh = TetMesh.from_arrays(X, [[4, 5, 6, 7], [0, 1, 2, 3]])
    count, labels = connected_components(mesh)
    assert count == 2
    np.testing.assert_array_equal(labels, [0, 1])


def test_obj_single_tet(tmp_path):
    write_obj_frame(single_tet_mesh(), tmp_path / "f.obj")
    lines = (tmp_path / "f.obj").read_text().splitlines()
    assert sum(l.startswith("v ") for l in lines) == 4
    assert sum(l.startswith("f ") for l in lines) == 4


def test_obj_deterministic_and_round_trip(tmp_path, rng):
    mesh = jittered_box(rng)
    mesh.world_pos = mesh.world_pos + rng.normal(scale=0.01, size=mesh.world_pos.shape)
    write_obj_frame(mesh, tmp_path / "a.obj")
    write_obj_frame(mesh, tmp_path / "b.obj")
    assert (tmp_path / "a.obj").read_bytes() == (tmp_path / "b.obj").read_bytes()
    verts, faces = read_obj(tmp_path / "a.obj")
    used = np.unique(boundary_faces(mesh))
    np.testing.assert_allclose(verts, mesh.world_pos[used], atol=1e-7)
    assert len(faces) == len(boundary_faces(mesh))


def test_adjacency_matches_rebuild_after_replace(rng):
    mesh = jittered_box(rng)
    # replace element 0 with its 4-way subdivision at the centroid
    c = mesh.material_pos[mesh.elements[0]].mean(axis=0)
    k = mesh.add_node(c, c, np.zeros(3))
    a, b, cc, d = mesh.elements[0]
    kids = [(k, b, cc, d), (a, k, cc, d), (a, b, k, d), (a, b, cc, k)]
    vol0 = mesh.rest_volume.sum()
    mesh.replace_elements([0], kids, [0, 0, 0, 0])
    assert mesh.node_to_elements == build_node_to_elements(mesh.n_nodes, mesh.elements)
    assert mesh.rest_volume.sum() == pytest.approx(vol0, rel=1e-12)
    assert validate_mesh(mesh).ok
