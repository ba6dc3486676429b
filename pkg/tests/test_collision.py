import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import TEST_MATERIAL, random_rotation, random_tet, single_tet_mesh
from fracsim.collision import (ContactConfig, brute_force_pairs, build_bvh, ground_forces,
                               ground_implicit, penalty_forces, refit_and_pairs, tet_intersection)
from fracsim.meshcore import TetMesh, unit_cube_mesh
from oracles import mc_intersection


def overlapping_pair(rng):
    while True:
        A = random_tet(rng, min_volume=0.02)
        B = random_tet(rng, min_volume=0.02) * 0.8 + rng.normal(scale=0.3, size=3)
        vol, _ = tet_intersection(A, B)
        if vol > 1e-3:
            return A, B


def random_soup(rng, n=200, spread=3.0, size=0.4):
    """Disconnected tets scattered in a box, as one mesh."""
    tets = [random_tet(rng, scale=size) + rng.uniform(0, spread, size=3) for _ in range(n)]
    X = np.concatenate(tets)
    return TetMesh.from_arrays(X, np.arange(4 * n).reshape(n, 4))


def two_cubes(shift, subdivide=None):
    """Unit-cube body A plus a shifted unit-cube body B; optionally split one
    tet of B four ways at its centroid."""
    A, B = unit_cube_mesh(), unit_cube_mesh()
    XB, EB = B.material_pos + shift, B.elements.copy()
    if subdivide is not None:
        k = len(XB)
        XB = np.vstack([XB, XB[EB[subdivide]].mean(axis=0)])
        a, b, c, d = EB[subdivide]
        EB = np.vstack([np.delete(EB, subdivide, axis=0),
                        [(k, b, c, d), (a, k, c, d), (a, b, k, d), (a, b, c, k)]])
    X = np.vstack([A.material_pos, XB])
    E = np.vstack([A.elements, EB + A.n_nodes])
    return TetMesh.from_arrays(X, E), A.n_nodes


# -- broad phase ------------------------------------------------------------------------


def test_single_element_is_leaf():
    bvh = build_bvh(single_tet_mesh())
    assert bvh.n_nodes == 1 and bvh.leaf_element[0] == 0


def test_bvh_structure(rng):
    mesh = random_soup(rng)
    bvh = build_bvh(mesh)
    leaves = bvh.leaf_element[bvh.leaf_element >= 0]
    assert sorted(leaves.tolist()) == list(range(mesh.n_elements))
    assert bvh.depth() <= 2 + int(np.ceil(np.log2(mesh.n_elements)))
    for k in range(bvh.n_nodes):
        if bvh.left[k] >= 0:
            for c in (bvh.left[k], bvh.right[k]):
                assert bvh.box(k).contains(bvh.box(c))


@pytest.mark.parametrize("impl", ["numba", "numpy"])
def test_pairs_match_brute_force(rng, impl):
    mesh = random_soup(rng)
    bvh = build_bvh(mesh)
    got = refit_and_pairs(bvh, mesh, impl=impl)
    np.testing.assert_array_equal(got, brute_force_pairs(mesh))
    # move things and refit without rebuilding
    mesh.world_pos = mesh.world_pos + rng.normal(scale=0.2, size=mesh.world_pos.shape)
    got = refit_and_pairs(bvh, mesh, impl=impl)
    np.testing.assert_array_equal(got, brute_force_pairs(mesh))


def test_cache_is_advisory(rng):
    mesh = random_soup(rng)
    bvh = build_bvh(mesh)
    refit_and_pairs(bvh, mesh)
    mesh.world_pos = mesh.world_pos + rng.normal(scale=0.1, size=mesh.world_pos.shape)
    warm = refit_and_pairs(bvh, mesh, use_cache=True)
    cold = refit_and_pairs(build_bvh(mesh), mesh, use_cache=False)
    np.testing.assert_array_equal(warm, cold)


def test_far_bodies_no_pairs():
    mesh, _ = two_cubes(np.array([5.0, 0, 0]))
    assert len(refit_and_pairs(build_bvh(mesh), mesh)) == 0


def test_pairs_exclude_shared_nodes():
    mesh = unit_cube_mesh()
    assert len(refit_and_pairs(build_bvh(mesh), mesh)) == 0


def test_broad_phase_complete(rng):
    mesh = random_soup(rng, n=120, spread=1.5)
    pairs = set(map(tuple, refit_and_pairs(build_bvh(mesh), mesh).tolist()))
    P = mesh.world_pos[mesh.elements]
    for i in range(mesh.n_elements):
        for j in range(i + 1, mesh.n_elements):
            if tet_intersection(P[i], P[j])[0] > 0:
                assert (i, j) in pairs


def test_stale_bvh_rejected(rng):
    mesh = random_soup(rng, n=10)
    bvh = build_bvh(mesh)
    mesh2 = random_soup(rng, n=11)
    with pytest.raises(ValueError):
        refit_and_pairs(bvh, mesh2)


# -- narrow phase -----------------------------------------------------------------------


def test_self_intersection():
    t = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    vol, cen = tet_intersection(t, t)
    assert vol == pytest.approx(1 / 6, rel=1e-12)
    np.testing.assert_allclose(cen, 0.25, atol=1e-12)


def test_disjoint():
    t = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    vol, cen = tet_intersection(t, t + 3.0)
    assert vol == 0.0 and not cen.any()


def test_contained():
    t = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    small = 0.25 + 0.2 * (t - 0.25)
    vol, cen = tet_intersection(t, small)
    assert vol == pytest.approx(0.008 / 6, rel=1e-10)
    np.testing.assert_allclose(cen, 0.25, atol=1e-12)


def test_against_monte_carlo(rng):
    for _ in range(10):
        A, B = overlapping_pair(rng)
        vol, cen = tet_intersection(A, B)
        mv, mc = mc_intersection(rng, A, B)
        assert vol == pytest.approx(mv, rel=0.02, abs=1e-6)
        assert np.abs(cen - mc).max() < 1e-2


def test_numba_numpy_agree(rng):
    for _ in range(100):
        A, B = random_tet(rng), random_tet(rng) + rng.normal(scale=0.5, size=3)
        va, ca = tet_intersection(A, B, impl="numba")
        vb, cb = tet_intersection(A, B, impl="numpy")
        assert va == pytest.approx(vb, rel=1e-9, abs=1e-14)
        if va > 1e-9:
            np.testing.assert_allclose(ca, cb, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_symmetry_and_containment(seed):
    rng = np.random.default_rng(seed)
    A, B = random_tet(rng), random_tet(rng) + rng.normal(scale=0.4, size=3)
    vab, _ = tet_intersection(A, B)
    vba, _ = tet_intersection(B, A)
    assert abs(vab - vba) <= 1e-10
    va = abs(np.linalg.det(A[1:] - A[0])) / 6
    vb = abs(np.linalg.det(B[1:] - B[0])) / 6
    assert vab <= min(va, vb) + 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_rigid_invariance(seed):
    rng = np.random.default_rng(seed)
    A, B = random_tet(rng), random_tet(rng) + rng.normal(scale=0.4, size=3)
    R, t = random_rotation(rng), rng.normal(size=3)
    v0, c0 = tet_intersection(A, B)
    v1, c1 = tet_intersection(A @ R.T + t, B @ R.T + t)
    assert v1 == pytest.approx(v0, rel=1e-9, abs=1e-13)
    if v0 > 1e-9:
        np.testing.assert_allclose(c1, c0 @ R.T + t, atol=1e-9)


# -- penalty ----------------------------------------------------------------------------


def test_no_overlap_no_force():
    mesh, _ = two_cubes(np.array([1.5, 0, 0]))
    f, vol, n = penalty_forces(np.array([[0, 5]]), mesh, ContactConfig())
    assert vol == 0 and n == 0 and not f.any()


@pytest.mark.parametrize("impl", ["numba", "numpy"])
def test_slab_overlap(impl):
    cfg = ContactConfig(penalty_k=1e8)
    mesh, na = two_cubes(np.array([0.9, 0.0, 0.0]))
    pairs = refit_and_pairs(build_bvh(mesh), mesh)
    f, vol, _ = penalty_forces(pairs, mesh, cfg, impl=impl)
    assert vol == pytest.approx(0.1, rel=1e-9)
    assert np.abs(f.sum(axis=0)).max() <= 1e-9 * np.abs(f).max()
    fa = f[:na].sum(axis=0)
    assert fa[0] < 0  # A is pushed away from B
    # every pair force has magnitude k V, so the net force cannot exceed k * slab volume
    assert np.linalg.norm(fa) <= cfg.penalty_k * 0.1 * (1 + 1e-9)


def test_penalty_paths_agree(rng):
    mesh, _ = two_cubes(np.array([0.7, 0.2, 0.1]))
    mesh.world_pos = mesh.world_pos + rng.normal(scale=0.02, size=mesh.world_pos.shape)
    pairs = refit_and_pairs(build_bvh(mesh), mesh)
    fa, va, na = penalty_forces(pairs, mesh, ContactConfig(), impl="numba")
    fb, vb, nb = penalty_forces(pairs, mesh, ContactConfig(), impl="numpy")
    assert na == nb and va == pytest.approx(vb, rel=1e-10)
    np.testing.assert_allclose(fa, fb, rtol=1e-8, atol=1e-6 * np.abs(fa).max())


def test_overlap_volume_is_tessellation_independent():
    base, _ = two_cubes(np.array([0.8, 0.3, 0.2]))
    _, v0, _ = penalty_forces(refit_and_pairs(build_bvh(base), base), base, ContactConfig())
    for k in range(5):
        mesh, _ = two_cubes(np.array([0.8, 0.3, 0.2]), subdivide=k)
        _, v, _ = penalty_forces(refit_and_pairs(build_bvh(mesh), mesh), mesh, ContactConfig())
        assert v == pytest.approx(v0, rel=1e-12)


# -- ground -----------------------------------------------------------------------------


def test_ground_above_plane_zero():
    mesh = single_tet_mesh()
    mesh.world_pos = mesh.world_pos + [0, 0, 0.5]
    assert not ground_forces(mesh, ContactConfig()).any()


def test_ground_static_depth():
    mesh = single_tet_mesh()
    mesh.world_pos = mesh.world_pos - [0, 0, 0.01]
    f = ground_forces(mesh, ContactConfig(ground_k=1e5))
    np.testing.assert_allclose(f[[0, 1, 2], 2], 1e3)
    assert f[3, 2] == 0


def test_ground_tangential_capped():
    mesh = single_tet_mesh()
    mesh.world_pos = mesh.world_pos - [0, 0, 0.001]
    mesh.velocity[:] = [10.0, 0, 0]
    f = ground_forces(mesh, ContactConfig(ground_k=1e5, ground_damping=1e3))
    for n in (0, 1, 2):
        assert abs(f[n, 0]) == pytest.approx(f[n, 2])
        assert f[n, 0] < 0


def test_ground_disabled():
    mesh = single_tet_mesh()
    mesh.world_pos = mesh.world_pos - [0, 0, 0.01]
    assert not ground_forces(mesh, ContactConfig(ground=False)).any()


def test_ground_implicit_matches_backward_euler():
    """One node, spring and damper: compare with the closed-form backward Euler update."""
    mesh = TetMesh.from_arrays([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], [[0, 1, 2, 3]])
    mesh.mass[:] = 0.5
    mesh.world_pos = mesh.world_pos + [0, 0, 0.1]
    mesh.world_pos[0, 2] = -0.002
    k, c, m, dt = 1e5, 30.0, 0.5, 1e-3
    v = np.zeros((4, 3))
    v[0] = [0.0, 0.0, -1.0]
    fn = ground_implicit(mesh, ContactConfig(ground_k=k, ground_damping=c), dt, v)
    z0 = -0.002
    # m (v1 - v0) = dt (k (0 - z0 - dt v1) - c v1)
    v1 = (m * -1.0 + dt * k * -z0) / (m + dt * dt * k + dt * c)
    assert v[0, 2] == pytest.approx(v1, rel=1e-12)
    assert fn[0] == pytest.approx(k * (-z0 - dt * v1) - c * v1, rel=1e-12)
    assert not fn[1:].any()


def test_ground_implicit_rest_depth():
    """A node resting under gravity settles at depth m g / k."""
    mesh = TetMesh.from_arrays([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], [[0, 1, 2, 3]])
    mesh.mass[:] = 2.0
    mesh.world_pos = mesh.world_pos + [0, 0, 1.0]
    mesh.world_pos[0, 2] = 0.0
    cfg = ContactConfig(ground_k=1e4, ground_damping=50.0)
    dt = 1e-3
    for _ in range(4000):
        mesh.velocity[0, 2] -= 9.81 * dt
        ground_implicit(mesh, cfg, dt, mesh.velocity)
        mesh.world_pos[0] += dt * mesh.velocity[0]
    assert -mesh.world_pos[0, 2] == pytest.approx(2.0 * 9.81 / 1e4, rel=1e-3)
