from pathlib import Path

import numpy as np
import pytest

from fracsim.continuum import MaterialParams
from fracsim.meshcore import TetMesh, box_mesh

ROOT = Path(__file__).resolve().parents[1]
MESHES = ROOT / "scenes" / "meshes"
TEST_MATERIAL = MaterialParams(density=1000.0, lame_mu=1e5, lame_lambda=1e5)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def random_tet(rng, scale=1.0, min_volume=1e-3):
    """Positively oriented, not too flat tetrahedron as a (4, 3) array."""
    while True:
        t = rng.uniform(-scale, scale, size=(4, 3))
        vol = np.linalg.det(t[1:] - t[0]) / 6.0
        if abs(vol) > min_volume * scale ** 3:
            if vol < 0:
                t[[1, 2]] = t[[2, 1]]
            return t


def single_tet_mesh(points=None) -> TetMesh:
    if points is None:
        points = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]
    return TetMesh.from_arrays(points, [[0, 1, 2, 3]])


def jittered_box(rng, n=(3, 2, 2), size=(1.0, 0.5, 0.5), jitter=0.15):
    """Structured box mesh with interior nodes moved randomly."""
    mesh = box_mesh(*n, size=size)
    X = mesh.material_pos.copy()
    h = np.array(size) / np.array(n)
    lo, hi = X.min(axis=0), X.max(axis=0)
    interior = np.all((X > lo + 1e-9) & (X < hi - 1e-9), axis=1)
    X[interior] += rng.uniform(-jitter, jitter, size=(interior.sum(), 3)) * h
    return TetMesh.from_arrays(X, mesh.elements)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def material():
    return TEST_MATERIAL


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE = {}


def record_criterion(number, ok, detail):
    ACCEPTANCE[number] = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
