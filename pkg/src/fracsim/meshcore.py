"""Tetrahedral mesh storage, validation, geometry queries and file I/O.

Nodes carry a material (reference) position, a world position and a world
velocity.  Elements carry four node indices plus the inverse of their
material edge matrix (``basis``) and their rest volume.  Per-element and
per-node auxiliary arrays live in ``element_data`` / ``node_data`` so that
re-meshing can carry them to new elements and nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _cc

VOLUME_EPSILON = 1e-12

# Outward faces of a positively oriented tet (0, 1, 2, 3).
TET_FACES = np.array([(1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1)], dtype=np.int64)
TET_EDGES = np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)], dtype=np.int64)


class MeshError(ValueError):
    pass


class MeshParseError(MeshError):
    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = str(path)
        self.lineno = lineno


class DegenerateElementError(MeshError):
    def __init__(self, element, volume):
        super().__init__(f"element {element} is degenerate (volume {volume:.3e})")
        self.element = element
        self.volume = volume


class DanglingIndexError(MeshError):
    def __init__(self, element, index):
        super().__init__(f"element {element} references missing node {index}")
        self.element = element
        self.index = index


def element_volume(p0, p1, p2, p3) -> float:
    """Signed volume of the tetrahedron (p0, p1, p2, p3)."""
    p0 = np.asarray(p0, dtype=float)
    m = np.stack([np.asarray(p1) - p0, np.asarray(p2) - p0, np.asarray(p3) - p0], axis=1)
    return float(np.linalg.det(m)) / 6.0


def edge_matrices(pos: np.ndarray, elements: np.ndarray) -> np.ndarray:
    """(M, 3, 3) matrices whose columns are x1-x0, x2-x0, x3-x0."""
    p = pos[elements]
    return np.transpose(p[:, 1:, :] - p[:, :1, :], (0, 2, 1))


def signed_volumes(pos: np.ndarray, elements: np.ndarray) -> np.ndarray:
    if len(elements) == 0:
        return np.zeros(0)
    return np.linalg.det(edge_matrices(pos, elements)) / 6.0


def compute_basis(material_pos: np.ndarray, elements: np.ndarray):
    """Return (basis, rest_volume) for the given elements.

    Degenerate elements get a zero basis; callers decide what to do with
    them based on the returned volume.
    """
    dm = edge_matrices(material_pos, elements)
    vol = np.linalg.det(dm) / 6.0 if len(elements) else np.zeros(0)
    basis = np.zeros_like(dm)
    ok = np.abs(vol) > 0.0
    if np.any(ok):
        basis[ok] = np.linalg.inv(dm[ok])
    return basis, vol


@dataclass
class TetMesh:
    material_pos: np.ndarray
    world_pos: np.ndarray
    velocity: np.ndarray
    mass: np.ndarray
    elements: np.ndarray
    basis: np.ndarray
    rest_volume: np.ndarray
    material_id: np.ndarray
    node_to_elements: list = field(default_factory=list)
    element_data: dict = field(default_factory=dict)
    node_data: dict = field(default_factory=dict)

    @classmethod
    def from_arrays(cls, material_pos, elements, material_id=None, world_pos=None,
                    velocity=None, check=True):
        X = np.array(material_pos, dtype=np.float64).reshape(-1, 3)
        E = np.array(elements, dtype=np.int64).reshape(-1, 4)
        n = len(X)
        if check:
            bad = np.argwhere((E < 0) | (E >= n))
            if len(bad):
                e, k = bad[0]
                raise DanglingIndexError(int(e), int(E[e, k]))
            if not np.all(np.isfinite(X)):
                raise MeshError("non-finite node coordinates")
        basis, vol = compute_basis(X, E)
        if check:
            small = np.flatnonzero(vol <= VOLUME_EPSILON)
            if len(small):
                raise DegenerateElementError(int(small[0]), float(vol[small[0]]))
        mesh = cls(
            material_pos=X,
            world_pos=X.copy() if world_pos is None else np.array(world_pos, dtype=float),
            velocity=np.zeros_like(X) if velocity is None else np.array(velocity, dtype=float),
            mass=np.zeros(n),
            elements=E,
            basis=basis,
            rest_volume=vol,
            material_id=(np.zeros(len(E), dtype=np.int64) if material_id is None
                         else np.array(material_id, dtype=np.int64).reshape(-1)),
        )
        mesh.rebuild_adjacency()
        return mesh

    @property
    def n_nodes(self) -> int:
        return len(self.material_pos)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def rebuild_adjacency(self):
        self.node_to_elements = build_node_to_elements(self.n_nodes, self.elements)

    def copy(self) -> "TetMesh":
        return TetMesh(
            material_pos=self.material_pos.copy(),
            world_pos=self.world_pos.copy(),
            velocity=self.velocity.copy(),
            mass=self.mass.copy(),
            elements=self.elements.copy(),
            basis=self.basis.copy(),
            rest_volume=self.rest_volume.copy(),
            material_id=self.material_id.copy(),
            node_to_elements=[set(s) for s in self.node_to_elements],
            element_data={k: v.copy() for k, v in self.element_data.items()},
            node_data={k: v.copy() for k, v in self.node_data.items()},
        )

    # -- mutation (single writer) -------------------------------------------------

    def add_node(self, material, world, velocity, data=None) -> int:
        """Append one node and return its index.

        ``data`` maps node_data keys to the row for the new node; missing
        keys are filled with NaN (floats) or zero.
        """
        idx = self.n_nodes
        self.material_pos = np.vstack([self.material_pos, np.reshape(material, (1, 3))])
        self.world_pos = np.vstack([self.world_pos, np.reshape(world, (1, 3))])
        self.velocity = np.vstack([self.velocity, np.reshape(velocity, (1, 3))])
        self.mass = np.append(self.mass, 0.0)
        for key, arr in self.node_data.items():
            row = None if data is None else data.get(key)
            if row is None:
                row = np.full(arr.shape[1:], np.nan if arr.dtype.kind == "f" else 0, dtype=arr.dtype)
            self.node_data[key] = np.concatenate([arr, np.asarray(row, dtype=arr.dtype)[None]])
        self.node_to_elements.append(set())
        return idx

    def replace_elements(self, removed, created, parents, material_ids=None):
        """Remove elements ``removed`` and insert ``created`` (list of 4-tuples).

        ``parents[k]`` is the pre-mutation element index whose material and
        element_data the k-th created element inherits.  Freed slots are
        reused in order; any surplus is compacted away.  Returns the new
        indices of the created elements.
        """
        removed = sorted(set(int(e) for e in removed))
        created = np.asarray(created, dtype=np.int64).reshape(-1, 4)
        parents = np.asarray(parents, dtype=np.int64).reshape(-1)
        mids = self.material_id[parents] if material_ids is None else np.asarray(material_ids)
        inherited = {k: v[parents] for k, v in self.element_data.items()}
        basis, vol = compute_basis(self.material_pos, created)

        for e in removed:
            for n in self.elements[e]:
                self.node_to_elements[n].discard(e)

        n_reuse = min(len(removed), len(created))
        slots = list(removed[:n_reuse])
        n_append = len(created) - n_reuse
        if n_append:
            m0 = self.n_elements
            slots.extend(range(m0, m0 + n_append))
            self.elements = np.concatenate([self.elements, np.zeros((n_append, 4), np.int64)])
            self.basis = np.concatenate([self.basis, np.zeros((n_append, 3, 3))])
            self.rest_volume = np.concatenate([self.rest_volume, np.zeros(n_append)])
            self.material_id = np.concatenate([self.material_id, np.zeros(n_append, np.int64)])
            for k, v in self.element_data.items():
                self.element_data[k] = np.concatenate([v, np.zeros((n_append,) + v.shape[1:], v.dtype)])
        slots = np.asarray(slots, dtype=np.int64)
        if len(created):
            self.elements[slots] = created
            self.basis[slots] = basis
            self.rest_volume[slots] = vol
            self.material_id[slots] = mids
            for k, v in inherited.items():
                self.element_data[k][slots] = v
            for s, tet in zip(slots, created):
                for n in tet:
                    self.node_to_elements[n].add(int(s))

        leftover = removed[n_reuse:]
        if leftover:
            keep = np.ones(self.n_elements, dtype=bool)
            keep[leftover] = False
            remap = np.cumsum(keep) - 1
            self.elements = self.elements[keep]
            self.basis = self.basis[keep]
            self.rest_volume = self.rest_volume[keep]
            self.material_id = self.material_id[keep]
            for k in list(self.element_data):
                self.element_data[k] = self.element_data[k][keep]
            self.rebuild_adjacency()
            slots = remap[slots]
        return slots

    def relabel_node(self, element: int, old: int, new: int):
        row = self.elements[element]
        row[row == old] = new
        self.node_to_elements[old].discard(element)
        self.node_to_elements[new].add(element)


def build_node_to_elements(n_nodes: int, elements: np.ndarray) -> list:
    adj = [set() for _ in range(n_nodes)]
    for e, row in enumerate(elements.tolist()):
        for n in row:
            adj[n].add(e)
    return adj


# -- file I/O ---------------------------------------------------------------------


def _records(path: Path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if line:
                yield lineno, line.split()


def _read_node_file(path):
    recs = _records(path)
    try:
        lineno, head = next(recs)
    except StopIteration:
        raise MeshParseError(path, 0, "empty node file") from None
    try:
        count, dim = int(head[0]), int(head[1])
    except (ValueError, IndexError):
        raise MeshParseError(path, lineno, "bad header, expected 'N 3 0 0'") from None
    if dim != 3:
        raise MeshParseError(path, lineno, f"dimension {dim} unsupported")
    ids, coords = [], []
    for lineno, tok in recs:
        if len(ids) == count:
            raise MeshParseError(path, lineno, "more node records than declared")
        try:
            ids.append(int(tok[0]))
            coords.append([float(t) for t in tok[1:4]])
        except ValueError:
            raise MeshParseError(path, lineno, "malformed node record") from None
        if len(coords[-1]) != 3:
            raise MeshParseError(path, lineno, "node record needs index and 3 coordinates")
    if len(ids) != count:
        raise MeshParseError(path, lineno, f"expected {count} nodes, found {len(ids)}")
    return ids, np.array(coords, dtype=float).reshape(-1, 3)


def _read_ele_file(path):
    recs = _records(path)
    try:
        lineno, head = next(recs)
    except StopIteration:
        raise MeshParseError(path, 0, "empty element file") from None
    try:
        count, per = int(head[0]), int(head[1])
    except (ValueError, IndexError):
        raise MeshParseError(path, lineno, "bad header, expected 'M 4 0'") from None
    if per != 4:
        raise MeshParseError(path, lineno, f"{per}-node elements unsupported")
    rows = []
    for lineno, tok in recs:
        if len(rows) == count:
            raise MeshParseError(path, lineno, "more element records than declared")
        try:
            row = [int(t) for t in tok[1:5]]
        except ValueError:
            raise MeshParseError(path, lineno, "malformed element record") from None
        if len(row) != 4:
            raise MeshParseError(path, lineno, "element record needs index and 4 nodes")
        rows.append(row)
    if len(rows) != count:
        raise MeshParseError(path, lineno, f"expected {count} elements, found {len(rows)}")
    return np.array(rows, dtype=np.int64).reshape(-1, 4)


def load_tet_mesh(node_file, ele_file) -> TetMesh:
    """Load a TetGen/NETGEN style .node/.ele pair.

    Indices are 0-based if any node index is 0, otherwise 1-based.
    """
    node_file, ele_file = Path(node_file), Path(ele_file)
    ids, coords = _read_node_file(node_file)
    raw = _read_ele_file(ele_file)
    base = 0 if 0 in ids else 1
    lookup = {i - base: k for k, i in enumerate(ids)}
    elements = np.empty_like(raw)
    for e, row in enumerate(raw):
        for j, idx in enumerate(row):
            k = lookup.get(int(idx) - base)
            if k is None:
                raise DanglingIndexError(e, int(idx))
            elements[e, j] = k
    return TetMesh.from_arrays(coords, elements)


def write_tet_mesh(mesh: TetMesh, node_file, ele_file, base: int = 0):
    with open(node_file, "w", encoding="utf-8") as fh:
        fh.write(f"{mesh.n_nodes} 3 0 0\n")
        for i, (x, y, z) in enumerate(mesh.material_pos.tolist()):
            fh.write(f"{i + base} {x:.17g} {y:.17g} {z:.17g}\n")
    with open(ele_file, "w", encoding="utf-8") as fh:
        fh.write(f"{mesh.n_elements} 4 0\n")
        for e, row in enumerate(mesh.elements.tolist()):
            fh.write(f"{e + base} " + " ".join(str(n + base) for n in row) + "\n")


# -- validation ---------------------------------------------------------------------


@dataclass
class ValidationReport:
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def face_keys(elements: np.ndarray):
    """Oriented faces of every element plus their sorted keys."""
    faces = elements[:, TET_FACES].reshape(-1, 3)
    return faces, np.sort(faces, axis=1)


def conformity_violations(mesh: TetMesh, limit: int = 10) -> list:
    """Faces shared by more than two elements, mismatched interior faces,
    and hanging nodes (detected as unbalanced boundary edges)."""
    out = []
    if mesh.n_elements == 0:
        return out
    faces, keys = face_keys(mesh.elements)
    uniq, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    for k in np.flatnonzero(counts > 2)[:limit]:
        out.append(f"face {tuple(uniq[k])} shared by {counts[k]} elements")
    # interior faces must be seen with opposite orientation from the two sides
    shared = np.flatnonzero(counts[inverse] == 2)
    if len(shared):
        order = shared[np.argsort(inverse[shared], kind="stable")]
        a, b = faces[order[0::2]], faces[order[1::2]]
        same = _same_orientation(a, b)
        for i in np.flatnonzero(same)[:limit]:
            out.append(f"face {tuple(sorted(a[i]))} has matching orientation on both sides")
    bnd = faces[counts[inverse] == 1]
    if len(bnd):
        directed = np.concatenate([bnd[:, [0, 1]], bnd[:, [1, 2]], bnd[:, [2, 0]]])
        fwd = directed[directed[:, 0] < directed[:, 1]]
        rev = directed[directed[:, 0] > directed[:, 1]][:, ::-1]
        uf, cf = np.unique(fwd, axis=0, return_counts=True)
        ur, cr = np.unique(rev, axis=0, return_counts=True)
        if len(uf) != len(ur) or not (np.array_equal(uf, ur) and np.array_equal(cf, cr)):
            out.append("boundary surface is not closed (hanging node or non-conforming face)")
    for a, c, b in hanging_nodes(mesh)[:limit].tolist():
        out.append(f"node {c} hangs on edge ({a}, {b})")
    return out


def mesh_edges(elements: np.ndarray) -> np.ndarray:
    """Unique undirected edges as sorted (i, j) rows with i < j."""
    e = np.sort(elements[:, TET_EDGES].reshape(-1, 2), axis=1)
    return np.unique(e, axis=0)


def hanging_nodes(mesh: TetMesh, tol: float = 1e-9) -> np.ndarray:
    """Rows (a, c, b) where node c lies strictly inside edge a-b in material
    space while a-c and c-b are edges too, i.e. one side of a face was
    refined and the other was not."""
    if mesh.n_elements == 0:
        return np.zeros((0, 3), dtype=np.int64)
    n = np.int64(mesh.n_nodes)
    edges = mesh_edges(mesh.elements)
    keys = edges[:, 0] * n + edges[:, 1]
    src = np.concatenate([edges[:, 0], edges[:, 1]])
    dst = np.concatenate([edges[:, 1], edges[:, 0]])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    # all neighbour pairs (p, q), p < q, within each source group
    end = np.searchsorted(src, src, side="right")
    k = end - np.arange(len(src)) - 1
    first = np.repeat(np.arange(len(src)), k)
    start = np.repeat(np.cumsum(k) - k, k)
    second = first + 1 + (np.arange(len(first)) - start)
    a, b, c = dst[first], dst[second], src[first]
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    hit = np.isin(lo * n + hi, keys)
    a, b, c = a[hit], b[hit], c[hit]
    X = mesh.material_pos
    ab, ac = X[b] - X[a], X[c] - X[a]
    l2 = np.einsum("ij,ij->i", ab, ab)
    t = np.einsum("ij,ij->i", ac, ab) / l2
    off = np.linalg.norm(np.cross(ab, ac), axis=1) / l2
    on = (off < tol) & (t > tol) & (t < 1.0 - tol)
    return np.stack([a[on], c[on], b[on]], axis=1)


def _same_orientation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # rotate each triangle so its smallest index comes first, then compare
    def canon(t):
        r = np.argmin(t, axis=1)
        idx = (r[:, None] + np.arange(3)[None]) % 3
        return np.take_along_axis(t, idx, axis=1)

    return np.all(canon(a) == canon(b), axis=1)


def validate_mesh(mesh: TetMesh, check_conforming: bool = True, limit: int = 10) -> ValidationReport:
    v = []
    n, m = mesh.n_nodes, mesh.n_elements
    for name in ("material_pos", "world_pos", "velocity"):
        arr = getattr(mesh, name)
        if arr.shape != (n, 3):
            v.append(f"{name} has shape {arr.shape}, expected {(n, 3)}")
        elif not np.all(np.isfinite(arr)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(arr), axis=1))[0])
            v.append(f"node {bad} has non-finite {name}")
    if v:
        return ValidationReport(v)
    E = mesh.elements
    if m == 0:
        return ValidationReport(v)
    bad = np.flatnonzero(np.any((E < 0) | (E >= n), axis=1))
    for e in bad[:limit]:
        v.append(f"element {e} references a missing node")
    if len(bad):
        return ValidationReport(v)
    srt = np.sort(E, axis=1)
    for e in np.flatnonzero(np.any(srt[:, 1:] == srt[:, :-1], axis=1))[:limit]:
        v.append(f"element {e} has repeated nodes {E[e].tolist()}")
    for e in np.flatnonzero(~(mesh.rest_volume > VOLUME_EPSILON))[:limit]:
        v.append(f"element {e} rest volume {mesh.rest_volume[e]:.3e} not above epsilon")
    vol = signed_volumes(mesh.material_pos, E)
    for e in np.flatnonzero(vol <= 0.0)[:limit]:
        v.append(f"element {e} is inverted in material space")
    mismatch = np.abs(vol - mesh.rest_volume) > 1e-9 * np.maximum(np.abs(vol), VOLUME_EPSILON)
    for e in np.flatnonzero(mismatch)[:limit]:
        v.append(f"element {e} rest volume differs from its material geometry")
    dm = edge_matrices(mesh.material_pos, E)
    resid = np.abs(np.einsum("eij,ejk->eik", mesh.basis, dm) - np.eye(3)).max(axis=(1, 2))
    for e in np.flatnonzero(~(resid <= 1e-10 * np.maximum(1.0, np.abs(mesh.basis).max(axis=(1, 2)) * np.abs(dm).max(axis=(1, 2)))))[:limit]:
        v.append(f"element {e} basis is not the inverse of its edge matrix")
    if len(mesh.node_to_elements) != n or build_node_to_elements(n, E) != mesh.node_to_elements:
        v.append("node_to_elements does not match element incidence")
    if check_conforming:
        v.extend(conformity_violations(mesh, limit))
    return ValidationReport(v)


def orphan_nodes(mesh: TetMesh) -> np.ndarray:
    used = np.zeros(mesh.n_nodes, dtype=bool)
    used[mesh.elements.reshape(-1)] = True
    return np.flatnonzero(~used)


# -- geometry queries ---------------------------------------------------------------------


def boundary_faces(mesh: TetMesh) -> np.ndarray:
    """(F, 3) outward-oriented triangles incident to exactly one element,
    ordered by (element index, local face)."""
    if mesh.n_elements == 0:
        return np.zeros((0, 3), dtype=np.int64)
    faces, keys = face_keys(mesh.elements)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    return faces[counts[inverse.reshape(-1)] == 1]


def face_area_vectors(pos: np.ndarray, faces: np.ndarray) -> np.ndarray:
    p = pos[faces]
    return 0.5 * np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])


def connected_components(mesh: TetMesh):
    """Fragments under shared-node connectivity.

    Returns (count, labels) where labels[e] is the fragment of element e;
    fragments are numbered in order of their lowest element index.
    """
    m = mesh.n_elements
    if m == 0:
        return 0, np.zeros(0, dtype=np.int64)
    rows = np.repeat(np.arange(m), 4)
    cols = m + mesh.elements.reshape(-1)
    size = m + mesh.n_nodes
    g = coo_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(size, size))
    _, raw = _cc(g, directed=False)
    raw = raw[:m]
    _, first = np.unique(raw, return_index=True)
    order = np.argsort(first)
    relabel = np.empty(len(order), dtype=np.int64)
    relabel[order] = np.arange(len(order))
    labels = relabel[np.searchsorted(np.unique(raw), raw)]
    return len(order), labels


def write_obj_frame(mesh: TetMesh, path):
    faces = boundary_faces(mesh)
    used = np.unique(faces)
    local = np.full(mesh.n_nodes, -1, dtype=np.int64)
    local[used] = np.arange(1, len(used) + 1)
    lines = []
    for x, y, z in mesh.world_pos[used].tolist():
        lines.append(f"v {_fmt(x)} {_fmt(y)} {_fmt(z)}\n")
    for a, b, c in local[faces].tolist():
        lines.append(f"f {a} {b} {c}\n")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.writelines(lines)


def _fmt(x: float) -> str:
    s = f"{x:.9g}"
    return "0" if s == "-0" else s


def read_obj(path):
    verts, faces = [], []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "v":
                verts.append([float(t) for t in tok[1:4]])
            elif tok[0] == "f":
                faces.append([int(t.split("/")[0]) - 1 for t in tok[1:4]])
    return np.array(verts).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


# -- structured meshes used by tests, benchmarks and the shipped scenes -----------------


_CUBE_CORNERS = np.array(
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]],
    dtype=float,
)
# five-tet split of a cube (corner tets around a central one)
CUBE_5 = np.array([[0, 1, 3, 4], [1, 2, 3, 6], [1, 4, 5, 6], [3, 4, 6, 7], [1, 3, 4, 6]])
# six-tet split along the 0-6 diagonal; conforming when repeated on a grid
CUBE_6 = np.array([[0, 1, 2, 6], [0, 2, 3, 6], [0, 3, 7, 6], [0, 7, 4, 6], [0, 4, 5, 6], [0, 5, 1, 6]])


def _orient(pos, elements):
    vol = signed_volumes(pos, elements)
    out = elements.copy()
    flip = vol < 0
    out[flip, 1], out[flip, 2] = elements[flip, 2], elements[flip, 1]
    return out


def unit_cube_mesh() -> TetMesh:
    return TetMesh.from_arrays(_CUBE_CORNERS, _orient(_CUBE_CORNERS, CUBE_5))


def box_mesh(nx, ny, nz, size=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)) -> TetMesh:
    """Structured tet mesh of a box, six tets per grid cell."""
    xs = np.linspace(0.0, size[0], nx + 1) + origin[0]
    ys = np.linspace(0.0, size[1], ny + 1) + origin[1]
    zs = np.linspace(0.0, size[2], nz + 1) + origin[2]
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    pos = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)

    def nid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    tets = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                c = [nid(i + a, j + b, k + d) for a, b, d in _CUBE_CORNERS.astype(int)]
                for t in CUBE_6:
                    tets.append([c[q] for q in t])
    tets = np.array(tets, dtype=np.int64)
    return TetMesh.from_arrays(pos, _orient(pos, tets))
