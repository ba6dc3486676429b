"""Separation tensors, fracture detection and local re-meshing.

At each node the tensile and compressive element forces are combined into
a symmetric separation tensor.  When its largest eigenvalue exceeds the
toughness of the surrounding material the node is split in two along the
plane normal to the corresponding eigenvector.  Elements around the node
that straddle the plane are cut by bisecting the crossing edges, and the
same edge bisections are applied to every neighbour sharing a cut edge so
the mesh stays conforming.  Nodes left joining pieces that no longer share
a face through them are duplicated, so a piece the crack has cut out
becomes its own fragment.  All cutting is done in material coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from ._accel import njit, pick
from .continuum import shape_gradients
from .eigen import eigen_symmetric3, eigh3_batch
from .meshcore import TET_EDGES, VOLUME_EPSILON, TetMesh, signed_volumes

SNAP = 0.25
MAX_FRACTURES_PER_STEP = 32
CRACK_DEPTH_LIMIT = 8


@dataclass(frozen=True)
class FractureConfig:
    enabled: bool = True
    max_fractures_per_step: int = MAX_FRACTURES_PER_STEP
    crack_depth_limit: int = CRACK_DEPTH_LIMIT
    snap: float = SNAP
    volume_epsilon: float = VOLUME_EPSILON

    def __post_init__(self):
        if self.max_fractures_per_step < 0 or self.crack_depth_limit < 0:
            raise ValueError("fracture limits must be non-negative")
        if not 0.0 <= self.snap < 0.5:
            raise ValueError("snap must lie in [0, 0.5)")


@dataclass
class SeparationTensor:
    node: int
    tensor: np.ndarray
    max_eigenvalue: float
    eigenvector: np.ndarray


@dataclass(frozen=True)
class FracturePlane:
    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        ln = np.linalg.norm(n)
        if not ln > 0:
            raise ValueError("fracture plane needs a non-zero normal")
        object.__setattr__(self, "normal", n / ln)
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float))


@dataclass
class RemeshEvent:
    split_node: int
    new_nodes: tuple = ()
    removed_elements: list = field(default_factory=list)
    created_elements: list = field(default_factory=list)
    relabeled_elements: list = field(default_factory=list)
    cut_nodes: list = field(default_factory=list)
    crack_tip_nodes: list = field(default_factory=list)
    released_nodes: list = field(default_factory=list)
    removed_volume: float = 0.0
    created_volume: float = 0.0
    sliver_volume: float = 0.0
    normal: np.ndarray | None = None
    depth: int = 0

    @property
    def noop(self) -> bool:
        return not self.new_nodes


# -- separation tensor -------------------------------------------------------------------


def force_dyad(f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    n = np.linalg.norm(f)
    if n == 0.0:
        return np.zeros((3, 3))
    return np.outer(f, f) / n


@njit
def _dyad_add(S, f0, f1, f2, sign):
    n = math.sqrt(f0 * f0 + f1 * f1 + f2 * f2)
    if n == 0.0:
        return
    s = sign / n
    S[0, 0] += s * f0 * f0
    S[0, 1] += s * f0 * f1
    S[0, 2] += s * f0 * f2
    S[1, 0] += s * f1 * f0
    S[1, 1] += s * f1 * f1
    S[1, 2] += s * f1 * f2
    S[2, 0] += s * f2 * f0
    S[2, 1] += s * f2 * f1
    S[2, 2] += s * f2 * f2


@njit
def _separation_numba(elements, fp, fm, n_nodes):
    S = np.zeros((n_nodes, 3, 3))
    sp = np.zeros((n_nodes, 3))
    sm = np.zeros((n_nodes, 3))
    for e in range(elements.shape[0]):
        for q in range(4):
            n = elements[e, q]
            _dyad_add(S[n], fp[e, q, 0], fp[e, q, 1], fp[e, q, 2], 1.0)
            _dyad_add(S[n], fm[e, q, 0], fm[e, q, 1], fm[e, q, 2], -1.0)
            for i in range(3):
                sp[n, i] += fp[e, q, i]
                sm[n, i] += fm[e, q, i]
    for n in range(n_nodes):
        _dyad_add(S[n], sp[n, 0], sp[n, 1], sp[n, 2], -1.0)
        _dyad_add(S[n], sm[n, 0], sm[n, 1], sm[n, 2], 1.0)
        for i in range(3):
            for j in range(3):
                S[n, i, j] *= 0.5
    return S


def _dyads(f):
    n = np.linalg.norm(f, axis=-1)
    safe = np.where(n > 0, n, 1.0)
    return np.where((n > 0)[..., None, None], f[..., :, None] * f[..., None, :] / safe[..., None, None], 0.0)


def _separation_numpy(elements, fp, fm, n_nodes):
    idx = elements.reshape(-1)
    S = np.zeros((n_nodes, 3, 3))
    np.add.at(S, idx, (_dyads(fp) - _dyads(fm)).reshape(-1, 3, 3))
    sp = np.zeros((n_nodes, 3))
    sm = np.zeros((n_nodes, 3))
    np.add.at(sp, idx, fp.reshape(-1, 3))
    np.add.at(sm, idx, fm.reshape(-1, 3))
    S += _dyads(sm) - _dyads(sp)
    return 0.5 * S


_separation = pick(_separation_numba, _separation_numpy)


def separation_tensors(mesh: TetMesh, forces, impl=None) -> np.ndarray:
    """(N, 3, 3) separation tensor of every node from per-element force channels."""
    fn = {"numba": _separation_numba, "numpy": _separation_numpy, None: _separation}[impl]
    return fn(mesh.elements, np.ascontiguousarray(forces.tensile),
              np.ascontiguousarray(forces.compressive), mesh.n_nodes)


def separation_tensor(node: int, tensile, compressive) -> SeparationTensor:
    """Separation tensor of one node from its incident (tensile, compressive) force lists."""
    tensile = np.asarray(tensile, dtype=float).reshape(-1, 3)
    compressive = np.asarray(compressive, dtype=float).reshape(-1, 3)
    S = -force_dyad(tensile.sum(axis=0)) + force_dyad(compressive.sum(axis=0))
    for f in tensile:
        S += force_dyad(f)
    for f in compressive:
        S -= force_dyad(f)
    S = 0.5 * S
    w, v = eigen_symmetric3(S)
    return SeparationTensor(node, S, float(w[0]), v[:, 0].copy())


def incident_forces(mesh: TetMesh, node: int, forces):
    """Tensile and compressive forces that each incident element puts on ``node``."""
    els = sorted(mesh.node_to_elements[node])
    tp, cm = [], []
    for e in els:
        q = int(np.flatnonzero(mesh.elements[e] == node)[0])
        tp.append(forces.tensile[e, q])
        cm.append(forces.compressive[e, q])
    return np.array(tp).reshape(-1, 3), np.array(cm).reshape(-1, 3)


def node_toughness(mesh: TetMesh, materials) -> np.ndarray:
    tough = np.array([m.toughness for m in materials], dtype=float)
    out = np.full(mesh.n_nodes, np.inf)
    np.minimum.at(out, mesh.elements.reshape(-1), np.repeat(tough[mesh.material_id], 4))
    return out


def world_to_material_normal(mesh: TetMesh, node: int, normal, F=None) -> np.ndarray:
    """Pull a world-space plane normal back to material space with F^T."""
    if F is None:
        return np.asarray(normal, dtype=float)
    els = sorted(mesh.node_to_elements[node])
    w = mesh.rest_volume[els]
    Fbar = np.einsum("e,eij->ij", w, F[els]) / w.sum()
    n = Fbar.T @ normal
    ln = np.linalg.norm(n)
    return n / ln if ln > 0 else np.asarray(normal, dtype=float)


def detect_fractures(mesh: TetMesh, forces, materials, config: FractureConfig = FractureConfig(),
                     F=None, tensors=None):
    """Nodes whose largest separation eigenvalue strictly exceeds toughness.

    Returns a list of ``(node, FracturePlane, eigenvalue)`` sorted by
    eigenvalue (descending, ties by node index), at most
    ``config.max_fractures_per_step`` long.
    """
    if not config.enabled or config.max_fractures_per_step == 0 or mesh.n_elements == 0:
        return []
    tough = node_toughness(mesh, materials)
    if not np.any(np.isfinite(tough)):
        return []
    S = separation_tensors(mesh, forces) if tensors is None else tensors
    w, v = eigh3_batch(S)
    top = w[:, 0]
    hit = np.flatnonzero(top > tough)
    if len(hit) == 0:
        return []
    order = hit[np.lexsort((hit, -top[hit]))][: config.max_fractures_per_step]
    out = []
    for n in order:
        normal = world_to_material_normal(mesh, int(n), v[n, :, 0], F)
        out.append((int(n), FracturePlane(mesh.material_pos[n].copy(), normal), float(top[n])))
    return out


# -- re-meshing --------------------------------------------------------------------------------


def _bisect(tet, cuts, cut_nodes):
    for a, b in cuts:
        if a in tet and b in tet:
            c = cut_nodes[(a, b)]
            t1 = tuple(c if v == b else v for v in tet)
            t2 = tuple(c if v == a else v for v in tet)
            return _bisect(t1, cuts, cut_nodes) + _bisect(t2, cuts, cut_nodes)
    return [tet]


def reference_length(mesh: TetMesh) -> np.ndarray:
    """Per-element mean edge length of the mesh as first seen.

    Stored in ``element_data`` so that elements created by re-meshing
    inherit their parent's value; snapping against it keeps repeated cuts
    from shrinking the mesh without bound.
    """
    h = mesh.element_data.get("h_ref")
    if h is None or len(h) != mesh.n_elements:
        X = mesh.material_pos
        E = mesh.elements
        ev = X[E[:, TET_EDGES[:, 1]]] - X[E[:, TET_EDGES[:, 0]]]
        h = np.sqrt(np.einsum("eki,eki->ek", ev, ev)).mean(axis=1)
        mesh.element_data["h_ref"] = h
    return h


def _face_groups(mesh: TetMesh, node: int):
    """Incident elements of ``node`` grouped by sharing a face through it."""
    els = sorted(mesh.node_to_elements[node])
    parent = {e: e for e in els}

    def find(e):
        while parent[e] != e:
            parent[e] = parent[parent[e]]
            e = parent[e]
        return e

    owner = {}
    for e in els:
        others = sorted(v for v in mesh.elements[e].tolist() if v != node)
        for face in combinations(others, 2):
            if face in owner:
                a, b = find(owner[face]), find(e)
                if a != b:
                    parent[max(a, b)] = min(a, b)
            else:
                owner[face] = e
    groups = {}
    for e in els:
        groups.setdefault(find(e), []).append(e)
    return [groups[k] for k in sorted(groups)]


def release_hinges(mesh: TetMesh, nodes) -> list:
    """Duplicate every node in ``nodes`` whose incident elements no longer
    share faces through it, one copy per face-connected group.

    A crack that closes around a piece can leave it attached to the rest
    by a single node or edge only; such a joint carries no material, so the
    piece is released.  Conformity is unaffected since every face stays
    inside one group.  Returns the indices of the added nodes.
    """
    added = []
    queue = sorted(set(int(n) for n in nodes))
    queued = set(queue)
    while queue:
        v = queue.pop(0)
        queued.discard(v)
        groups = _face_groups(mesh, v)
        if len(groups) < 2:
            continue
        for group in groups[1:]:
            copy = mesh.add_node(mesh.material_pos[v], mesh.world_pos[v], mesh.velocity[v],
                                 {k: d[v] for k, d in mesh.node_data.items()})
            for e in group:
                mesh.relabel_node(e, v, copy)
            added.append(copy)
        # faces through the neighbours changed, they may be hinges now
        for e in sorted(e for group in groups for e in group):
            for w in mesh.elements[e].tolist():
                if w not in queued:
                    queued.add(w)
                    queue.append(w)
    return added


def split_at_node(mesh: TetMesh, node: int, plane: FracturePlane, snap: float = SNAP,
                  volume_epsilon: float = VOLUME_EPSILON) -> RemeshEvent:
    """Split ``node`` along ``plane`` and re-mesh its neighbourhood in place."""
    event = RemeshEvent(split_node=node, normal=plane.normal)
    incident = sorted(mesh.node_to_elements[node])
    if not incident:
        return event
    X = mesh.material_pos
    nrm, p = plane.normal, plane.point
    E = mesh.elements[incident]
    ring = sorted(set(E.ravel().tolist()) - {node})
    dist = dict(zip(ring, ((X[ring] - p) @ nrm).tolist()))
    h = float(reference_length(mesh)[incident].mean())
    label = {v: 0 if abs(dv) < snap * h else (1 if dv > 0 else -1) for v, dv in dist.items()}

    pairs = set()
    for row in E.tolist():
        others = [v for v in row if v != node]
        for a, b in combinations(others, 2):
            pairs.add((min(a, b), max(a, b)))
    pairs = sorted(pairs)
    changed = True
    while changed:
        changed = False
        for a, b in pairs:
            if label[a] * label[b] < 0:
                t = dist[a] / (dist[a] - dist[b])
                gap = snap * h / float(np.linalg.norm(X[b] - X[a]))
                if t < max(snap, gap) and t <= 0.5:
                    label[a] = 0
                    changed = True
                elif t > 1.0 - max(snap, gap):
                    label[b] = 0
                    changed = True
    cuts = [(a, b) for a, b in pairs if label[a] * label[b] < 0]

    def side(tet):
        labs = [label.get(v, 0) for v in tet if v != node]
        if any(s < 0 for s in labs):
            return -1
        return 1

    if not cuts:
        sides = [side(row) for row in E.tolist()]
        if all(s > 0 for s in sides) or all(s < 0 for s in sides):
            return event

    # neighbours that share a cut edge get the same bisections
    affected = set()
    cut_elems = set()
    for a, b in cuts:
        shared = mesh.node_to_elements[a] & mesh.node_to_elements[b]
        cut_elems |= shared
    affected = sorted(cut_elems)

    cut_nodes = {}
    for a, b in cuts:
        t = dist[a] / (dist[a] - dist[b])
        data = {k: v[a] + t * (v[b] - v[a]) for k, v in mesh.node_data.items()}
        c = mesh.add_node(
            X[a] + t * (X[b] - X[a]),
            mesh.world_pos[a] + t * (mesh.world_pos[b] - mesh.world_pos[a]),
            mesh.velocity[a] + t * (mesh.velocity[b] - mesh.velocity[a]),
            data,
        )
        X = mesh.material_pos
        cut_nodes[(a, b)] = c
        label[c] = 0
    minus = mesh.add_node(mesh.material_pos[node], mesh.world_pos[node], mesh.velocity[node],
                          {k: v[node] for k, v in mesh.node_data.items()})
    X = mesh.material_pos

    incident_set = set(incident)
    relabel = []
    for e in incident:
        if e not in cut_elems and side(mesh.elements[e].tolist()) < 0:
            relabel.append(e)
    for e in relabel:
        mesh.relabel_node(e, node, minus)

    created, parents = [], []
    for e in affected:
        pieces = _bisect(tuple(mesh.elements[e].tolist()), cuts, cut_nodes)
        for tet in pieces:
            if e in incident_set and side(tet) < 0:
                tet = tuple(minus if v == node else v for v in tet)
            created.append(tet)
            parents.append(e)
    removed_volume = float(mesh.rest_volume[affected].sum()) if affected else 0.0
    created_arr = np.array(created, dtype=np.int64).reshape(-1, 4)
    vols = signed_volumes(X, created_arr)
    keep = vols > volume_epsilon
    event.sliver_volume = float(vols[~keep].sum())
    event.created_volume = float(vols.sum())
    event.removed_volume = removed_volume
    new_idx = mesh.replace_elements(affected, created_arr[keep], np.asarray(parents)[keep])

    event.new_nodes = (node, minus)
    event.removed_elements = affected
    event.created_elements = [int(i) for i in new_idx]
    event.relabeled_elements = relabel
    event.cut_nodes = list(cut_nodes.values())
    touched = set(ring) | {node, minus}
    for e in event.created_elements + relabel:
        touched.update(mesh.elements[e].tolist())
    event.released_nodes = release_hinges(mesh, touched)
    tips = list(event.cut_nodes)
    for v in ring:
        if label[v] != 0:
            continue
        sides = set()
        for e in mesh.node_to_elements[v]:
            row = mesh.elements[e]
            if node in row:
                sides.add(1)
            if minus in row:
                sides.add(-1)
        if len(sides) == 2:
            tips.append(v)
    event.crack_tip_nodes = sorted(tips)
    return event


# -- crack-tip propagation ---------------------------------------------------------------------------


CACHE_KEYS = ("cache_F", "cache_tensile", "cache_compressive")


def cache_element_stress(mesh: TetMesh, states):
    """Store this step's F and stress channels on the elements so that
    re-meshed children inherit them."""
    mesh.element_data["cache_F"] = states.F.copy()
    mesh.element_data["cache_tensile"] = states.tensile.copy()
    mesh.element_data["cache_compressive"] = states.compressive + states.viscous


def cached_node_forces(mesh: TetMesh, node: int):
    """Per-element (tensile, compressive) forces on ``node`` rebuilt from cached stresses."""
    els = sorted(mesh.node_to_elements[node])
    if not els:
        return np.zeros((0, 3)), np.zeros((0, 3))
    F = mesh.element_data["cache_F"][els]
    sp = mesh.element_data["cache_tensile"][els]
    sm = mesh.element_data["cache_compressive"][els]
    b = shape_gradients(mesh.basis[els])
    q = np.array([int(np.flatnonzero(mesh.elements[e] == node)[0]) for e in els])
    bq = b[np.arange(len(els)), q]
    vol = mesh.rest_volume[els][:, None]
    fp = -vol * np.einsum("eij,ejk,ek->ei", F, sp, bq)
    fm = -vol * np.einsum("eij,ejk,ek->ei", F, sm, bq)
    return fp, fm


def propagate_crack(mesh: TetMesh, origin: RemeshEvent, materials,
                    config: FractureConfig = FractureConfig()):
    """Advance the crack from ``origin`` across further nodes this step.

    Crack-tip nodes are re-evaluated with forces rebuilt from the cached
    element stresses; any tip whose separation eigenvalue exceeds its
    toughness is split with the origin's plane normal.  At most
    ``config.crack_depth_limit`` further splits are chained.
    """
    events = []
    if origin.noop or config.crack_depth_limit <= 0 or "cache_F" not in mesh.element_data:
        return events
    tough = np.array([m.toughness for m in materials], dtype=float)
    normal = origin.normal
    queue = [(t, 1) for t in origin.crack_tip_nodes]
    seen = set(origin.new_nodes)
    while queue:
        tip, depth = queue.pop(0)
        if tip in seen or depth > config.crack_depth_limit:
            continue
        seen.add(tip)
        els = mesh.node_to_elements[tip]
        if not els:
            continue
        tau = tough[mesh.material_id[sorted(els)]].min()
        if not np.isfinite(tau):
            continue
        fp, fm = cached_node_forces(mesh, tip)
        sep = separation_tensor(tip, fp, fm)
        if not sep.max_eigenvalue > tau:
            continue
        ev = split_at_node(mesh, tip, FracturePlane(mesh.material_pos[tip].copy(), normal),
                           config.snap, config.volume_epsilon)
        if ev.noop:
            continue
        ev.depth = depth
        events.append(ev)
        queue.extend((t, depth + 1) for t in ev.crack_tip_nodes if t not in seen)
    return events


def fracture_pass(mesh: TetMesh, forces, states, materials, config: FractureConfig = FractureConfig()):
    """Detect, split and propagate for one time step; returns all events."""
    if not config.enabled:
        return []
    cache_element_stress(mesh, states)
    candidates = detect_fractures(mesh, forces, materials, config, F=states.F)
    events = []
    for node, plane, _ in candidates:
        ev = split_at_node(mesh, node, plane, config.snap, config.volume_epsilon)
        if ev.noop:
            continue
        events.append(ev)
        events.extend(propagate_crack(mesh, ev, materials, config))
    return events
