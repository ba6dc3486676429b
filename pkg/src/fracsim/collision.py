"""Broad phase, exact tet-tet overlap and penalty contact.

Candidate pairs come from a median-split AABB hierarchy over elements that
is refit every step and rebuilt when the mesh topology changes.  Each pair
is resolved by clipping one tetrahedron against the other's four
half-spaces; the overlap volume and its centroid drive an equal and
opposite penalty force, shared among each element's nodes by barycentric
weights.  Nodes below the ground plane get a spring-damper response.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._accel import njit, pick
from .meshcore import TET_FACES, TetMesh

BOX_MARGIN = 1e-4


@dataclass
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def overlaps(self, other: "Aabb") -> bool:
        return bool(np.all(self.min <= other.max) and np.all(other.min <= self.max))

    def contains(self, other: "Aabb", tol: float = 0.0) -> bool:
        return bool(np.all(self.min <= other.min + tol) and np.all(other.max <= self.max + tol))


@dataclass
class ContactConfig:
    penalty_k: float = 1e8
    ground_height: float = 0.0
    ground_k: float = 1e5
    ground_damping: float = 0.0
    ground: bool = True

    def __post_init__(self):
        if not self.penalty_k > 0 or not self.ground_k > 0:
            raise ValueError("contact stiffnesses must be positive")
        if self.ground_damping < 0:
            raise ValueError("ground_damping must be non-negative")


@dataclass
class Bvh:
    """Flat binary tree: node 0 is the root, children follow their parent."""

    left: np.ndarray
    right: np.ndarray
    leaf_element: np.ndarray  # -1 for internal nodes
    box_min: np.ndarray
    box_max: np.ndarray
    pair_cache: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    n_elements: int = 0

    @property
    def n_nodes(self) -> int:
        return len(self.left)

    def depth(self) -> int:
        best, stack = 0, [(0, 1)]
        while stack:
            k, d = stack.pop()
            best = max(best, d)
            if self.left[k] >= 0:
                stack.append((self.left[k], d + 1))
                stack.append((self.right[k], d + 1))
        return best

    def box(self, k) -> Aabb:
        return Aabb(self.box_min[k].copy(), self.box_max[k].copy())


def element_boxes(mesh: TetMesh, margin: float = BOX_MARGIN):
    p = mesh.world_pos[mesh.elements]
    return p.min(axis=1) - margin, p.max(axis=1) + margin


def build_bvh(mesh: TetMesh) -> Bvh:
    m = mesh.n_elements
    cap = max(2 * m - 1, 1)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    leaf = np.full(cap, -1, dtype=np.int64)
    if m == 0:
        bvh = Bvh(left[:0], right[:0], leaf[:0], np.zeros((0, 3)), np.zeros((0, 3)))
        return bvh
    cent = mesh.world_pos[mesh.elements].mean(axis=1)
    count = 1
    stack = [(0, np.arange(m))]
    while stack:
        k, items = stack.pop()
        if len(items) == 1:
            leaf[k] = items[0]
            continue
        c = cent[items]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        order = items[np.lexsort((items, c[:, axis]))]
        half = len(order) // 2
        left[k], right[k] = count, count + 1
        count += 2
        stack.append((right[k], order[half:]))
        stack.append((left[k], order[:half]))
    bvh = Bvh(left, right, leaf, np.zeros((cap, 3)), np.zeros((cap, 3)), n_elements=m)
    _refit(bvh, mesh)
    return bvh


@njit
def _refit_numba(left, right, leaf, elements, world, margin, bmin, bmax):
    for k in range(len(left) - 1, -1, -1):
        e = leaf[k]
        if e >= 0:
            for i in range(3):
                lo = world[elements[e, 0], i]
                hi = lo
                for q in range(1, 4):
                    x = world[elements[e, q], i]
                    if x < lo:
                        lo = x
                    if x > hi:
                        hi = x
                bmin[k, i] = lo - margin
                bmax[k, i] = hi + margin
        else:
            a = left[k]
            b = right[k]
            for i in range(3):
                bmin[k, i] = min(bmin[a, i], bmin[b, i])
                bmax[k, i] = max(bmax[a, i], bmax[b, i])


def _refit_numpy(left, right, leaf, elements, world, margin, bmin, bmax):
    is_leaf = leaf >= 0
    p = world[elements[leaf[is_leaf]]]
    bmin[is_leaf] = p.min(axis=1) - margin
    bmax[is_leaf] = p.max(axis=1) + margin
    # children always have larger indices than their parent, so sweeping
    # internal nodes in decreasing index order is bottom-up
    for k in np.flatnonzero(~is_leaf)[::-1]:
        a, b = left[k], right[k]
        bmin[k] = np.minimum(bmin[a], bmin[b])
        bmax[k] = np.maximum(bmax[a], bmax[b])


_refit_impl = pick(_refit_numba, _refit_numpy)


def _refit(bvh: Bvh, mesh: TetMesh, impl=None):
    fn = {"numba": _refit_numba, "numpy": _refit_numpy, None: _refit_impl}[impl]
    fn(bvh.left, bvh.right, bvh.leaf_element, mesh.elements, np.ascontiguousarray(mesh.world_pos),
       BOX_MARGIN, bvh.box_min, bvh.box_max)


@njit
def _shares_node(elements, a, b):
    for i in range(4):
        for j in range(4):
            if elements[a, i] == elements[b, j]:
                return True
    return False


@njit
def _overlap(bmin, bmax, a, b):
    for i in range(3):
        if bmin[a, i] > bmax[b, i] or bmin[b, i] > bmax[a, i]:
            return False
    return True


@njit
def _self_pairs_numba(left, right, leaf, bmin, bmax, elements):
    out = np.empty((64, 2), dtype=np.int64)
    n_out = 0
    stack = np.empty((64, 2), dtype=np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    top = 1
    while top > 0:
        top -= 1
        a = stack[top, 0]
        b = stack[top, 1]
        if top + 3 >= stack.shape[0]:
            grown = np.empty((stack.shape[0] * 2, 2), dtype=np.int64)
            grown[: stack.shape[0]] = stack
            stack = grown
        if a == b:
            if leaf[a] >= 0:
                continue
            la = left[a]
            ra = right[a]
            stack[top, 0] = la
            stack[top, 1] = la
            stack[top + 1, 0] = ra
            stack[top + 1, 1] = ra
            stack[top + 2, 0] = la
            stack[top + 2, 1] = ra
            top += 3
            continue
        if not _overlap(bmin, bmax, a, b):
            continue
        ea = leaf[a]
        eb = leaf[b]
        if ea >= 0 and eb >= 0:
            if not _shares_node(elements, ea, eb):
                if n_out == out.shape[0]:
                    grown = np.empty((out.shape[0] * 2, 2), dtype=np.int64)
                    grown[:n_out] = out
                    out = grown
                out[n_out, 0] = min(ea, eb)
                out[n_out, 1] = max(ea, eb)
                n_out += 1
            continue
        if ea >= 0:
            stack[top, 0] = a
            stack[top, 1] = left[b]
            stack[top + 1, 0] = a
            stack[top + 1, 1] = right[b]
        else:
            stack[top, 0] = left[a]
            stack[top, 1] = b
            stack[top + 1, 0] = right[a]
            stack[top + 1, 1] = b
        top += 2
    return out[:n_out]


def _self_pairs_numpy(left, right, leaf, bmin, bmax, elements):
    out = []
    stack = [(0, 0)]
    while stack:
        a, b = stack.pop()
        if a == b:
            if leaf[a] < 0:
                la, ra = left[a], right[a]
                stack.extend([(la, la), (ra, ra), (la, ra)])
            continue
        if np.any(bmin[a] > bmax[b]) or np.any(bmin[b] > bmax[a]):
            continue
        ea, eb = leaf[a], leaf[b]
        if ea >= 0 and eb >= 0:
            if not np.intersect1d(elements[ea], elements[eb]).size:
                out.append((min(ea, eb), max(ea, eb)))
        elif ea >= 0:
            stack.extend([(a, left[b]), (a, right[b])])
        else:
            stack.extend([(left[a], b), (right[a], b)])
    return np.array(out, dtype=np.int64).reshape(-1, 2)


_self_pairs = pick(_self_pairs_numba, _self_pairs_numpy)


def _sorted_pairs(pairs: np.ndarray) -> np.ndarray:
    if len(pairs) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    m = np.int64(pairs.max()) + 1
    keys = np.unique(pairs[:, 0] * m + pairs[:, 1])
    return np.stack([keys // m, keys % m], axis=1)


def refit_and_pairs(bvh: Bvh, mesh: TetMesh, use_cache: bool = True, impl=None) -> np.ndarray:
    """Refit boxes to current world positions and return candidate element pairs.

    Pairs are (i, j) with i < j, sorted, never sharing a node.  The cache
    from the previous call seeds the result; the traversal completes it.
    """
    if bvh.n_elements != mesh.n_elements:
        raise ValueError("bvh is stale; rebuild it after topology changes")
    if mesh.n_elements < 2:
        bvh.pair_cache = np.zeros((0, 2), dtype=np.int64)
        return bvh.pair_cache
    _refit(bvh, mesh, impl)
    pieces = []
    if use_cache and len(bvh.pair_cache):
        lo, hi = element_boxes(mesh)
        a, b = bvh.pair_cache[:, 0], bvh.pair_cache[:, 1]
        still = np.all(lo[a] <= hi[b], axis=1) & np.all(lo[b] <= hi[a], axis=1)
        pieces.append(bvh.pair_cache[still])
    fn = {"numba": _self_pairs_numba, "numpy": _self_pairs_numpy, None: _self_pairs}[impl]
    pieces.append(fn(bvh.left, bvh.right, bvh.leaf_element, bvh.box_min, bvh.box_max, mesh.elements))
    pairs = _sorted_pairs(np.concatenate(pieces))
    bvh.pair_cache = pairs
    return pairs


def brute_force_pairs(mesh: TetMesh, margin: float = BOX_MARGIN) -> np.ndarray:
    lo, hi = element_boxes(mesh, margin)
    m = mesh.n_elements
    i, j = np.triu_indices(m, 1)
    hit = np.all(lo[i] <= hi[j], axis=1) & np.all(lo[j] <= hi[i], axis=1)
    i, j = i[hit], j[hit]
    shared = (mesh.elements[i][:, :, None] == mesh.elements[j][:, None, :]).any(axis=(1, 2))
    return np.stack([i[~shared], j[~shared]], axis=1).astype(np.int64)


# -- exact overlap of two tetrahedra ----------------------------------------------------------

_MAXF = 16
_MAXV = 24


def _orient_tet(t):
    t = np.asarray(t, dtype=np.float64)
    if np.linalg.det(np.stack([t[1] - t[0], t[2] - t[0], t[3] - t[0]], 1)) < 0:
        t = t[[0, 2, 1, 3]]
    return t


def _planes(t):
    """Unit outward normals and offsets of a positively oriented tet."""
    n = np.empty((4, 3))
    d = np.empty(4)
    for f in range(4):
        a, b, c = t[TET_FACES[f]]
        nn = np.cross(b - a, c - a)
        ln = np.linalg.norm(nn)
        n[f] = nn / ln if ln > 0 else 0.0
        d[f] = n[f] @ a
    return n, d


def _tet_intersection_numpy(A, B):
    A = _orient_tet(A)
    B = _orient_tet(B)
    scale = max(np.ptp(np.vstack([A, B]), axis=0).max(), 1e-300)
    eps = 1e-12 * scale
    nb, db = _planes(B)
    na, da = _planes(A)
    if np.any(np.all(A @ nb.T - db > eps, axis=0)) or np.any(np.all(B @ na.T - da > eps, axis=0)):
        return 0.0, np.zeros(3)
    polys = [A[list(f)] for f in TET_FACES]
    for k in range(4):
        n, off = nb[k], db[k]
        if not np.any(n):
            return 0.0, np.zeros(3)
        kept, cap, covered = [], [], False
        for poly in polys:
            dist = poly @ n - off
            if np.all(np.abs(dist) <= eps):
                kept.append(poly)
                covered = True
                continue
            if np.all(dist <= eps):
                kept.append(poly)
                cap.extend(poly[np.abs(dist) <= eps])
                continue
            if np.all(dist >= -eps):
                cap.extend(poly[np.abs(dist) <= eps])
                continue
            out = []
            cnt = len(poly)
            for i in range(cnt):
                p, q = poly[i], poly[(i + 1) % cnt]
                dp, dq = dist[i], dist[(i + 1) % cnt]
                if dp <= eps:
                    out.append(p)
                    if dp >= -eps:
                        cap.append(p)
                if (dp < -eps and dq > eps) or (dp > eps and dq < -eps):
                    x = p + dp / (dp - dq) * (q - p)
                    out.append(x)
                    cap.append(x)
            if len(out) >= 3:
                kept.append(np.array(out))
        if not covered and len(cap) >= 3:
            face = _cap_polygon(np.array(cap), n, eps)
            if face is not None:
                kept.append(face)
        polys = kept
        if len(polys) < 4:
            return 0.0, np.zeros(3)
    return _polyhedron_moments(polys)


def _cap_polygon(pts, n, eps):
    uniq = []
    for p in pts:
        if all(np.abs(p - u).max() > eps for u in uniq):
            uniq.append(p)
    if len(uniq) < 3:
        return None
    pts = np.array(uniq)
    c = pts.mean(axis=0)
    rel = pts - c
    u = rel[np.argmax(np.einsum("ij,ij->i", rel, rel))]
    u = u / np.linalg.norm(u)
    w = np.cross(n, u)
    ang = np.arctan2(rel @ w, rel @ u)
    return pts[np.argsort(ang, kind="stable")]


def _polyhedron_moments(polys):
    r = polys[0][0]
    vol6 = 0.0
    mom = np.zeros(3)
    for poly in polys:
        v0 = poly[0] - r
        for i in range(1, len(poly) - 1):
            v1, v2 = poly[i] - r, poly[i + 1] - r
            d = float(np.dot(v0, np.cross(v1, v2)))
            vol6 += d
            mom += d * (v0 + v1 + v2) / 4.0
    if vol6 <= 0.0:
        return 0.0, np.zeros(3)
    return vol6 / 6.0, r + mom / vol6


@njit
def _tet_planes(t, n, d):
    # faces (1,2,3), (0,3,2), (0,1,3), (0,2,1)
    fa = (1, 0, 0, 0)
    fb = (2, 3, 1, 2)
    fc = (3, 2, 3, 1)
    for f in range(4):
        a = fa[f]
        b = fb[f]
        c = fc[f]
        ux = t[b, 0] - t[a, 0]
        uy = t[b, 1] - t[a, 1]
        uz = t[b, 2] - t[a, 2]
        vx = t[c, 0] - t[a, 0]
        vy = t[c, 1] - t[a, 1]
        vz = t[c, 2] - t[a, 2]
        nx = uy * vz - uz * vy
        ny = uz * vx - ux * vz
        nz = ux * vy - uy * vx
        ln = math.sqrt(nx * nx + ny * ny + nz * nz)
        if ln > 0.0:
            nx /= ln
            ny /= ln
            nz /= ln
        n[f, 0] = nx
        n[f, 1] = ny
        n[f, 2] = nz
        d[f] = nx * t[a, 0] + ny * t[a, 1] + nz * t[a, 2]


@njit
def _orient_into(src, dst):
    ux = src[1, 0] - src[0, 0]
    uy = src[1, 1] - src[0, 1]
    uz = src[1, 2] - src[0, 2]
    vx = src[2, 0] - src[0, 0]
    vy = src[2, 1] - src[0, 1]
    vz = src[2, 2] - src[0, 2]
    wx = src[3, 0] - src[0, 0]
    wy = src[3, 1] - src[0, 1]
    wz = src[3, 2] - src[0, 2]
    det = ux * (vy * wz - vz * wy) - uy * (vx * wz - vz * wx) + uz * (vx * wy - vy * wx)
    for i in range(3):
        dst[0, i] = src[0, i]
        dst[3, i] = src[3, i]
        if det < 0.0:
            dst[1, i] = src[2, i]
            dst[2, i] = src[1, i]
        else:
            dst[1, i] = src[1, i]
            dst[2, i] = src[2, i]
    return det


@njit
def _tet_intersection_numba(A0, B0):
    cen = np.zeros(3)
    A = np.empty((4, 3))
    B = np.empty((4, 3))
    if _orient_into(A0, A) == 0.0 or _orient_into(B0, B) == 0.0:
        return 0.0, cen
    scale = 0.0
    for i in range(3):
        lo = A[0, i]
        hi = A[0, i]
        for q in range(4):
            lo = min(lo, A[q, i], B[q, i])
            hi = max(hi, A[q, i], B[q, i])
        scale = max(scale, hi - lo)
    eps = 1e-12 * scale
    na = np.empty((4, 3))
    da = np.empty(4)
    nb = np.empty((4, 3))
    db = np.empty(4)
    _tet_planes(A, na, da)
    _tet_planes(B, nb, db)
    for f in range(4):
        allout_a = True
        allout_b = True
        for q in range(4):
            if A[q, 0] * nb[f, 0] + A[q, 1] * nb[f, 1] + A[q, 2] * nb[f, 2] - db[f] <= eps:
                allout_a = False
            if B[q, 0] * na[f, 0] + B[q, 1] * na[f, 1] + B[q, 2] * na[f, 2] - da[f] <= eps:
                allout_b = False
        if allout_a or allout_b:
            return 0.0, cen

    poly = np.empty((_MAXF, _MAXV, 3))
    cnt = np.zeros(_MAXF, dtype=np.int64)
    npoly = 4
    fa = (1, 0, 0, 0)
    fb = (2, 3, 1, 2)
    fc = (3, 2, 3, 1)
    for f in range(4):
        for i in range(3):
            poly[f, 0, i] = A[fa[f], i]
            poly[f, 1, i] = A[fb[f], i]
            poly[f, 2, i] = A[fc[f], i]
        cnt[f] = 3
    newp = np.empty((_MAXF, _MAXV, 3))
    newc = np.zeros(_MAXF, dtype=np.int64)
    cap = np.empty((4 * _MAXV, 3))
    dist = np.empty(_MAXV)
    for k in range(4):
        nx = nb[k, 0]
        ny = nb[k, 1]
        nz = nb[k, 2]
        off = db[k]
        if nx == 0.0 and ny == 0.0 and nz == 0.0:
            return 0.0, cen
        ncap = 0
        covered = False
        nnew = 0
        for f in range(npoly):
            c = cnt[f]
            n_in = 0
            n_on = 0
            n_outv = 0
            for i in range(c):
                dd = poly[f, i, 0] * nx + poly[f, i, 1] * ny + poly[f, i, 2] * nz - off
                dist[i] = dd
                if dd > eps:
                    n_outv += 1
                elif dd < -eps:
                    n_in += 1
                else:
                    n_on += 1
            if n_on == c:
                covered = True
            if n_outv == 0:
                if n_on != c:
                    for i in range(c):
                        if abs(dist[i]) <= eps and ncap < cap.shape[0]:
                            cap[ncap] = poly[f, i]
                            ncap += 1
                if nnew < _MAXF:
                    for i in range(c):
                        newp[nnew, i] = poly[f, i]
                    newc[nnew] = c
                    nnew += 1
                continue
            if n_in == 0:
                for i in range(c):
                    if abs(dist[i]) <= eps and ncap < cap.shape[0]:
                        cap[ncap] = poly[f, i]
                        ncap += 1
                continue
            m = 0
            for i in range(c):
                j = (i + 1) % c
                dp = dist[i]
                dq = dist[j]
                if dp <= eps:
                    if m < _MAXV:
                        newp[nnew, m] = poly[f, i]
                        m += 1
                    if dp >= -eps and ncap < cap.shape[0]:
                        cap[ncap] = poly[f, i]
                        ncap += 1
                if (dp < -eps and dq > eps) or (dp > eps and dq < -eps):
                    t = dp / (dp - dq)
                    if m < _MAXV:
                        for a in range(3):
                            newp[nnew, m, a] = poly[f, i, a] + t * (poly[f, j, a] - poly[f, i, a])
                        if ncap < cap.shape[0]:
                            cap[ncap] = newp[nnew, m]
                            ncap += 1
                        m += 1
            if m >= 3 and nnew < _MAXF:
                newc[nnew] = m
                nnew += 1
        if not covered and ncap >= 3 and nnew < _MAXF:
            m = _cap_into(cap, ncap, nx, ny, nz, eps, newp[nnew])
            if m >= 3:
                newc[nnew] = m
                nnew += 1
        if nnew < 4:
            return 0.0, cen
        tmp = poly
        poly = newp
        newp = tmp
        tmpc = cnt
        cnt = newc
        newc = tmpc
        npoly = nnew

    rx = poly[0, 0, 0]
    ry = poly[0, 0, 1]
    rz = poly[0, 0, 2]
    vol6 = 0.0
    mx = 0.0
    my = 0.0
    mz = 0.0
    for f in range(npoly):
        ax = poly[f, 0, 0] - rx
        ay = poly[f, 0, 1] - ry
        az = poly[f, 0, 2] - rz
        for i in range(1, cnt[f] - 1):
            bx = poly[f, i, 0] - rx
            by = poly[f, i, 1] - ry
            bz = poly[f, i, 2] - rz
            cx = poly[f, i + 1, 0] - rx
            cy = poly[f, i + 1, 1] - ry
            cz = poly[f, i + 1, 2] - rz
            d = ax * (by * cz - bz * cy) - ay * (bx * cz - bz * cx) + az * (bx * cy - by * cx)
            vol6 += d
            mx += d * (ax + bx + cx) * 0.25
            my += d * (ay + by + cy) * 0.25
            mz += d * (az + bz + cz) * 0.25
    if vol6 <= 0.0:
        return 0.0, cen
    cen[0] = rx + mx / vol6
    cen[1] = ry + my / vol6
    cen[2] = rz + mz / vol6
    return vol6 / 6.0, cen


@njit
def _cap_into(cap, ncap, nx, ny, nz, eps, out):
    uniq = np.empty((ncap, 3))
    nu = 0
    for i in range(ncap):
        dup = False
        for j in range(nu):
            if (abs(cap[i, 0] - uniq[j, 0]) <= eps and abs(cap[i, 1] - uniq[j, 1]) <= eps
                    and abs(cap[i, 2] - uniq[j, 2]) <= eps):
                dup = True
                break
        if not dup:
            uniq[nu] = cap[i]
            nu += 1
    if nu < 3 or nu > out.shape[0]:
        return 0
    c0 = 0.0
    c1 = 0.0
    c2 = 0.0
    for i in range(nu):
        c0 += uniq[i, 0]
        c1 += uniq[i, 1]
        c2 += uniq[i, 2]
    c0 /= nu
    c1 /= nu
    c2 /= nu
    best = 0
    bestd = -1.0
    for i in range(nu):
        dd = (uniq[i, 0] - c0) ** 2 + (uniq[i, 1] - c1) ** 2 + (uniq[i, 2] - c2) ** 2
        if dd > bestd:
            bestd = dd
            best = i
    ln = math.sqrt(bestd)
    ux = (uniq[best, 0] - c0) / ln
    uy = (uniq[best, 1] - c1) / ln
    uz = (uniq[best, 2] - c2) / ln
    wx = ny * uz - nz * uy
    wy = nz * ux - nx * uz
    wz = nx * uy - ny * ux
    ang = np.empty(nu)
    for i in range(nu):
        rx = uniq[i, 0] - c0
        ry = uniq[i, 1] - c1
        rz = uniq[i, 2] - c2
        ang[i] = math.atan2(rx * wx + ry * wy + rz * wz, rx * ux + ry * uy + rz * uz)
    order = np.argsort(ang, kind="mergesort")
    for i in range(nu):
        out[i] = uniq[order[i]]
    return nu


_tet_intersection = pick(_tet_intersection_numba, _tet_intersection_numpy)


def tet_intersection(A, B, impl=None):
    """Volume and centroid of the overlap of two tetrahedra given as (4, 3) arrays."""
    fn = {"numba": _tet_intersection_numba, "numpy": _tet_intersection_numpy, None: _tet_intersection}[impl]
    vol, cen = fn(np.ascontiguousarray(A, dtype=np.float64), np.ascontiguousarray(B, dtype=np.float64))
    return float(vol), np.asarray(cen, dtype=float)


# -- penalty forces ----------------------------------------------------------------------------


@njit
def _barycentric(T, p, out):
    # solve [x1-x0, x2-x0, x3-x0] l = p - x0
    a00 = T[1, 0] - T[0, 0]
    a01 = T[2, 0] - T[0, 0]
    a02 = T[3, 0] - T[0, 0]
    a10 = T[1, 1] - T[0, 1]
    a11 = T[2, 1] - T[0, 1]
    a12 = T[3, 1] - T[0, 1]
    a20 = T[1, 2] - T[0, 2]
    a21 = T[2, 2] - T[0, 2]
    a22 = T[3, 2] - T[0, 2]
    r0 = p[0] - T[0, 0]
    r1 = p[1] - T[0, 1]
    r2 = p[2] - T[0, 2]
    det = a00 * (a11 * a22 - a12 * a21) - a01 * (a10 * a22 - a12 * a20) + a02 * (a10 * a21 - a11 * a20)
    if det == 0.0:
        for i in range(4):
            out[i] = 0.25
        return
    l1 = (r0 * (a11 * a22 - a12 * a21) - a01 * (r1 * a22 - a12 * r2) + a02 * (r1 * a21 - a11 * r2)) / det
    l2 = (a00 * (r1 * a22 - a12 * r2) - r0 * (a10 * a22 - a12 * a20) + a02 * (a10 * r2 - r1 * a20)) / det
    l3 = (a00 * (a11 * r2 - r1 * a21) - a01 * (a10 * r2 - r1 * a20) + r0 * (a10 * a21 - a11 * a20)) / det
    out[0] = 1.0 - l1 - l2 - l3
    out[1] = l1
    out[2] = l2
    out[3] = l3


@njit
def _penalty_numba(pairs, elements, world, k, forces):
    A = np.empty((4, 3))
    B = np.empty((4, 3))
    wa = np.empty(4)
    wb = np.empty(4)
    total_volume = 0.0
    n_active = 0
    for p in range(pairs.shape[0]):
        ea = pairs[p, 0]
        eb = pairs[p, 1]
        for q in range(4):
            for i in range(3):
                A[q, i] = world[elements[ea, q], i]
                B[q, i] = world[elements[eb, q], i]
        apart = False
        for i in range(3):
            if min(A[0, i], A[1, i], A[2, i], A[3, i]) >= max(B[0, i], B[1, i], B[2, i], B[3, i]) or \
                    min(B[0, i], B[1, i], B[2, i], B[3, i]) >= max(A[0, i], A[1, i], A[2, i], A[3, i]):
                apart = True
        if apart:
            continue
        vol, cen = _tet_intersection_numba(A, B)
        if vol <= 0.0:
            continue
        dx = 0.0
        dy = 0.0
        dz = 0.0
        for q in range(4):
            dx += A[q, 0] - B[q, 0]
            dy += A[q, 1] - B[q, 1]
            dz += A[q, 2] - B[q, 2]
        ln = math.sqrt(dx * dx + dy * dy + dz * dz)
        if ln == 0.0:
            continue
        mag = k * vol / ln
        fx = mag * dx
        fy = mag * dy
        fz = mag * dz
        _barycentric(A, cen, wa)
        _barycentric(B, cen, wb)
        for q in range(4):
            na = elements[ea, q]
            nb = elements[eb, q]
            forces[na, 0] += wa[q] * fx
            forces[na, 1] += wa[q] * fy
            forces[na, 2] += wa[q] * fz
            forces[nb, 0] -= wb[q] * fx
            forces[nb, 1] -= wb[q] * fy
            forces[nb, 2] -= wb[q] * fz
        total_volume += vol
        n_active += 1
    return total_volume, n_active


def _bary_numpy(T, p):
    m = np.stack([T[1] - T[0], T[2] - T[0], T[3] - T[0]], axis=1)
    try:
        lam = np.linalg.solve(m, p - T[0])
    except np.linalg.LinAlgError:
        return np.full(4, 0.25)
    return np.concatenate([[1.0 - lam.sum()], lam])


def _penalty_numpy(pairs, elements, world, k, forces):
    total_volume, n_active = 0.0, 0
    for ea, eb in pairs:
        A, B = world[elements[ea]], world[elements[eb]]
        vol, cen = _tet_intersection_numpy(A, B)
        if vol <= 0.0:
            continue
        d = A.sum(axis=0) - B.sum(axis=0)
        ln = np.linalg.norm(d)
        if ln == 0.0:
            continue
        f = k * vol * d / ln
        for q, w in enumerate(_bary_numpy(A, cen)):
            forces[elements[ea, q]] += w * f
        for q, w in enumerate(_bary_numpy(B, cen)):
            forces[elements[eb, q]] -= w * f
        total_volume += vol
        n_active += 1
    return total_volume, n_active


_penalty = pick(_penalty_numba, _penalty_numpy)


def penalty_forces(pairs, mesh: TetMesh, config: ContactConfig, out=None, impl=None):
    """Accumulate penalty forces for candidate pairs into ``out`` (N, 3).

    Returns ``(forces, overlap_volume, active_pairs)``.
    """
    forces = np.zeros((mesh.n_nodes, 3)) if out is None else out
    pairs = np.ascontiguousarray(pairs, dtype=np.int64).reshape(-1, 2)
    fn = {"numba": _penalty_numba, "numpy": _penalty_numpy, None: _penalty}[impl]
    vol, n = fn(pairs, mesh.elements, np.ascontiguousarray(mesh.world_pos), float(config.penalty_k), forces)
    return forces, float(vol), int(n)


def ground_forces(mesh: TetMesh, config: ContactConfig, out=None) -> np.ndarray:
    forces = np.zeros((mesh.n_nodes, 3)) if out is None else out
    if not config.ground:
        return forces
    depth = config.ground_height - mesh.world_pos[:, 2]
    hit = np.flatnonzero(depth > 0.0)
    if len(hit) == 0:
        return forces
    v = mesh.velocity[hit]
    normal = np.maximum(config.ground_k * depth[hit] - config.ground_damping * v[:, 2], 0.0)
    tang = -config.ground_damping * v[:, :2]
    tn = np.linalg.norm(tang, axis=1)
    scale = np.where(tn > normal, normal / np.where(tn > 0, tn, 1.0), 1.0)
    forces[hit, 0] += tang[:, 0] * scale
    forces[hit, 1] += tang[:, 1] * scale
    forces[hit, 2] += normal
    return forces


def ground_implicit(mesh: TetMesh, config: ContactConfig, dt: float, velocity: np.ndarray) -> np.ndarray:
    """Apply the ground force law to ``velocity`` with the spring evaluated at the step's end.

    ``velocity`` already holds every other force for the step.  The normal
    spring and damper are integrated backward in time per node, which is
    stable for any node mass; the tangential damper is capped at the normal
    force as in :func:`ground_forces` and never reverses the sliding
    direction.  Returns the per-node normal force that was applied.
    """
    normal = np.zeros(mesh.n_nodes)
    if not config.ground:
        return normal
    m = mesh.mass
    z = mesh.world_pos[:, 2]
    h = config.ground_height
    cand = np.flatnonzero((m > 0.0) & (z + dt * velocity[:, 2] < h))
    if len(cand) == 0:
        return normal
    k, c = config.ground_k, config.ground_damping
    mi = m[cand]
    vz = (mi * velocity[cand, 2] + dt * k * (h - z[cand])) / (mi + dt * dt * k + dt * c)
    fn = k * (h - z[cand] - dt * vz) - c * vz
    act = fn > 0.0
    idx, fn, vz, mi = cand[act], fn[act], vz[act], mi[act]
    velocity[idx, 2] = vz
    normal[idx] = fn
    if c > 0.0:
        vt = velocity[idx, :2]
        damped = vt / (1.0 + dt * c / mi)[:, None]
        ft = np.linalg.norm(vt - damped, axis=1) * mi / dt
        speed = np.linalg.norm(vt, axis=1)
        capped = ft > fn
        limit = np.maximum(speed - dt * fn / mi, 0.0) / np.where(speed > 0, speed, 1.0)
        damped[capped] = vt[capped] * limit[capped, None]
        velocity[idx, :2] = damped
    return normal
