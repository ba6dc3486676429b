"""Element kinematics, constitutive response and internal nodal forces.

Strain is Green's ``0.5 (F^T F - I)``, the strain rate its time derivative,
and both the elastic and damping stresses are isotropic-linear in them.
Elastic stress is split by eigenvalue sign into tensile and compressive
parts; the nodal forces from each part are kept separately because the
fracture criterion needs them.  Damping stress is assigned to the
compressive channel.

The per-element loop in :func:`evaluate_elements` is the hottest code in a
simulation step and has a compiled and a vectorized numpy implementation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from ._accel import njit, pick
from .eigen import _eigh3_numpy, _jacobi3, eigh3_batch
from .meshcore import TetMesh

DECOMPOSE_REL_TOL = 1e-9


@dataclass(frozen=True)
class MaterialParams:
    density: float
    lame_mu: float
    lame_lambda: float
    damp_mu: float = 0.0
    damp_lambda: float = 0.0
    toughness: float = math.inf
    plastic_yield: float = math.inf
    plastic_creep: float = 0.0
    plastic_max: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ValueError(f"{f.name} must be a number, got {val!r}")
            if math.isnan(val):
                raise ValueError(f"{f.name} is NaN")
        for name in ("density", "lame_mu", "lame_lambda", "damp_mu", "damp_lambda"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.density <= 0:
            raise ValueError("density must be positive")
        if self.lame_mu < 0:
            raise ValueError("lame_mu must be non-negative")
        if 3 * self.lame_lambda + 2 * self.lame_mu <= 0:
            raise ValueError("3*lame_lambda + 2*lame_mu must be positive")
        if self.damp_mu < 0 or self.damp_lambda < 0:
            raise ValueError("damping constants must be non-negative")
        if not self.toughness > 0:
            raise ValueError("toughness must be positive")
        if self.plastic_yield < 0 or self.plastic_creep < 0 or self.plastic_max < 0:
            raise ValueError("plasticity parameters must be non-negative")

    @property
    def wave_speed(self) -> float:
        return math.sqrt((self.lame_lambda + 2.0 * self.lame_mu) / self.density)


def material_arrays(materials, material_id):
    """Per-element columns (mu, lam, phi, psi) gathered from the material table."""
    table = np.array([[m.lame_mu, m.lame_lambda, m.damp_mu, m.damp_lambda] for m in materials],
                     dtype=np.float64).reshape(-1, 4)
    return np.ascontiguousarray(table[material_id])


# -- single-element operations ----------------------------------------------------------


def deformation_gradient(mesh: TetMesh, element: int, positions=None) -> np.ndarray:
    x = mesh.world_pos if positions is None else positions
    n = mesh.elements[element]
    p = (x[n[1:]] - x[n[0]]).T
    return p @ mesh.basis[element]


def deformation_rate(mesh: TetMesh, element: int) -> np.ndarray:
    return deformation_gradient(mesh, element, mesh.velocity)


def green_strain(F) -> np.ndarray:
    F = np.asarray(F, dtype=float)
    return 0.5 * (F.T @ F - np.eye(3))


def strain_rate(F, Fdot) -> np.ndarray:
    F = np.asarray(F, dtype=float)
    Fdot = np.asarray(Fdot, dtype=float)
    return 0.5 * (F.T @ Fdot + Fdot.T @ F)


def elastic_stress(strain, material: MaterialParams) -> np.ndarray:
    strain = np.asarray(strain, dtype=float)
    return material.lame_lambda * np.trace(strain) * np.eye(3) + 2.0 * material.lame_mu * strain


def viscous_stress(rate, material: MaterialParams) -> np.ndarray:
    rate = np.asarray(rate, dtype=float)
    return material.damp_lambda * np.trace(rate) * np.eye(3) + 2.0 * material.damp_mu * rate


def stress_decompose(stress):
    """Split a symmetric stress into (tensile, compressive) parts.

    Eigenvalues smaller than 1e-9 of the Frobenius norm go to neither part.
    """
    stress = np.asarray(stress, dtype=float)
    w, v = eigh3_batch(stress[None])
    big = np.abs(stress).max()
    norm = big * np.linalg.norm(stress / big) if big > 0 else 0.0
    return _split(w[0], v[0], norm)


def _split(w, v, norm):
    cut = DECOMPOSE_REL_TOL * norm
    pos = np.where(w > cut, w, 0.0)
    neg = np.where(w < -cut, w, 0.0)
    return (v * pos) @ v.T, (v * neg) @ v.T


def deviatoric(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a - np.trace(a) / 3.0 * np.eye(3)


def update_plastic(strain, plastic, material: MaterialParams, dt: float) -> np.ndarray:
    """Return the new plastic strain after one step of deviatoric creep."""
    plastic = np.asarray(plastic, dtype=float)
    elastic = np.asarray(strain, dtype=float) - plastic
    dev = deviatoric(elastic)
    norm = np.linalg.norm(dev)
    out = plastic
    if norm > material.plastic_yield:
        alpha = min(1.0, material.plastic_creep * dt * (norm - material.plastic_yield) / norm)
        out = plastic + alpha * (deviatoric(strain) - plastic)
    pn = np.linalg.norm(out)
    if pn > material.plastic_max:
        out = out * (material.plastic_max / pn)
    return out


def shape_gradients(basis) -> np.ndarray:
    """Material-space gradients of the four shape functions, as rows."""
    basis = np.asarray(basis)
    b = np.empty(basis.shape[:-2] + (4, 3))
    b[..., 1:, :] = basis
    b[..., 0, :] = -basis.sum(axis=-2)
    return b


def nodal_forces(F, stress, basis, rest_volume) -> np.ndarray:
    """(4, 3) forces on an element's nodes for the given material-frame stress."""
    b = shape_gradients(basis)
    return -rest_volume * (F @ np.asarray(stress) @ b.T).T


def strain_energy(strain, material: MaterialParams, rest_volume: float) -> float:
    tr = np.trace(strain)
    return rest_volume * (0.5 * material.lame_lambda * tr * tr + material.lame_mu * np.sum(strain * strain))


# -- batched evaluation ---------------------------------------------------------------------


@dataclass
class ElementStates:
    """Per-element kinematic and stress state, arrays parallel to mesh.elements."""

    F: np.ndarray
    Fdot: np.ndarray
    strain: np.ndarray
    strain_rate: np.ndarray
    plastic_strain: np.ndarray
    stress: np.ndarray  # elastic stress
    viscous: np.ndarray
    tensile: np.ndarray
    compressive: np.ndarray

    def __len__(self):
        return len(self.F)

    def element(self, e):
        return ElementState(**{f.name: getattr(self, f.name)[e] for f in fields(self)})


@dataclass
class ElementState:
    F: np.ndarray
    Fdot: np.ndarray
    strain: np.ndarray
    strain_rate: np.ndarray
    plastic_strain: np.ndarray
    stress: np.ndarray
    viscous: np.ndarray
    tensile: np.ndarray
    compressive: np.ndarray


@dataclass
class NodalForceSet:
    """Tensile/compressive force on each (element, local node) plus node totals."""

    tensile: np.ndarray  # (M, 4, 3)
    compressive: np.ndarray  # (M, 4, 3)
    total: np.ndarray  # (N, 3)


@njit
def _evaluate_numba(world, vel, elements, basis, volume, plastic, mat):
    m = elements.shape[0]
    F = np.empty((m, 3, 3))
    Fd = np.empty((m, 3, 3))
    eps = np.empty((m, 3, 3))
    nu = np.empty((m, 3, 3))
    sig = np.empty((m, 3, 3))
    vis = np.empty((m, 3, 3))
    sp = np.empty((m, 3, 3))
    sm = np.empty((m, 3, 3))
    fp = np.empty((m, 4, 3))
    fm = np.empty((m, 4, 3))
    P = np.empty((3, 3))
    Pd = np.empty((3, 3))
    a = np.empty((3, 3))
    w = np.empty(3)
    v = np.empty((3, 3))
    b = np.empty((4, 3))
    FS = np.empty((3, 3))
    for e in range(m):
        n0 = elements[e, 0]
        for k in range(3):
            nk = elements[e, k + 1]
            for i in range(3):
                P[i, k] = world[nk, i] - world[n0, i]
                Pd[i, k] = vel[nk, i] - vel[n0, i]
        for i in range(3):
            for j in range(3):
                s = 0.0
                sd = 0.0
                for k in range(3):
                    s += P[i, k] * basis[e, k, j]
                    sd += Pd[i, k] * basis[e, k, j]
                F[e, i, j] = s
                Fd[e, i, j] = sd
        for i in range(3):
            for j in range(3):
                s = 0.0
                sd = 0.0
                for k in range(3):
                    s += F[e, k, i] * F[e, k, j]
                    sd += F[e, k, i] * Fd[e, k, j] + Fd[e, k, i] * F[e, k, j]
                eps[e, i, j] = 0.5 * (s - (1.0 if i == j else 0.0))
                nu[e, i, j] = 0.5 * sd
        mu = mat[e, 0]
        lam = mat[e, 1]
        phi = mat[e, 2]
        psi = mat[e, 3]
        tr_el = 0.0
        tr_nu = 0.0
        for i in range(3):
            tr_el += eps[e, i, i] - plastic[e, i, i]
            tr_nu += nu[e, i, i]
        norm2 = 0.0
        for i in range(3):
            for j in range(3):
                d = 1.0 if i == j else 0.0
                s = lam * tr_el * d + 2.0 * mu * (eps[e, i, j] - plastic[e, i, j])
                sig[e, i, j] = s
                vis[e, i, j] = psi * tr_nu * d + 2.0 * phi * nu[e, i, j]
                a[i, j] = s
                norm2 += s * s
        _jacobi3(a, w, v)
        cut = 1e-9 * np.sqrt(norm2)
        for i in range(3):
            for j in range(3):
                sp_ij = 0.0
                sm_ij = 0.0
                for k in range(3):
                    if w[k] > cut:
                        sp_ij += w[k] * v[i, k] * v[j, k]
                    elif w[k] < -cut:
                        sm_ij += w[k] * v[i, k] * v[j, k]
                sp[e, i, j] = sp_ij
                sm[e, i, j] = sm_ij
        for k in range(3):
            b[0, k] = -(basis[e, 0, k] + basis[e, 1, k] + basis[e, 2, k])
            for r in range(3):
                b[r + 1, k] = basis[e, r, k]
        vol = volume[e]
        # tensile channel: -V F sp b_i
        for i in range(3):
            for j in range(3):
                s = 0.0
                for k in range(3):
                    s += F[e, i, k] * sp[e, k, j]
                FS[i, j] = s
        for q in range(4):
            for i in range(3):
                s = 0.0
                for k in range(3):
                    s += FS[i, k] * b[q, k]
                fp[e, q, i] = -vol * s
        # compressive channel carries damping: -V F (sm + vis) b_i
        for i in range(3):
            for j in range(3):
                s = 0.0
                for k in range(3):
                    s += F[e, i, k] * (sm[e, k, j] + vis[e, k, j])
                FS[i, j] = s
        for q in range(4):
            for i in range(3):
                s = 0.0
                for k in range(3):
                    s += FS[i, k] * b[q, k]
                fm[e, q, i] = -vol * s
    return F, Fd, eps, nu, sig, vis, sp, sm, fp, fm


def _evaluate_numpy(world, vel, elements, basis, volume, plastic, mat):
    P = np.transpose(world[elements[:, 1:]] - world[elements[:, :1]], (0, 2, 1))
    Pd = np.transpose(vel[elements[:, 1:]] - vel[elements[:, :1]], (0, 2, 1))
    F = P @ basis
    Fd = Pd @ basis
    Ft = np.swapaxes(F, 1, 2)
    eye = np.eye(3)
    eps = 0.5 * (Ft @ F - eye)
    nu = 0.5 * (Ft @ Fd + np.swapaxes(Fd, 1, 2) @ F)
    el = eps - plastic
    mu, lam, phi, psi = (mat[:, k, None, None] for k in range(4))
    tr_el = np.trace(el, axis1=1, axis2=2)[:, None, None]
    tr_nu = np.trace(nu, axis1=1, axis2=2)[:, None, None]
    sig = lam * tr_el * eye + 2.0 * mu * el
    vis = psi * tr_nu * eye + 2.0 * phi * nu
    w, v = _eigh3_numpy(sig)
    cut = DECOMPOSE_REL_TOL * np.linalg.norm(sig, axis=(1, 2))[:, None]
    wp = np.where(w > cut, w, 0.0)
    wm = np.where(w < -cut, w, 0.0)
    vt = np.swapaxes(v, 1, 2)
    sp = (v * wp[:, None, :]) @ vt
    sm = (v * wm[:, None, :]) @ vt
    b = shape_gradients(basis)
    bt = np.swapaxes(b, 1, 2)
    vol = volume[:, None, None]
    fp = -vol * np.swapaxes(F @ sp @ bt, 1, 2)
    fm = -vol * np.swapaxes(F @ (sm + vis) @ bt, 1, 2)
    return F, Fd, eps, nu, sig, vis, sp, sm, fp, fm


_evaluate = pick(_evaluate_numba, _evaluate_numpy)


@njit
def _scatter_numba(elements, fp, fm, n_nodes):
    out = np.zeros((n_nodes, 3))
    for e in range(elements.shape[0]):
        for q in range(4):
            n = elements[e, q]
            for i in range(3):
                out[n, i] += fp[e, q, i] + fm[e, q, i]
    return out


def _scatter_numpy(elements, fp, fm, n_nodes):
    out = np.zeros((n_nodes, 3))
    np.add.at(out, elements.reshape(-1), (fp + fm).reshape(-1, 3))
    return out


_scatter = pick(_scatter_numba, _scatter_numpy)


def plastic_strain_of(mesh: TetMesh) -> np.ndarray:
    ps = mesh.element_data.get("plastic_strain")
    if ps is None or len(ps) != mesh.n_elements:
        ps = np.zeros((mesh.n_elements, 3, 3))
        mesh.element_data["plastic_strain"] = ps
    return ps


def evaluate_elements(mesh: TetMesh, materials, impl=None):
    """Element states and nodal forces for the whole mesh.

    ``impl`` may be ``"numba"`` or ``"numpy"`` to force a path; by default the
    environment switch decides.
    """
    fn = {"numba": _evaluate_numba, "numpy": _evaluate_numpy, None: _evaluate}[impl]
    sc = {"numba": _scatter_numba, "numpy": _scatter_numpy, None: _scatter}[impl]
    n = mesh.n_nodes
    plastic = plastic_strain_of(mesh)
    if mesh.n_elements == 0:
        z = np.zeros((0, 3, 3))
        return (ElementStates(z, z, z, z, z, z, z, z, z),
                NodalForceSet(np.zeros((0, 4, 3)), np.zeros((0, 4, 3)), np.zeros((n, 3))))
    mat = material_arrays(materials, mesh.material_id)
    F, Fd, eps, nu, sig, vis, sp, sm, fp, fm = fn(
        np.ascontiguousarray(mesh.world_pos), np.ascontiguousarray(mesh.velocity),
        np.ascontiguousarray(mesh.elements), np.ascontiguousarray(mesh.basis),
        np.ascontiguousarray(mesh.rest_volume), np.ascontiguousarray(plastic), mat)
    total = sc(mesh.elements, fp, fm, n)
    states = ElementStates(F, Fd, eps, nu, plastic.copy(), sig, vis, sp, sm)
    return states, NodalForceSet(fp, fm, total)


def elastic_energy(mesh: TetMesh, states: ElementStates, materials) -> float:
    mat = material_arrays(materials, mesh.material_id)
    el = states.strain - states.plastic_strain
    tr = np.trace(el, axis1=1, axis2=2)
    dens = 0.5 * mat[:, 1] * tr * tr + mat[:, 0] * np.sum(el * el, axis=(1, 2))
    return float(np.sum(mesh.rest_volume * dens))


def update_plastic_batch(mesh: TetMesh, states: ElementStates, materials, dt: float):
    """Advance every element's plastic strain in place on the mesh."""
    ymat = np.array([[m.plastic_yield, m.plastic_creep, m.plastic_max] for m in materials]).reshape(-1, 3)
    cols = ymat[mesh.material_id]
    active = np.isfinite(cols[:, 0])
    if not np.any(active):
        return
    plastic = plastic_strain_of(mesh)
    idx = np.flatnonzero(active)
    eye = np.eye(3)
    eps = states.strain[idx]
    pl = plastic[idx]
    el = eps - pl
    dev = el - np.trace(el, axis1=1, axis2=2)[:, None, None] / 3.0 * eye
    norm = np.linalg.norm(dev, axis=(1, 2))
    yld, creep, pmax = cols[idx, 0], cols[idx, 1], cols[idx, 2]
    flow = norm > yld
    alpha = np.zeros_like(norm)
    alpha[flow] = np.minimum(1.0, creep[flow] * dt * (norm[flow] - yld[flow]) / norm[flow])
    deveps = eps - np.trace(eps, axis1=1, axis2=2)[:, None, None] / 3.0 * eye
    new = pl + alpha[:, None, None] * (deveps - pl)
    pn = np.linalg.norm(new, axis=(1, 2))
    over = pn > pmax
    new[over] *= (pmax[over] / pn[over])[:, None, None]
    plastic[idx] = new
