"""Lumped masses and the explicit time step.

One step runs, in order: element evaluation, contact forces, a symplectic
Euler update of velocities then positions, plasticity, and the fracture
pass.  The ground spring is the one force integrated implicitly, so light
nodes created by re-meshing cannot destabilise resting contact.  Every reduction over elements is done in element-index order so a
run is reproducible bit for bit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .collision import Bvh, ContactConfig, build_bvh, ground_implicit, penalty_forces, refit_and_pairs
from .continuum import (ElementStates, NodalForceSet, elastic_energy, evaluate_elements, shape_gradients,
                        update_plastic_batch)
from .fracture import FractureConfig, fracture_pass
from .meshcore import TET_EDGES, TetMesh

log = logging.getLogger(__name__)

DEFAULT_GRAVITY = (0.0, 0.0, -9.81)
# Half the edge-based estimate already puts an isolated tet's stiffest mode
# past the symplectic Euler limit, so the default is a quarter.
DEFAULT_SAFETY = 0.25


class NumericalError(RuntimeError):
    def __init__(self, step, node, what="position"):
        if node < 0:
            super().__init__(f"{what} collapsed in step {step}")
        else:
            super().__init__(f"non-finite {what} at node {node} in step {step}")
        self.step = step
        self.node = node


@dataclass
class IntegratorConfig:
    dt: float = 1e-4
    gravity: tuple = DEFAULT_GRAVITY
    max_steps: int = 1000
    substep_safety: float = DEFAULT_SAFETY
    max_substeps: int = 64

    def __post_init__(self):
        self.gravity = tuple(float(g) for g in self.gravity)
        if len(self.gravity) != 3:
            raise ValueError("gravity must have three components")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if int(self.max_steps) < 1:
            raise ValueError("max_steps must be at least 1")
        if not 0.0 < self.substep_safety <= 1.0:
            raise ValueError("substep_safety must lie in (0, 1]")
        if int(self.max_substeps) < 1:
            raise ValueError("max_substeps must be at least 1")


@dataclass
class SimState:
    mesh: TetMesh
    element_states: ElementStates | None = None
    time: float = 0.0
    step_index: int = 0
    forces: NodalForceSet | None = None
    bvh: Bvh | None = None
    last_events: list = field(default_factory=list)
    sliver_volume: float = 0.0
    contact_volume: float = 0.0
    substeps: int = 0
    dt_limit: float | None = None


def lump_masses(mesh: TetMesh, materials) -> np.ndarray:
    """Fill ``mesh.mass`` with a quarter of each incident element's mass.

    Returns the indices of orphaned nodes (no incident element).
    """
    rho = np.array([m.density for m in materials], dtype=float)[mesh.material_id]
    share = np.repeat(rho * mesh.rest_volume / 4.0, 4)
    mass = np.zeros(mesh.n_nodes)
    np.add.at(mass, mesh.elements.reshape(-1), share)
    mesh.mass = mass
    orphans = np.flatnonzero(mass <= 0.0)
    if len(orphans):
        log.debug("%d orphaned nodes carry no mass", len(orphans))
    return orphans


def stable_dt_estimate(mesh: TetMesh, materials, safety: float = DEFAULT_SAFETY) -> float:
    """Shortest material edge over dilational wave speed, times ``safety``."""
    if mesh.n_elements == 0:
        return np.inf
    X = mesh.material_pos
    ev = X[mesh.elements[:, TET_EDGES[:, 1]]] - X[mesh.elements[:, TET_EDGES[:, 0]]]
    shortest = np.sqrt(np.einsum("eki,eki->ek", ev, ev)).min(axis=1)
    c = np.array([m.wave_speed for m in materials])[mesh.material_id]
    return float(safety * np.min(shortest / c))


def substep_limit(mesh: TetMesh, materials, safety: float = DEFAULT_SAFETY) -> float:
    """Largest sub-step for which every element is stable, never above the edge estimate.

    Per element, Gershgorin on the lumped-mass system bounds the highest
    elastic frequency by 2 c sqrt(max|b_i| sum|b_j|) with b_i the shape
    function gradients, and the viscous rate the same way with the damping
    moduli.  Unlike the shortest edge, this sees flat slivers, whose
    stiffest mode scales with their smallest altitude.  Symplectic Euler
    with damping is stable for h (w + g) < 2; half of that is used.
    """
    if mesh.n_elements == 0:
        return np.inf
    b = np.linalg.norm(shape_gradients(mesh.basis), axis=2)
    geo = b.max(axis=1) * b.sum(axis=1)
    rho = np.array([m.density for m in materials])[mesh.material_id]
    stiff = np.array([m.lame_lambda + 2.0 * m.lame_mu for m in materials])[mesh.material_id]
    visc = np.array([m.damp_lambda + 2.0 * m.damp_mu for m in materials])[mesh.material_id]
    omega = 2.0 * np.sqrt(stiff / rho * geo)
    gamma = 4.0 * visc / rho * geo
    bound = float(np.min(1.0 / (omega + gamma)))
    return min(bound, stable_dt_estimate(mesh, materials, safety))


def kinetic_energy(mesh: TetMesh) -> float:
    return float(0.5 * np.sum(mesh.mass * np.einsum("ij,ij->i", mesh.velocity, mesh.velocity)))


def momentum(mesh: TetMesh) -> np.ndarray:
    return (mesh.mass[:, None] * mesh.velocity).sum(axis=0)


def pinned_velocity(mesh: TetMesh):
    pv = mesh.node_data.get("pin_velocity")
    if pv is None:
        return None, None
    mask = np.all(np.isfinite(pv), axis=1)
    return mask, pv


def step(state: SimState, config: IntegratorConfig, materials, contact: ContactConfig | None = None,
         fracture: FractureConfig | None = None, plasticity: bool = True) -> SimState:
    """Advance ``state`` by ``config.dt`` in place and return it.

    The step is divided into equal sub-steps no longer than
    :func:`substep_limit` of the current mesh; re-meshing can shrink or
    flatten elements, so the limit is refreshed whenever the topology
    changes.  ``last_events``
    collects the fracture events of every sub-step.
    """
    mesh = state.mesh
    if not np.any(mesh.mass):
        lump_masses(mesh, materials)
    remaining = config.dt
    events = []
    state.substeps = 0
    while remaining > 0.0:
        if state.dt_limit is None:
            state.dt_limit = substep_limit(state.mesh, materials, config.substep_safety)
        n = max(1, int(np.ceil(remaining / state.dt_limit * (1.0 - 1e-12))))
        h = remaining / n
        state.substeps += 1
        if state.substeps > config.max_substeps:
            raise NumericalError(state.step_index, -1, f"time step (over {config.max_substeps} sub-steps)")
        new = _substep(state, h, config.gravity, materials, contact, fracture, plasticity)
        events.extend(new)
        remaining = 0.0 if n == 1 else remaining - h
        if new:
            state.dt_limit = None
    state.last_events = events
    state.step_index += 1
    state.time = state.step_index * config.dt
    return state


def _check_finite(state: SimState, what):
    mesh = state.mesh
    bad = ~np.all(np.isfinite(mesh.world_pos) & np.isfinite(mesh.velocity), axis=1)
    if np.any(bad):
        raise NumericalError(state.step_index, int(np.flatnonzero(bad)[0]), what)


def _substep(state: SimState, dt, gravity, materials, contact, fracture, plasticity):
    mesh = state.mesh
    # a bad input state would otherwise smear NaN over every neighbour first
    _check_finite(state, "input state")
    states, forces = evaluate_elements(mesh, materials)
    total = forces.total.copy()

    state.contact_volume = 0.0
    if contact is not None:
        if state.bvh is None or state.bvh.n_elements != mesh.n_elements:
            state.bvh = build_bvh(mesh)
        pairs = refit_and_pairs(state.bvh, mesh)
        _, state.contact_volume, _ = penalty_forces(pairs, mesh, contact, out=total)

    m = mesh.mass
    live = m > 0.0
    acc = np.zeros_like(total)
    acc[live] = total[live] / m[live, None] + np.asarray(gravity)
    mesh.velocity += acc * dt
    if contact is not None:
        ground_implicit(mesh, contact, dt, mesh.velocity)
    mask, pv = pinned_velocity(mesh)
    if mask is not None and np.any(mask):
        mesh.velocity[mask] = pv[mask]
    mesh.world_pos += mesh.velocity * dt

    _check_finite(state, "position")

    if plasticity:
        update_plastic_batch(mesh, states, materials, dt)

    events = []
    if fracture is not None and fracture.enabled:
        events = fracture_pass(mesh, forces, states, materials, fracture)
        if events:
            lump_masses(mesh, materials)
            state.bvh = None
            state.sliver_volume += sum(e.sliver_volume for e in events)

    state.element_states = states
    state.forces = forces
    return events


def total_energy(state: SimState, materials) -> float:
    states, _ = evaluate_elements(state.mesh, materials)
    return kinetic_energy(state.mesh) + elastic_energy(state.mesh, states, materials)
