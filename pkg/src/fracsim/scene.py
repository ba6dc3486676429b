"""Scene files, the run loop, and frame/statistics output.

A scene is a line-oriented file of ``[section]`` headers followed by
``key = value`` lines; ``#`` starts a comment and vectors are
comma-separated.  Sections::

    [material NAME]   preset, density, lame_mu, lame_lambda, damp_mu,
                      damp_lambda, toughness, plastic_yield, plastic_creep,
                      plastic_max
    [body]            node, ele, material, translate, rotate (degrees about
                      x then y then z), velocity
    [fixed]           box_min, box_max, velocity -- pins nodes of the most
                      recent body whose material position lies in the box
    [contact]         penalty_k, ground, ground_height, ground_k, ground_damping
    [integrator]      dt, gravity, max_steps, duration, substep_safety,
                      max_substeps
    [fracture]        enabled, max_fractures_per_step, crack_depth_limit, snap
    [output]          directory, frame_interval, stats, wallclock

Relative paths are resolved against the scene file's directory.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .collision import ContactConfig
from .continuum import MaterialParams, elastic_energy, evaluate_elements
from .dynamics import IntegratorConfig, NumericalError, SimState, kinetic_energy, lump_masses, step
from .fracture import FractureConfig
from .meshcore import TetMesh, connected_components, load_tet_mesh, write_obj_frame

log = logging.getLogger(__name__)

STATS_HEADER = ["time", "nodes", "elements", "fragments", "ke", "ee", "fractures", "ms"]

# Toughness values are in the units of the separation tensor (newtons) and
# were calibrated by us on the bundled bar scenes; none come from measurements.
PRESETS = {
    "test": MaterialParams(density=1000.0, lame_mu=1e5, lame_lambda=1e5, toughness=35.0),
    "ceramic": MaterialParams(density=2400.0, lame_mu=4e6, lame_lambda=2.6e6, damp_mu=40.0,
                              damp_lambda=40.0, toughness=150.0),
    "glass": MaterialParams(density=2500.0, lame_mu=6e6, lame_lambda=4e6, damp_mu=20.0,
                            damp_lambda=20.0, toughness=60.0),
    "adobe": MaterialParams(density=1800.0, lame_mu=6e5, lame_lambda=4e5, damp_mu=60.0,
                            damp_lambda=60.0, toughness=40.0, plastic_yield=0.02,
                            plastic_creep=20.0, plastic_max=0.05),
}


class SceneError(ValueError):
    def __init__(self, path, line, key, msg):
        where = f"{path}:{line}" if line else str(path)
        super().__init__(f"{where}: [{key}] {msg}" if key else f"{where}: {msg}")
        self.path = str(path)
        self.line = line
        self.key = key


class SimulationAborted(RuntimeError):
    def __init__(self, step, cause):
        super().__init__(f"simulation aborted at step {step}: {cause}")
        self.step = step
        self.cause = cause


Vec = tuple


@dataclass(frozen=True)
class FixedRegion:
    box_min: Vec
    box_max: Vec
    velocity: Vec = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class BodySpec:
    node: str
    ele: str
    material: str
    translate: Vec = (0.0, 0.0, 0.0)
    rotate: Vec = (0.0, 0.0, 0.0)
    velocity: Vec = (0.0, 0.0, 0.0)
    fixed: tuple = ()


@dataclass(frozen=True)
class OutputSpec:
    directory: str
    frame_interval: float
    stats: str
    wallclock: bool = False


@dataclass
class SceneSpec:
    bodies: list
    materials: dict
    contact: ContactConfig
    integrator: IntegratorConfig
    fracture: FractureConfig
    output: OutputSpec
    source: str = ""

    def material_table(self):
        names = sorted(self.materials)
        return names, [self.materials[n] for n in names]

    def __eq__(self, other):
        if not isinstance(other, SceneSpec):
            return NotImplemented
        keys = ("bodies", "materials", "contact", "integrator", "fracture", "output")
        return all(getattr(self, k) == getattr(other, k) for k in keys)


# -- parsing ------------------------------------------------------------------------------------


_MATERIAL_KEYS = {f.name for f in fields(MaterialParams)} | {"preset"}
_SECTION_KEYS = {
    "body": {"node", "ele", "material", "translate", "rotate", "velocity"},
    "fixed": {"box_min", "box_max", "velocity"},
    "contact": {f.name for f in fields(ContactConfig)},
    "integrator": {"dt", "gravity", "max_steps", "duration", "substep_safety", "max_substeps"},
    "fracture": {"enabled", "max_fractures_per_step", "crack_depth_limit", "snap"},
    "output": {"directory", "frame_interval", "stats", "wallclock"},
}
_SINGLETONS = ("contact", "integrator", "fracture", "output")


def _vec(text):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise ValueError(f"expected three comma-separated numbers, got {text!r}")
    return tuple(float(p) for p in parts)


def _bool(text):
    low = text.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _int(text):
    val = float(text)
    if val != int(val):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(val)


_CONVERT = {
    "translate": _vec, "rotate": _vec, "velocity": _vec, "box_min": _vec, "box_max": _vec,
    "gravity": _vec, "ground": _bool, "enabled": _bool, "wallclock": _bool,
    "max_steps": _int, "max_substeps": _int, "max_fractures_per_step": _int, "crack_depth_limit": _int,
    "node": str, "ele": str, "material": str, "directory": str, "stats": str, "preset": str,
}


def _read_sections(path):
    sections = []
    current = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("["):
                if not line.endswith("]"):
                    raise SceneError(path, lineno, None, f"malformed section header {line!r}")
                head = line[1:-1].split()
                if not head:
                    raise SceneError(path, lineno, None, "empty section header")
                kind = head[0].lower()
                if kind == "material":
                    if len(head) != 2:
                        raise SceneError(path, lineno, None, "material section needs exactly one name")
                elif kind in _SECTION_KEYS:
                    if len(head) != 1:
                        raise SceneError(path, lineno, None, f"[{kind}] takes no name")
                else:
                    raise SceneError(path, lineno, None, f"unknown section [{kind}]")
                current = {"kind": kind, "name": head[1] if len(head) > 1 else None,
                           "line": lineno, "items": {}}
                sections.append(current)
                continue
            if current is None:
                raise SceneError(path, lineno, None, "key outside of any section")
            if "=" not in line:
                raise SceneError(path, lineno, None, f"expected 'key = value', got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            allowed = _MATERIAL_KEYS if current["kind"] == "material" else _SECTION_KEYS[current["kind"]]
            if key not in allowed:
                raise SceneError(path, lineno, key, f"unknown key in [{current['kind']}]")
            if key in current["items"]:
                raise SceneError(path, lineno, key, "duplicate key")
            try:
                current["items"][key] = (_CONVERT.get(key, float)(value), lineno)
            except ValueError as exc:
                raise SceneError(path, lineno, key, str(exc)) from None
    return sections


def _plain(items):
    return {k: v for k, (v, _) in items.items()}


def _build(path, lineno, key, fn, **kw):
    try:
        return fn(**kw)
    except (ValueError, TypeError) as exc:
        raise SceneError(path, lineno, key, str(exc)) from None


def parse_scene(path) -> SceneSpec:
    path = Path(path)
    base = path.resolve().parent
    sections = _read_sections(path)
    materials, bodies, single = {}, [], {}
    body_lines = []
    for sec in sections:
        kind, items = sec["kind"], sec["items"]
        if kind == "material":
            name = sec["name"]
            if name in materials:
                raise SceneError(path, sec["line"], None, f"material {name!r} declared twice")
            kw = _plain(items)
            preset = kw.pop("preset", None)
            if preset is not None:
                if preset not in PRESETS:
                    raise SceneError(path, items["preset"][1], "preset", f"unknown preset {preset!r}")
                merged = {f.name: getattr(PRESETS[preset], f.name) for f in fields(MaterialParams)}
                merged.update(kw)
                kw = merged
            missing = {"density", "lame_mu", "lame_lambda"} - set(kw)
            if missing:
                raise SceneError(path, sec["line"], None,
                                 f"material {name!r} missing {', '.join(sorted(missing))}")
            materials[name] = _build(path, sec["line"], None, MaterialParams, **kw)
        elif kind == "body":
            kw = _plain(items)
            for req in ("node", "ele", "material"):
                if req not in kw:
                    raise SceneError(path, sec["line"], req, "required key missing in [body]")
            kw["node"] = str((base / kw["node"]).resolve())
            kw["ele"] = str((base / kw["ele"]).resolve())
            bodies.append(kw)
            body_lines.append((sec["line"], items["material"][1]))
        elif kind == "fixed":
            if not bodies:
                raise SceneError(path, sec["line"], None, "[fixed] must follow a [body]")
            kw = _plain(items)
            for req in ("box_min", "box_max"):
                if req not in kw:
                    raise SceneError(path, sec["line"], req, "required key missing in [fixed]")
            region = _build(path, sec["line"], None, FixedRegion, **kw)
            if any(a > b for a, b in zip(region.box_min, region.box_max)):
                raise SceneError(path, sec["line"], "box_min", "box_min exceeds box_max")
            bodies[-1].setdefault("fixed", [])
            bodies[-1]["fixed"].append(region)
        else:
            if kind in single:
                raise SceneError(path, sec["line"], None, f"[{kind}] given twice")
            single[kind] = sec
    if not bodies:
        raise SceneError(path, 0, None, "scene declares no [body]")
    for i, (b, (bline, mline)) in enumerate(zip(bodies, body_lines)):
        if b["material"] not in materials:
            raise SceneError(path, mline, "material",
                             f"body {i} references undeclared material {b['material']!r}")
        b["fixed"] = tuple(b.get("fixed", ()))
    body_specs = [BodySpec(**b) for b in bodies]

    def sec_kw(kind):
        sec = single.get(kind)
        return (_plain(sec["items"]), sec["line"]) if sec else ({}, 0)

    kw, line = sec_kw("contact")
    contact = _build(path, line, None, ContactConfig, **kw)
    kw, line = sec_kw("integrator")
    duration = kw.pop("duration", None)
    integ = _build(path, line, None, IntegratorConfig, **kw)
    if duration is not None:
        if not duration > 0:
            raise SceneError(path, line, "duration", "duration must be positive")
        integ.max_steps = max(1, int(math.ceil(duration / integ.dt - 1e-9)))
    kw, line = sec_kw("fracture")
    frac = _build(path, line, None, FractureConfig, **kw)
    kw, line = sec_kw("output")
    out = {"directory": "out", "frame_interval": integ.dt, "stats": "stats.csv"}
    out.update(kw)
    out["directory"] = str((base / out["directory"]).resolve())
    output = _build(path, line, None, OutputSpec, **out)
    if output.frame_interval < integ.dt * (1 - 1e-12):
        raise SceneError(path, line, "frame_interval", "frame_interval must be at least dt")
    return SceneSpec(body_specs, materials, contact, integ, frac, output, str(path))


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt(float(x)) for x in v)
    return str(v)


def format_scene(spec: SceneSpec) -> str:
    """Scene text with every default spelled out; parses back to ``spec``."""
    buf = io.StringIO()
    for name in sorted(spec.materials):
        buf.write(f"[material {name}]\n")
        m = spec.materials[name]
        for f in fields(MaterialParams):
            buf.write(f"{f.name} = {_fmt(float(getattr(m, f.name)))}\n")
        buf.write("\n")
    for b in spec.bodies:
        buf.write("[body]\n")
        for key in ("node", "ele", "material", "translate", "rotate", "velocity"):
            buf.write(f"{key} = {_fmt(getattr(b, key))}\n")
        buf.write("\n")
        for r in b.fixed:
            buf.write("[fixed]\n")
            for key in ("box_min", "box_max", "velocity"):
                buf.write(f"{key} = {_fmt(getattr(r, key))}\n")
            buf.write("\n")
    buf.write("[contact]\n")
    for f in fields(ContactConfig):
        buf.write(f"{f.name} = {_fmt(getattr(spec.contact, f.name))}\n")
    buf.write("\n[integrator]\n")
    ic = spec.integrator
    buf.write(f"dt = {_fmt(float(ic.dt))}\n")
    buf.write(f"gravity = {_fmt(ic.gravity)}\n")
    buf.write(f"max_steps = {int(ic.max_steps)}\n")
    buf.write(f"substep_safety = {_fmt(float(ic.substep_safety))}\n")
    buf.write(f"max_substeps = {int(ic.max_substeps)}\n")
    buf.write("\n[fracture]\n")
    fc = spec.fracture
    buf.write(f"enabled = {_fmt(fc.enabled)}\n")
    buf.write(f"max_fractures_per_step = {fc.max_fractures_per_step}\n")
    buf.write(f"crack_depth_limit = {fc.crack_depth_limit}\n")
    buf.write(f"snap = {_fmt(float(fc.snap))}\n")
    buf.write("\n[output]\n")
    o = spec.output
    buf.write(f"directory = {o.directory}\n")
    buf.write(f"frame_interval = {_fmt(float(o.frame_interval))}\n")
    buf.write(f"stats = {o.stats}\n")
    buf.write(f"wallclock = {_fmt(o.wallclock)}\n")
    return buf.getvalue()


def write_resolved_scene(spec: SceneSpec, path):
    Path(path).write_text(format_scene(spec), encoding="utf-8")


def override(spec: SceneSpec, out=None, dt=None, max_steps=None) -> SceneSpec:
    """Copy of ``spec`` with command-line overrides applied."""
    integ = replace(spec.integrator)
    if dt is not None:
        integ.dt = float(dt)
        integ.__post_init__()
    if max_steps is not None:
        integ.max_steps = int(max_steps)
    output = spec.output
    if out is not None:
        output = replace(output, directory=str(Path(out).resolve()))
    if dt is not None and output.frame_interval < integ.dt:
        output = replace(output, frame_interval=integ.dt)
    return SceneSpec(list(spec.bodies), dict(spec.materials), spec.contact, integ,
                     spec.fracture, output, spec.source)


# -- assembling and running ---------------------------------------------------------------------


def _rotation(deg):
    ax, ay, az = np.radians(deg)
    cx, sx, cy, sy, cz, sz = np.cos(ax), np.sin(ax), np.cos(ay), np.sin(ay), np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def assemble(spec: SceneSpec) -> tuple:
    """Merge all bodies into one mesh; returns (mesh, materials, body_of_node)."""
    names, materials = spec.material_table()
    X, W, V, E, mid, pins, owner = [], [], [], [], [], [], []
    offset = 0
    for i, b in enumerate(spec.bodies):
        m = load_tet_mesh(b.node, b.ele)
        R = _rotation(b.rotate)
        X.append(m.material_pos)
        W.append(m.material_pos @ R.T + np.asarray(b.translate))
        vel = np.tile(np.asarray(b.velocity, dtype=float), (m.n_nodes, 1))
        pin = np.full((m.n_nodes, 3), np.nan)
        for r in b.fixed:
            inside = np.all((m.material_pos >= np.asarray(r.box_min)) &
                            (m.material_pos <= np.asarray(r.box_max)), axis=1)
            pin[inside] = r.velocity
            vel[inside] = r.velocity
        V.append(vel)
        pins.append(pin)
        E.append(m.elements + offset)
        mid.append(np.full(m.n_elements, names.index(b.material), dtype=np.int64))
        owner.append(np.full(m.n_nodes, i, dtype=np.int64))
        offset += m.n_nodes
    mesh = TetMesh.from_arrays(np.vstack(X), np.vstack(E), np.concatenate(mid),
                               world_pos=np.vstack(W), velocity=np.vstack(V))
    mesh.node_data["pin_velocity"] = np.vstack(pins)
    mesh.node_data["body"] = np.concatenate(owner).astype(float)
    lump_masses(mesh, materials)
    return mesh, materials


@dataclass
class FrameStats:
    time: float
    nodes: int
    elements: int
    fragments: int
    ke: float
    ee: float
    fractures: int
    ms: float

    def row(self, wallclock: bool):
        return [repr(float(self.time)), str(self.nodes), str(self.elements), str(self.fragments),
                repr(float(self.ke)), repr(float(self.ee)), str(self.fractures),
                f"{self.ms:.3f}" if wallclock else "0"]


@dataclass
class FractureRecord:
    step: int
    node: int
    material_pos: tuple
    world_pos: tuple
    propagated: bool


@dataclass
class RunStats:
    frames: list = field(default_factory=list)
    fractures: list = field(default_factory=list)
    steps: int = 0
    sliver_volume: float = 0.0
    initial_volume: float = 0.0
    aborted: SimulationAborted | None = None

    @property
    def final(self) -> FrameStats:
        return self.frames[-1]


def _frame_stats(state: SimState, materials, fractures, ms) -> FrameStats:
    mesh = state.mesh
    states, _ = evaluate_elements(mesh, materials)
    count, _ = connected_components(mesh)
    return FrameStats(state.time, mesh.n_nodes, mesh.n_elements, count, kinetic_energy(mesh),
                      elastic_energy(mesh, states, materials), fractures, ms)


def run(spec: SceneSpec, steps: int | None = None, write: bool = True, progress=None,
        state_hook=None) -> RunStats:
    """Run the scene; frames and stats go to ``spec.output.directory``.

    ``steps`` overrides the integrator's step count (0 writes the initial
    frame only).  Raises SimulationAborted on a numerical failure after
    flushing the stats gathered so far.
    """
    mesh, materials = assemble(spec)
    state = SimState(mesh)
    total_steps = spec.integrator.max_steps if steps is None else int(steps)
    dt = spec.integrator.dt
    every = max(1, int(round(spec.output.frame_interval / dt)))
    outdir = Path(spec.output.directory)
    stats = RunStats(initial_volume=float(mesh.rest_volume.sum()))
    if write:
        outdir.mkdir(parents=True, exist_ok=True)
        write_resolved_scene(spec, outdir / "resolved.scene")
    contact = spec.contact
    frac = spec.fracture

    def emit(n_frac, ms):
        fs = _frame_stats(state, materials, n_frac, ms)
        if write:
            write_obj_frame(state.mesh, outdir / f"frame_{len(stats.frames):06d}.obj")
        stats.frames.append(fs)
        if state_hook is not None:
            state_hook(state, fs)

    t0 = time.perf_counter()
    emit(0, 0.0)
    pending = 0
    try:
        for k in range(total_steps):
            step(state, spec.integrator, materials, contact=contact, fracture=frac)
            for ev in state.last_events:
                n = ev.split_node
                stats.fractures.append(FractureRecord(
                    state.step_index, n, tuple(state.mesh.material_pos[n].tolist()),
                    tuple(state.mesh.world_pos[n].tolist()), propagated=ev.depth > 0))
            pending += len(state.last_events)
            if (k + 1) % every == 0 or k + 1 == total_steps:
                t1 = time.perf_counter()
                emit(pending, (t1 - t0) * 1e3)
                t0 = t1
                pending = 0
                if progress is not None:
                    progress(state, stats.frames[-1])
    except NumericalError as exc:
        stats.aborted = SimulationAborted(state.step_index, exc)
    finally:
        stats.steps = state.step_index
        stats.sliver_volume = state.sliver_volume
        if write:
            write_stats_csv(stats, outdir / spec.output.stats, spec.output.wallclock)
    if stats.aborted is not None:
        raise stats.aborted
    return stats


def write_stats_csv(stats: RunStats, path, wallclock=False):
    with open(path, "w", encoding="ascii", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STATS_HEADER)
        for fs in stats.frames:
            w.writerow(fs.row(wallclock))


def read_stats_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != STATS_HEADER:
        raise ValueError(f"unexpected stats header {rows[0]}")
    return [dict(zip(STATS_HEADER, r)) for r in rows[1:]]
