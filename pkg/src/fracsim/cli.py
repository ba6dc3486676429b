"""Command-line entry point: ``fracsim {simulate,validate,mesh-info,estimate-dt}``."""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .dynamics import stable_dt_estimate
from .meshcore import MeshError, boundary_faces, connected_components, load_tet_mesh, validate_mesh
from .scene import SceneError, SimulationAborted, assemble, override, parse_scene, run


def _nonneg_int(text):
    val = int(text)
    if val < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return val


def _pos_float(text):
    val = float(text)
    if not val > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return val


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fracsim", description="Brittle fracture on tetrahedral meshes.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="run a scene and write frames and stats")
    sp.add_argument("scene")
    sp.add_argument("--out", metavar="DIR", help="output directory (overrides the scene)")
    sp.add_argument("--dt", type=_pos_float, metavar="S", help="time step in seconds")
    sp.add_argument("--max-steps", type=_nonneg_int, metavar="N", help="number of steps to run")

    sp = sub.add_parser("validate", help="parse a scene and check its meshes")
    sp.add_argument("scene")

    sp = sub.add_parser("mesh-info", help="print counts and volume of a node/ele pair")
    sp.add_argument("node")
    sp.add_argument("ele")

    sp = sub.add_parser("estimate-dt", help="print the stable time step estimate of a scene")
    sp.add_argument("scene")
    return ap


def _simulate(args) -> int:
    spec = override(parse_scene(args.scene), out=args.out, dt=args.dt, max_steps=args.max_steps)

    def progress(state, fs):
        logging.info("t=%.6g nodes=%d elements=%d fragments=%d", fs.time, fs.nodes, fs.elements,
                     fs.fragments)

    try:
        stats = run(spec, progress=progress)
    except SimulationAborted as exc:
        print(f"fracsim: {exc}", file=sys.stderr)
        return 2
    fs = stats.final
    print(f"steps {stats.steps}  frames {len(stats.frames)}  nodes {fs.nodes}  "
          f"elements {fs.elements}  fragments {fs.fragments}")
    print(f"output {spec.output.directory}")
    return 0


def _validate(args) -> int:
    spec = parse_scene(args.scene)
    mesh, materials = assemble(spec)
    report = validate_mesh(mesh)
    if not report.ok:
        for v in report.violations:
            print(f"fracsim: {v}", file=sys.stderr)
        return 1
    dt = stable_dt_estimate(mesh, materials, spec.integrator.substep_safety)
    print(f"ok: {len(spec.bodies)} bodies, {mesh.n_nodes} nodes, {mesh.n_elements} elements")
    if spec.integrator.dt > dt:
        print(f"warning: dt {spec.integrator.dt:g} exceeds the stable estimate {dt:g}", file=sys.stderr)
    return 0


def _mesh_info(args) -> int:
    mesh = load_tet_mesh(args.node, args.ele)
    report = validate_mesh(mesh)
    count, _ = connected_components(mesh)
    print(f"nodes {mesh.n_nodes}")
    print(f"elements {mesh.n_elements}")
    print(f"volume {float(np.sum(mesh.rest_volume)):.12g}")
    print(f"boundary_faces {len(boundary_faces(mesh))}")
    print(f"components {count}")
    print(f"valid {'yes' if report.ok else 'no'}")
    return 0


def _estimate_dt(args) -> int:
    spec = parse_scene(args.scene)
    mesh, materials = assemble(spec)
    print(f"{stable_dt_estimate(mesh, materials, spec.integrator.substep_safety):.6g}")
    return 0


COMMANDS = {"simulate": _simulate, "validate": _validate, "mesh-info": _mesh_info,
            "estimate-dt": _estimate_dt}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (SceneError, MeshError, OSError) as exc:
        print(f"fracsim: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
