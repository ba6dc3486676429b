"""Brittle fracture of tetrahedral finite-element meshes.

Set ``FRACSIM_NUMBA=0`` before import to run the pure-numpy kernels.
"""

from ._accel import USE_NUMBA
from .collision import ContactConfig, build_bvh, penalty_forces, refit_and_pairs, tet_intersection
from .continuum import MaterialParams, evaluate_elements
from .dynamics import IntegratorConfig, NumericalError, SimState, lump_masses, stable_dt_estimate, step
from .fracture import FractureConfig, FracturePlane, detect_fractures, fracture_pass, split_at_node
from .meshcore import (TetMesh, box_mesh, connected_components, load_tet_mesh, unit_cube_mesh,
                       validate_mesh, write_tet_mesh)
from .scene import PRESETS, RunStats, SceneSpec, parse_scene, run

__version__ = "0.1.0"

__all__ = [
    "USE_NUMBA", "ContactConfig", "build_bvh", "penalty_forces", "refit_and_pairs",
    "tet_intersection", "MaterialParams", "evaluate_elements", "IntegratorConfig",
    "NumericalError", "SimState", "lump_masses", "stable_dt_estimate", "step", "FractureConfig",
    "FracturePlane", "detect_fractures", "fracture_pass", "split_at_node", "TetMesh", "box_mesh",
    "connected_components", "load_tet_mesh", "unit_cube_mesh", "validate_mesh", "write_tet_mesh",
    "PRESETS", "RunStats", "SceneSpec", "parse_scene", "run",
]
