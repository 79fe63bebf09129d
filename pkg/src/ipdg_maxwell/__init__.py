"""Interior penalty DG for time-harmonic Maxwell with impedance boundary conditions."""

__version__ = "0.1.0"

from .mesh import CartesianMesh, build_mesh, validate_mesh  # noqa: E402
from .space import DGField, ExactSolution, dof_count, plane_wave  # noqa: E402
from .assembly import ProblemParams, assemble_system, assemble_rhs, preset_params  # noqa: E402
from .solver import solve_direct, solve_gmres  # noqa: E402

__all__ = [
    "CartesianMesh", "build_mesh", "validate_mesh",
    "DGField", "ExactSolution", "dof_count", "plane_wave",
    "ProblemParams", "assemble_system", "assemble_rhs", "preset_params",
    "solve_direct", "solve_gmres",
]
