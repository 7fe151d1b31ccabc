"""Spectral element solver for two-sided fractional diffusion with H-matrix
compression, H-LU preconditioning and FFT matvecs on structured meshes."""

from .assembly import assemble_mass, assemble_rhs, assemble_system, reconstruct_and_error
from .basis import ElementSpace
from .estimator import FractionalSEMSolver
from .hlu import HLUError, hlu_factorize, hlu_solve, truncate
from .hmatrix import HMatrix, build_hmatrix
from .krylov import SolveConfig, SolveReport, bicgstab, condition_diagnostics, dense_direct_solve
from .mesh import Mesh, MeshError, make_geometric_mesh, make_graded_mesh, make_mesh, make_uniform_mesh
from .problem import FractionalProblem, PowerForcing, example_power_solution, example_two_sided
from .toeplitz import ToeplitzOperator, build_toeplitz_operator

__version__ = "0.1.0"

__all__ = [
    "ElementSpace", "FractionalProblem", "FractionalSEMSolver", "HLUError", "HMatrix", "Mesh",
    "MeshError", "PowerForcing", "SolveConfig", "SolveReport", "ToeplitzOperator",
    "assemble_mass", "assemble_rhs", "assemble_system", "bicgstab", "build_hmatrix",
    "build_toeplitz_operator", "condition_diagnostics", "dense_direct_solve",
    "example_power_solution", "example_two_sided", "hlu_factorize", "hlu_solve",
    "make_geometric_mesh", "make_graded_mesh", "make_mesh", "make_uniform_mesh",
    "reconstruct_and_error", "truncate",
]
