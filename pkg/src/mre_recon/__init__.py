"""Statistical FEM reconstruction of elasticity modulus fields from harmonic displacement data."""

__version__ = "0.1.0"

from .fem import MaterialParams, assemble_D, assemble_system
from .forward import NoiseModel, simulate, solve_forward
from .inverse import SolverConfig, build_gamma, fixed_point_solve
from .mesh import PhantomSpec, TriMesh, assign_phantom, build_mesh, element_adjacency
from .metrics import RegionMasks, cnr, rms_error

__all__ = [
    "MaterialParams", "NoiseModel", "PhantomSpec", "RegionMasks", "SolverConfig", "TriMesh",
    "assemble_D", "assemble_system", "assign_phantom", "build_gamma", "build_mesh", "cnr",
    "element_adjacency", "fixed_point_solve", "rms_error", "simulate", "solve_forward",
]
