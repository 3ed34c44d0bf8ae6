"""Localized orthogonal decomposition on structured two-scale Q1 meshes."""
from .grid import BoundarySpec, DomainRect, TwoScaleMesh, build_mesh, build_patch
from .assembly import assemble_forms
from .correctors import compute_corrections
from .solve import solve_bvp, solve_lod
from .eigen import solve_linear_evp

__all__ = [
    "BoundarySpec", "DomainRect", "TwoScaleMesh", "build_mesh", "build_patch",
    "assemble_forms", "compute_corrections", "solve_bvp", "solve_lod", "solve_linear_evp",
]
