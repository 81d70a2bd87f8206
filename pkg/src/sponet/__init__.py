"""Finite-element operator networks with exactly imposed Dirichlet data."""

from .fespace import FeFunction, FeSpace, build_space, interpolate
from .mesh import mesh_hierarchy, unit_square_mesh
from .spon import (DirichletBc, SponModel, bc_preset, build_model, load_model, rollout,
                   save_model, spon_forward, super_resolve)

__all__ = [
    "FeFunction", "FeSpace", "build_space", "interpolate", "mesh_hierarchy", "unit_square_mesh",
    "DirichletBc", "SponModel", "bc_preset", "build_model", "load_model", "rollout",
    "save_model", "spon_forward", "super_resolve",
]
__version__ = "0.1.0"
