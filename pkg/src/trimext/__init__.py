"""Discrete extension operators for trimmed tensor-product spline spaces.

Public entry points are re-exported here; see the submodules for details.
"""
__version__ = "0.1.0"

from .extension import Extension, ExtensionPartition, build_extension, build_Sh, partition
from .geometry import BoundaryCurve, SurfaceMap, TrimmedDomain, bean_domain, classify_and_clip, cone_map
from .interpolation import DgSpace, WeightScheme, assemble_Ih, interpolate, jump_norm, make_weights
from .linalg import condition_number, pcg_solve, triple_product
from .mesh import ActiveMesh, BackgroundMesh, SplineSpace, active_extract, element_basis, eval_basis
from .nitsche import NitscheSystem, assemble, error_norms, solve_reduced

__all__ = [
    "ActiveMesh", "BackgroundMesh", "BoundaryCurve", "DgSpace", "Extension", "ExtensionPartition",
    "NitscheSystem", "SplineSpace", "SurfaceMap", "TrimmedDomain", "WeightScheme", "active_extract",
    "assemble", "assemble_Ih", "bean_domain", "build_Sh", "build_extension", "classify_and_clip",
    "condition_number", "cone_map", "element_basis", "error_norms", "eval_basis", "interpolate",
    "jump_norm", "make_weights", "partition", "pcg_solve", "solve_reduced", "triple_product",
]
