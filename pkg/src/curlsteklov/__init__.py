"""Steklov spectrum, Calderon operator and solution operators for the
penalized curl-curl problem, discretized with continuous P1 vector elements."""

from .assembly import (
    AssembledForms,
    FemSpace,
    ProblemParams,
    TraceField,
    assemble_forms,
    build_constraint_basis,
    form_matrix,
    form_product,
    surface_rotated_gradient,
    tangential_trace,
)
from .calderon import (
    DualTraceData,
    TraceExpansion,
    calderon_apply,
    direct_solve,
    expand_trace,
    ntd_matrix,
    solve_dual,
    solve_neumann_spectral,
    solve_rotated_dirichlet,
    solve_tangential_dirichlet,
    trace_norm,
)
from .deflation import (
    DeflationSpace,
    build_deflated_space,
    deflated_steklov_spectrum,
    dirichlet_modes_below,
    verify_gap,
)
from .io import load_gmsh, write_gmsh, write_vtk
from .mesh import (
    BoundarySkeleton,
    Mesh,
    extract_boundary,
    generate_ball_mesh,
    generate_cube_mesh,
    mesh_stats,
)
from .spectral import (
    AuxSpectra,
    SteklovBasis,
    aux_spectra,
    condense_to_boundary,
    dirichlet_spectrum,
    magnetic_spectrum,
    neumann_laplacian_spectrum,
    rayleigh_quotient,
    resolvent_condition_sweep,
    select_eta,
    steklov_spectrum,
    zero_in_sigma_check,
)

__version__ = "0.1.0"

__all__ = [
    "AssembledForms",
    "AuxSpectra",
    "BoundarySkeleton",
    "DeflationSpace",
    "DualTraceData",
    "FemSpace",
    "Mesh",
    "ProblemParams",
    "SteklovBasis",
    "TraceExpansion",
    "TraceField",
    "assemble_forms",
    "aux_spectra",
    "build_constraint_basis",
    "build_deflated_space",
    "calderon_apply",
    "condense_to_boundary",
    "deflated_steklov_spectrum",
    "direct_solve",
    "dirichlet_modes_below",
    "dirichlet_spectrum",
    "expand_trace",
    "extract_boundary",
    "form_matrix",
    "form_product",
    "generate_ball_mesh",
    "generate_cube_mesh",
    "load_gmsh",
    "magnetic_spectrum",
    "mesh_stats",
    "neumann_laplacian_spectrum",
    "ntd_matrix",
    "rayleigh_quotient",
    "resolvent_condition_sweep",
    "select_eta",
    "solve_dual",
    "solve_neumann_spectral",
    "solve_rotated_dirichlet",
    "solve_tangential_dirichlet",
    "steklov_spectrum",
    "surface_rotated_gradient",
    "tangential_trace",
    "trace_norm",
    "verify_gap",
    "write_gmsh",
    "write_vtk",
    "zero_in_sigma_check",
]
