"""Gaussian processes on oriented cellular complexes."""

from .complex import (
    CellularComplex,
    ChainVec,
    CochainVec,
    ComplexBuilder,
    Relabeling,
    build_complex,
    cubical_grid,
    load_complex,
    path,
    relabel,
    save_complex,
    triangulated_grid,
)
from .errors import CCGPError
from .fields import GridField, derive_vertex_triangle, kl_edge_field, make_dataset, project_field
from .gp import GPFit, Observation, Posterior, evaluate, fit, nll, posterior
from .kernels import MaternHyper, RDHyper, matern_kernel, rd_kernel, spectral_filter_kernel
from .operators import (
    SpectralBasis,
    WeightSet,
    coboundary,
    coboundary_adjoint,
    dirac_matrix,
    eigendecompose,
    hodge_laplacian,
    operator_basis,
    super_laplacian,
)

__version__ = "0.1.0"

__all__ = [
    "CCGPError",
    "CellularComplex",
    "ChainVec",
    "CochainVec",
    "ComplexBuilder",
    "GPFit",
    "GridField",
    "MaternHyper",
    "Observation",
    "Posterior",
    "RDHyper",
    "Relabeling",
    "SpectralBasis",
    "WeightSet",
    "build_complex",
    "coboundary",
    "coboundary_adjoint",
    "cubical_grid",
    "derive_vertex_triangle",
    "dirac_matrix",
    "eigendecompose",
    "evaluate",
    "fit",
    "hodge_laplacian",
    "kl_edge_field",
    "load_complex",
    "make_dataset",
    "matern_kernel",
    "nll",
    "operator_basis",
    "path",
    "posterior",
    "project_field",
    "rd_kernel",
    "relabel",
    "save_complex",
    "spectral_filter_kernel",
    "super_laplacian",
    "triangulated_grid",
]
