"""Wasserstein barycenters of discrete measures by structure-exploiting
interior-point methods, with an entropic (IBP) baseline."""
from .baseline_ibp import ibp_free_support, ibp_solve
from .ipm import SolveOptions, primal_barrier_solve, solve_fixed_support
from .lp_model import BarycenterSolution, LpGeometry, build_geometry
from .maaipm import Schedule, solve_free_support, update_support
from .measures import (BarycenterProblem, DiscreteMeasure, GridImage, SupportSet,
                       distance_matrix, gaussian_measures, image_to_measure,
                       kmeans_support, normalize_weights)
from .normal_kernel import factorize, select_kernel, solve_normal

__version__ = "0.1.0"

__all__ = [
    "BarycenterProblem", "BarycenterSolution", "DiscreteMeasure", "GridImage",
    "LpGeometry", "Schedule", "SolveOptions", "SupportSet", "build_geometry",
    "distance_matrix", "factorize", "gaussian_measures", "ibp_free_support",
    "ibp_solve", "image_to_measure", "kmeans_support", "normalize_weights",
    "primal_barrier_solve", "select_kernel", "solve_fixed_support",
    "solve_free_support", "solve_normal", "update_support",
]
