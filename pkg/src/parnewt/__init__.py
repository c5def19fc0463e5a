"""Newton iteration, VMO_x oscillation and perturbation studies for quasilinear parabolic problems."""

from .calculus import SpaceTimeField, lp_norm, sup_norm, w1inf_norm, w21p_norm
from .coeff import CoefficientFn, CoefficientSet, CompactBox, EllipticityError, HypothesisError, check_ellipticity
from .linpar import LinearParabolicProblem, solve_linear_parabolic
from .mesh import Grid, build_grid, cylinder_at
from .mms import convergence_study, manufacture, refinement_grids
from .newton import NewtonError, NewtonTrace, convergence_order, frechet_apply, newton_solve, newton_step, residual
from .oscillation import OscillationReport, mean_osc_x, vmo_modulus
from .perturb import Perturbation, StabilityReport, linearized_sensitivity, perturbed_set, solution_map, stability_sweep

__version__ = "0.1.0"

__all__ = [
    "CoefficientFn", "CoefficientSet", "CompactBox", "EllipticityError", "Grid", "HypothesisError",
    "LinearParabolicProblem", "NewtonError", "NewtonTrace", "OscillationReport", "Perturbation", "SpaceTimeField",
    "StabilityReport", "build_grid", "check_ellipticity", "convergence_order", "convergence_study", "cylinder_at",
    "frechet_apply", "linearized_sensitivity", "lp_norm", "manufacture", "mean_osc_x", "newton_solve",
    "newton_step", "perturbed_set", "refinement_grids", "residual", "solution_map", "stability_sweep", "sup_norm",
    "vmo_modulus", "w1inf_norm", "w21p_norm",
]
