"""Two-scale simulation of reaction-diffusion-advection in evolving perforated media.

The package solves the transformed pore-scale problem on a fixed periodically
perforated domain whose microstructure evolution is prescribed through a
diffeomorphism with closed-form Jacobians, solves the matching two-scale limit
problem (one evolving cell problem per macro sample point), and measures the
distance between the two through an exact discrete unfolding operator.
"""

from perihom.cell import MacroSampling, TwoScaleSolution, push_forward, run_cell, run_macro
from perihom.config import RunConfig, parse_config
from perihom.fem import (DiscreteField, SparseOperator, apply_periodic_constraints,
                         solve_linear)
from perihom.geometry import (CellMesh, CellSpec, PerforatedMesh, SubdomainMask,
                              build_perforated_mesh, build_reference_cell,
                              interior_subdomain)
from perihom.micro import InitialSpec, KineticsSpec, MicroSolution, run_micro, step_micro
from perihom.transform import (CoefficientField, QSpec, TransformSpec, eval_coefficients,
                               eval_transform, validate_transform)
from perihom.unfolding import (UnfoldedField, average, gradient_identity_check,
                               two_scale_error, unfold)
from perihom.verify import convergence_sweep, energy_norms, shift_differences

__all__ = [
    "CellMesh", "CellSpec", "PerforatedMesh", "SubdomainMask",
    "build_reference_cell", "build_perforated_mesh", "interior_subdomain",
    "TransformSpec", "CoefficientField", "QSpec",
    "eval_transform", "eval_coefficients", "validate_transform",
    "SparseOperator", "DiscreteField", "apply_periodic_constraints", "solve_linear",
    "KineticsSpec", "InitialSpec", "MicroSolution", "step_micro", "run_micro",
    "MacroSampling", "TwoScaleSolution", "run_cell", "run_macro", "push_forward",
    "UnfoldedField", "unfold", "average", "gradient_identity_check", "two_scale_error",
    "RunConfig", "parse_config",
    "convergence_sweep", "energy_norms", "shift_differences",
]

__version__ = "0.1.0"
