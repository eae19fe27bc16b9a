"""Desk-scale verification toolkit for elliptic Dirichlet problems
-div(A grad u) + <H, grad u> + c u = f with rough coefficients.

Structured Q1 Galerkin spaces on boxes, bilinear-form solvers (shifted
coercive, compact fixed point, direct), the invariant-density
divergence-free transformation, truncation ladders for zero-order
coefficients as rough as L1, and the interpolation exponent layer, all
with checkable estimate reports.
"""

from .mesh import (DiscreteFunction, FemSpace, GridSpec, MeshError,
                   QuadratureError, SparseOperator, assemble, assemble_load,
                   build_space, norm, norm_against)
from .fields import (FieldError, MatrixField, NormDivergenceError,
                     ScalarField, SplitConstant, TailTooHeavyError,
                     VectorField, boundedness_constant, constant_matrix,
                     constant_scalar, constant_vector, identity_matrix,
                     isotropic_matrix, lp_norm, lp_norm_info,
                     polynomial_scalar, radial_power, sobolev_factor,
                     split_constant, tabulated_scalar, tabulated_vector,
                     trig_gradient, trig_scalar, truncate)
from .solver import (DiscreteProblem, LadderResult, SolveReport, SolverError,
                     TruncationUnstableError, build_problem, direct_solve,
                     duality_probe, fredholm_solve, lax_milgram_solve,
                     rough_c_solve, tensor_sine_probes)
from .divfree import (DensityError, InvariantDensity, TransformationError,
                      TransformedProblem, compute_rho, divergence_residual,
                      equivalence_gap, make_drift, recover_original,
                      rho_weighted_drift, substitution_identity_gap,
                      transform)
from .verify import (CalibrationError, EstimateReport, ExponentError,
                     ExponentSet, MaxPrincipleResult, Verdict,
                     calibrate_effective_constants, check_energy,
                     check_interpolation, check_linf, exponent_set,
                     linf_ratio, max_principle_diagnostic)

__version__ = "0.1.0"
