"""Numerical toolkit for impulsive control systems with commuting
impulse fields: straightening coordinates, trajectory integration for
discontinuous controls, costate propagation, and certification of
first- and second-order necessary optimality conditions."""

from .adjoint import (AdjointArc, audit_lifted_commutativity,
                      pull_back_adjoint, solve_original_adjoint,
                      solve_transformed_adjoint,
                      transformed_cost_gradient)
from .certify import (CertificateReport, CertifyOptions, ConditionRecord,
                      build_check_points, certify, check_hamiltonian_min,
                      check_nc_first, check_nc_second, check_transport,
                      check_variation_bv, default_directions)
from .errors import (AdmissibilityError, BindingError, DomainError,
                     FlowboxError, GridError, IntegrationError,
                     ParseError, TransformError, ValidationError)
from .propagate import (ApproxReport, RobustnessReport, Trajectory,
                        approximation_check, integrate_impulsive,
                        integrate_smooth, make_grid, robustness_gap,
                        trajectory_l1_distance)
from .signals import (ControlSignal, OrdinarySignal, VariationMap,
                      constant_ordinary, constant_variation,
                      load_control, load_ordinary, make_control,
                      make_variation, mollify, piecewise_constant,
                      piecewise_linear, radon_integral,
                      signal_l1_distance)
from .system import (CommutativityReport, SystemSpec, check_commutativity,
                     eval_field, lie_bracket, load_system, load_system_file)
from .transform import (FlowboxReport, TransformContext, straighten,
                        straighten_jacobian, straighten_many,
                        transformed_drift, transformed_drift_many,
                        transport_drift, transport_drift_many,
                        unstraighten, unstraighten_many, verify_flowbox)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
