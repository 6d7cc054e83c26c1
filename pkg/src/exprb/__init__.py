"""Two-stage fourth-order exponential Rosenbrock integrators and a benchmark harness."""

__version__ = "0.1.0"

from .integrators import (ExprbStepper, GaussStepper, NewtonConfig, SchemeId, StepFailure,
                          StepOutput, make_stepper, tableau_of)
from .model import OdeProblem, linearize
from .phi import (DenseBackend, KrylovBackend, KrylovConfig, PhiCombination, phi_combination_dense,
                  phi_combination_krylov, phi_dense, phi_scalar)
from .problems import adr_2d, get_problem, semilinear_parabolic_1d, two_body, van_der_pol
from .stepcontrol import (ControllerConfig, IntegrationError, IntegrationResult, error_max_norm,
                          integrate_adaptive, integrate_fixed)
