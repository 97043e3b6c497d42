"""Numerical toolkit for path-dependent stochastic optimal control.

Path-space geometry and functional derivatives, Euler-Maruyama simulation
of controlled path-dependent dynamics, backward-equation solvers, exact
tree and regression value solvers with dynamic-programming checks, and
numerical classical/viscosity-solution verification.
"""

from .paths import (ClassGSpec, DiscretePath, HolderBallSpec, concat_brownian, d_infty,
                    h_norm_sq, holder_seminorm, horizontal_extend, in_holder_ball,
                    perturb, sample_ball_paths, sup_norm, vertical_bump, zero_path)
from .batch import PathBatch, per_path
from .calculus import (FDConfig, FunctionalHandle, class_g_time_derivative,
                       horizontal_derivative, ito_residual, second_vertical,
                       vertical_derivative)
from .sde import (CoefficientSet, ConstantControl, ControlSet, ExplorationControl,
                  FeedbackControl, ScheduleControl, TrajectoryBatch, moment_bound_report,
                  simulate_forward, validate_hypotheses)
from .bsde import (BsdeSolution, RegressionBasis, SemigroupConfig, ValueEstimate,
                   backward_semigroup, comparison_check, nested_bsde_value, solve_bsde,
                   stability_gap)
from .control import (HamiltonianInput, RegressionValueConfig, dpp_residual, generator_L,
                      hamiltonian, tree_control_value, value_lipschitz_report,
                      value_regression, value_tree)
from .viscosity import (classical_residual, mu_limit_sweep, penalty_test_functional,
                        quadratic_penalty, terminal_condition_check, viscosity_test)
from .lift import LiftedProblem, bsde_value_functional, lift_coefficients, shjb_value
from .problems import PROBLEM_IDS, ProblemSpec, analytic_value, make_problem
from .serialize import canonical_json

__version__ = "0.1.0"
