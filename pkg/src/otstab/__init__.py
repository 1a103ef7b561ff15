"""Worst-case stability evaluation of classifiers under joint
transport/reweighting perturbations of their data distribution."""

from .core import (BUDGET_TOL, CostSpec, Dataset, DimensionMismatchError,
                   EvalConfig, InvalidConfigError, InvalidCostError,
                   LabelDomainError, LossKind, NonConvergenceError, ParseError,
                   PhiDivergence, SchemaError, SensitiveDistribution,
                   SolverOptions, StabilityError, StabilityReport, Status,
                   ThresholdUnreachableError, UnsupportedLossError,
                   ValidatedConfig, validate_config)
from .models import (Activation, LinearClassifier, LogisticModel, LossModel,
                     MlpModel, PiecewiseLinearModel, as_zero_one,
                     margin_distance)
from .dtransform import (DTransformResult, dtransform, dtransform_nonlinear,
                         dtransform_piecewise, dtransform_zero_one,
                         transport_cost)
from .dual_solvers import (DualSolution, chi2_alpha_star, chi2_dual_objective,
                           kl_dual_objective, solve, solve_chi2, solve_kl,
                           solve_nonlinear, weights_from_values)
from .conic_export import (Affine, ConicProgram, ExpConeRow, FeasibilityReport,
                           LinearRow, QuadRow, Variable, assemble_chi2_program,
                           assemble_kl_program, check_feasibility,
                           chi2_certificate, kl_certificate, load_program,
                           save_program)
from .analysis import (EvaluationResult, FeatureStability,
                       FeatureStabilityReport, build_report,
                       decompose_excess_risk, evaluate,
                       extract_sensitive_distribution, feature_stability,
                       primal_cost)
from .dataio import (RunManifest, emit_plot_data, fit_toy_logistic,
                     generate_toy, load_dataset, load_model, load_qstar,
                     load_report, save_dataset, save_model, save_qstar,
                     save_report)

__version__ = "0.1.0"
