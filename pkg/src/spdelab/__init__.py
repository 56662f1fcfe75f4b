"""spdelab: a desk-scale laboratory for small-noise large deviations of
semilinear parabolic SPDEs with multiplicative noise.

Pipeline: discretize the Dirichlet elliptic operator and its exact spectral
semigroup, time-step the noisy / tilted / noise-free mild equations with an
exponential-Euler scheme, minimize the action functional over controls, and
verify the exponential scaling of rare-event probabilities by (importance
sampled) Monte Carlo.
"""

from .action import (
    ActionValue,
    MinimizeOptions,
    TargetSpec,
    action_of,
    lsc_probe,
    minimize_action,
    penalized_objective,
)
from .coefficients import (
    CoefficientSet,
    SampleSpec,
    ValidationReport,
    evaluate,
    make_custom,
    make_preset,
    truncate_coefficients,
    validate_assumptions,
)
from .config import RunConfig, manifest
from .errors import (
    ActionMinimizationError,
    AssumptionViolationError,
    BlowUpError,
    ConfigError,
    ConvergenceError,
    DegenerateEstimateError,
    DomainError,
    InsufficientDataError,
    InvalidGridError,
    SingularKernelError,
    SpdelabError,
    UnknownPresetError,
)
from .evolvers import (
    EnsembleResult,
    SolveDiagnostics,
    SpaceTimeField,
    decompose_terms,
    integrate_controlled,
    integrate_spde,
    simulate_ensemble,
    skeleton_trajectory,
    solve_skeleton,
)
from .grid_kernel import (
    EllipticCoefficients,
    Grid,
    KernelEstimateReport,
    KernelOperator,
    assemble_operator,
    build_grid,
    default_estimate_times,
    fit_kernel_estimates,
    kernel_apply,
    kernel_grad_apply,
)
from .ldp_lab import (
    ConvergenceTable,
    ProbabilityEstimate,
    RateFit,
    TightnessTable,
    convergence_experiment,
    estimate_event,
    event_indicators,
    fit_rate,
    tightness_probe,
)
from .stochastics import (
    Control,
    NoisePath,
    control_from_csv,
    control_l2_norm,
    control_to_csv,
    girsanov_log_weight,
    make_time_grid,
    sample_brownian,
    shift_path,
)

__version__ = "0.1.0"
