"""Optimal policies and convergence diagnostics for mean-field LQ(G) teams."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    Basis,
    Coupling,
    DynamicLQGSpec,
    IllPosedEstimatorError,
    InvalidSpecError,
    LawFamily,
    LinearPolicy,
    NoiseLaw,
    ObservationKind,
    ObservationModel,
    QuadraticCost,
    TeamSpec,
    ValidationReport,
    conditional_mean_gain,
    scalar_control_coupled,
    scalar_state_coupled,
    validate,
)
from .exact import CapabilityError, asymmetric_term, exact_cost  # noqa: E402
from .static import (  # noqa: E402
    ConsistencyError,
    ContractionError,
    FixedPointConfig,
    NonConvergenceError,
    SolveResult,
    StepRule,
    solve_control_coupled_limit,
    solve_control_coupled_N,
    solve_state_coupled_limit,
    solve_state_coupled_N,
)
from .montecarlo import (  # noqa: E402
    CostEstimate,
    EmpiricalMeasure,
    MCConfig,
    Scenario,
    empirical_measure,
    estimate_cost_N,
    pbp_deviation_test,
    sample_scenario,
    stationarity_residual,
    weak_convergence_stat,
)
from .diagnostics import (  # noqa: E402
    ConvergenceReport,
    check_exchangeability,
    cost_gap,
    policy_gap_sup,
    symmetrize,
    uniform_integrability_stat,
)
from .riccati import (  # noqa: E402
    RiccatiSolution,
    controllability_check,
    cost_gap_theorem64,
    exact_average_cost,
    finite_horizon_lqr,
    infinite_horizon_lqr,
)
