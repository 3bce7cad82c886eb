"""Power-state Markov modeling, Monte Carlo validation and power-policy simulation for edge nodes."""
from ._validation import (
    DimensionMismatchError,
    EdgePowerError,
    InfeasiblePerturbationError,
    InvalidMatrixError,
    NonUniqueStationaryError,
    UnknownStateError,
)
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .fleet import CouplingRule, FleetReport, FleetState, NodeSpec, demo_fleet, fleet_expected_energy, schedule, simulate_fleet
from .markov import (
    REFERENCE_MATRIX,
    DeviceProfile,
    PowerState,
    StationaryDistribution,
    SteadyStateSolver,
    TransitionMatrix,
    default_profile,
    expected_power,
    perturb_row,
    raspberry_pi4_profile,
    residual,
    steady_state,
    transition_energy,
    validate_matrix,
)
from .montecarlo import (
    ConvergenceReport,
    MonteCarloEstimator,
    SimulationConfig,
    SimulationRun,
    ci_coverage,
    confidence_interval,
    convergence_study,
    simulate,
    tvd,
)
from .policy import (
    PolicyDecision,
    PolicySpec,
    QLearningPolicy,
    QTable,
    predictive_decide,
    q_decide,
    q_update,
    reactive_decide,
    run_policy,
    train_q_table,
)
from .workload import (
    ExponentialSmoothingForecaster,
    OracleForecaster,
    SmoothedDemandEstimator,
    WorkloadTrace,
    forecast_step,
    generate_poisson,
    load_trace,
    parse_trace,
)

__version__ = "0.1.0"
