"""Mean-field optimal control of finite-state agent populations.

Pipeline: define a model (transition/observation rates and costs), solve the
deterministic population-limit control problem, expand the problem to second
order around that trajectory to get a linear filter and feedback law for the
scaled fluctuations, and validate both against direct N-agent jump-process
simulation.
"""

from .model import (
    AnalyticDerivatives,
    MaximizerError,
    ModelSpec,
    PointEval,
    RateError,
    SimplexError,
    drift,
    hamiltonian,
    noise_covariances,
    obs_drift,
    point_eval,
    validate_simplex,
)
from .ising import IsingFixedPoints, build_ising, ising_closed_form
from .sir import build_sir
from .meanfield import (
    LineSearchError,
    MeanFieldSolution,
    OptimizerOptions,
    RolloutError,
    costate,
    cost_gradient,
    optimize,
    rollout,
)
from .fluctuations import (
    CoefficientError,
    FilterAndGain,
    LqgCoefficients,
    RiccatiResult,
    SingularInnovationError,
    extract_coefficients,
    kalman_forward,
    multinomial_initial_covariance,
    predicted_fluctuation_cost,
    riccati_backward,
    solve_fluctuations,
)
from .simulator import (
    EnsembleStats,
    EpisodeResult,
    KalmanFeedback,
    OpenLoop,
    ScalingStudy,
    SimReplica,
    StepError,
    kalman_controller_step,
    largest_remainder,
    run_ensemble,
    run_episode,
    scaling_study,
    step,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
