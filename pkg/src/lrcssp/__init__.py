"""Optimistic learning of linear contextual stochastic shortest paths."""

from .errors import (
    ConfigError,
    ImproperPolicyError,
    LrcsspError,
    NonConvergenceError,
    ProjectionError,
    ProtocolError,
    StructuralError,
)
from .ssp import (
    GOAL,
    SspInstance,
    bellman_backup,
    expected_hitting_time,
    is_proper,
    policy_evaluation,
    value_iteration,
)
from .linear_model import (
    GeneratorSpec,
    LinearCsspModel,
    context_sequence,
    generate_instance,
    generate_trap_instance,
    induce_ssp,
    sample_step,
    validate_context,
    validate_model,
)
from .estimation import (
    Estimates,
    SaStatistics,
    capped_simplex_projection,
    dynamics_radius,
    is_known,
    loss_radius,
    project_to_stochastic,
    ridge_dynamics_estimate,
    ridge_loss_estimate,
)
from .learner import (
    EpisodeLog,
    LearnerConfig,
    RunLog,
    auto_epsilon,
    evi_plan,
    l1_optimistic_distribution,
    optimistic_loss,
    run,
)
from .harness import (
    ExperimentConfig,
    baseline_context_blind,
    compute_regret,
    hpe_diagnostics,
    oracle_values,
    run_experiment,
)

__version__ = "0.1.0"
