"""Backup-sensor configuration optimization under a cost budget.

Estimates pair-dropout returns from a budgeted episode oracle, builds a
second-order QUBO with an integer-slack cost penalty, solves it with
Tabu Search, and verifies everything against exhaustive oracles at desk
scale.
"""

__version__ = "0.1.0"

from .estimator import (
    EpisodeOracle,
    estimate_baseline,
    estimate_pairs_momentum,
    estimate_pairs_round_robin,
    momentum,
)
from .model import (
    BackupConfig,
    DomainError,
    DropoutVector,
    InputError,
    PairReturnTable,
    ProblemInstance,
    SensorOptError,
    apply_backups,
    config_cost,
    validate_instance,
)
from .qubo import (
    QuboMatrix,
    advantage_scale,
    approx_expected_return,
    at_most_two_dropout_prob,
    build_qubo,
    conditional_expected_return,
    hamiltonian,
    pair_backup_advantage,
    single_backup_advantage,
)
from .simenv import (
    GroundTruthModel,
    KnapsackInstance,
    brute_force_best_config,
    exact_expected_return,
    generate_instance,
    generate_model,
    knapsack_dp,
    knapsack_to_instance,
    make_oracle,
    model_return,
    monte_carlo_expected_return,
    named_fixture,
)
from .solver import (
    PipelineResult,
    SolveResult,
    TabuParams,
    brute_force_qubo,
    decode,
    optimize_backups,
    tabu_search,
)

__all__ = [
    "BackupConfig",
    "DomainError",
    "DropoutVector",
    "EpisodeOracle",
    "GroundTruthModel",
    "InputError",
    "KnapsackInstance",
    "PairReturnTable",
    "PipelineResult",
    "ProblemInstance",
    "QuboMatrix",
    "SensorOptError",
    "SolveResult",
    "TabuParams",
    "advantage_scale",
    "apply_backups",
    "approx_expected_return",
    "at_most_two_dropout_prob",
    "brute_force_best_config",
    "brute_force_qubo",
    "build_qubo",
    "conditional_expected_return",
    "config_cost",
    "decode",
    "estimate_baseline",
    "estimate_pairs_momentum",
    "estimate_pairs_round_robin",
    "exact_expected_return",
    "generate_instance",
    "generate_model",
    "hamiltonian",
    "knapsack_dp",
    "knapsack_to_instance",
    "make_oracle",
    "model_return",
    "momentum",
    "monte_carlo_expected_return",
    "named_fixture",
    "optimize_backups",
    "pair_backup_advantage",
    "single_backup_advantage",
    "tabu_search",
    "validate_instance",
]
