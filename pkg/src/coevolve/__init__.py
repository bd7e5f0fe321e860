"""Reward-policy co-evolution on desk-scale control tasks.

Reward programs in a small DSL are generated (mock or HTTP chat backend),
policies inherit parameters through ratio-alpha fusion, and a GP-based
short-cut Bayesian optimization picks the fusion ratio.
"""

from .coevolution import (
    EUREKA, ROSKA, ROSKA_U, CoEvolution, CoEvolutionState, FixedAlpha, RunMode, Schedule, run_dp_round,
    run_experiment, run_round_one,
)

__version__ = "0.1.0"

__all__ = [
    "CoEvolution", "CoEvolutionState", "EUREKA", "FixedAlpha", "ROSKA", "ROSKA_U", "RunMode", "Schedule",
    "run_dp_round", "run_experiment", "run_round_one",
]
