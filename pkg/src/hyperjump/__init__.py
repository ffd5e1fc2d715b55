"""Multi-fidelity hyper-parameter optimization with jump-risk analysis."""

__version__ = "0.1.0"

from .space import Categorical, Configuration, Continuous, Integer, SearchSpace, encode, sample_uniform
from .surrogate import KernelParams, Observation, SurrogateModel, expected_improvement, fit
from .risk import (
    Gaussian,
    JumpDecision,
    MaxDistribution,
    PointMass,
    candidate_sets,
    ear,
    evaluate_jump_risk,
    max_distribution,
    rear,
)
from .engine import (
    BracketPlan,
    HyperJumpOptimizer,
    Incumbent,
    OptimizerPolicy,
    next_conf_to_test,
    plan_brackets,
    update_incumbent,
    warm_start_bracket,
)
from .baselines import BoEiOptimizer, RandomSearchOptimizer, hyperband_optimizer, successive_halving_optimizer
from .bench import EvaluationResult, SyntheticBenchmark, TabularBenchmark, evaluate, load_tabular, toy_suite
from .executor import RunResult, StopCondition, run_parallel, run_sequential

__all__ = [name for name in dir() if not name.startswith("_")]
