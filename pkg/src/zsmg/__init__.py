"""Zero-sum Markov games: exact minimax DP, linear approximation, LSPI and experiments."""

from .game import (ConvergenceError, TabularGame, apply_t_pi, apply_t_star, bellman_residual,
                   policy_iteration, value_iteration)
from .linapprox import BlockFeatureMap, FeatureMap, IndicatorFeatures, MarkovChain, WeightVector
from .lspi import SampleCorpus, lstdq_solve
from .matrix_lp import MaximinSolution, solve_maximin

__all__ = [
    "BlockFeatureMap", "ConvergenceError", "FeatureMap", "IndicatorFeatures", "MarkovChain",
    "MaximinSolution", "SampleCorpus", "TabularGame", "WeightVector", "apply_t_pi", "apply_t_star",
    "bellman_residual", "lstdq_solve", "policy_iteration", "solve_maximin", "value_iteration",
]
