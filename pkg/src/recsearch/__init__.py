"""Searchable recommendation pipelines with random, greedy and Bayesian tuners."""

from .graph import GraphSpec, materialize_model, validate_graph
from .recipes import RECIPES, build_recipe
from .space import Bool, Choice, Fixed, FloatRange, HyperSpace, IntRange
from .trainer import TrainConfig, evaluate_metric, train_trial
from .tuners import Oracle, next_trial_bayesian, next_trial_greedy, next_trial_random

__version__ = "0.1.0"
