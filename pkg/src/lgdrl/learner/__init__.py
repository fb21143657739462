"""Expert-constrained actor-critic learner and SAC-family baselines."""

from .agent import Agent, Algorithm, TrainerConfig, UpdateStats
from .buffer import Batch, ReplayBuffer, Transition
from .losses import dual_update, polyak_update, state_value
from .trainer import EpisodeRecord, EvalResult, SeedStreams, TrainResult, collect_demonstrations, evaluate, train

__all__ = [
    "Agent",
    "Algorithm",
    "Batch",
    "EpisodeRecord",
    "EvalResult",
    "ReplayBuffer",
    "SeedStreams",
    "TrainResult",
    "TrainerConfig",
    "Transition",
    "UpdateStats",
    "collect_demonstrations",
    "dual_update",
    "evaluate",
    "polyak_update",
    "state_value",
    "train",
]
