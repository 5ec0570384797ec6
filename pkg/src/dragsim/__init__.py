"""Base-station activation control in HetNets with deep RL and reference policies."""

from .agent import DragAgent, DragConfig
from .baselines import QLearningAgent, SotaPolicy, StaticPolicy, TabularActorCritic
from .config import ConfigError, ScenarioConfig, load_scenario
from .env import HetNetEnv, PlacementFailed, Topology
from .harness import ExperimentSpec, load_spec, moving_average, run_experiment, summarize

__all__ = [
    "ConfigError",
    "DragAgent",
    "DragConfig",
    "ExperimentSpec",
    "HetNetEnv",
    "PlacementFailed",
    "QLearningAgent",
    "ScenarioConfig",
    "SotaPolicy",
    "StaticPolicy",
    "TabularActorCritic",
    "Topology",
    "load_scenario",
    "load_spec",
    "moving_average",
    "run_experiment",
    "summarize",
]

__version__ = "0.1.0"
