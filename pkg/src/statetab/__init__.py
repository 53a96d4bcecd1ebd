"""Tabulated state spaces with prioritized sweeping over small backups."""

from .agent import Agent, AgentConfig, LocalLink, ReplayMemory
from .qlookup import QEstimate, q_estimate
from .sweeper import Sweeper, SweeperConfig, SweeperService
from .tabular_model import TransitionRecord, TransitionTable
from .tabulators import GridTabulator, LearnedTabulator, LSHTabulator

__version__ = "0.1.0"

__all__ = [
    "Agent", "AgentConfig", "LocalLink", "ReplayMemory", "QEstimate", "q_estimate",
    "Sweeper", "SweeperConfig", "SweeperService", "TransitionRecord", "TransitionTable",
    "GridTabulator", "LearnedTabulator", "LSHTabulator",
]
