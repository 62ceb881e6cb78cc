"""Distributionally robust offline model-based policy optimization on finite MDPs."""

from .critic import CriticConfig, InterpolatedWorld, build_world, critic_update, run_critic
from .mdp import BoundConstants, TabularMDP, exact_q, occupancy, policy_return

__all__ = ["BoundConstants", "CriticConfig", "InterpolatedWorld", "TabularMDP", "build_world",
           "critic_update", "exact_q", "occupancy", "policy_return", "run_critic"]
__version__ = "0.1.0"
