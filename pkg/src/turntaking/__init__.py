"""Turn-taking behavior models and a Q-learning turn-taker for a shared tower."""

from .core import Action, BehaviorType

__all__ = ["Action", "BehaviorType"]
