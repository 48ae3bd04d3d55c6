"""Experiment configuration, loaded from JSON.

Every key is optional; see ``ExperimentConfig`` for defaults. Example::

    {
      "world": {"width": 100, "height": 100, "base_size": 8},
      "blocks_per_agent": 5,
      "roster": ["passive", {"type": "aggressive", "budget": 3}],
      "gamma": 0.9, "alpha": 0.01, "horizon": 1,
      "state": "behavior", "placement": "greedy"
    }
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .core import BehaviorType
from .env import ConfigError, WorldConfig


@dataclass(frozen=True)
class AgentEntry:
    btype: BehaviorType
    policy_table: Optional[tuple] = None
    block_size_dist: Optional[tuple] = None
    budget: Optional[int] = None

    @classmethod
    def parse(cls, item) -> "AgentEntry":
        if isinstance(item, AgentEntry):
            return item
        if isinstance(item, (str, BehaviorType)):
            return cls(item if isinstance(item, BehaviorType) else BehaviorType.parse(item))
        extra = set(item) - {"type", "policy_table", "block_size_dist", "budget"}
        if extra:
            raise ConfigError(f"unknown roster keys {sorted(extra)}")
        table = item.get("policy_table")
        sizes = item.get("block_size_dist")
        return cls(BehaviorType.parse(item["type"]),
                   None if table is None else tuple(tuple(r) for r in table),
                   None if sizes is None else tuple(sizes),
                   item.get("budget"))

    def to_json(self):
        if self.policy_table is None and self.block_size_dist is None and self.budget is None:
            return self.btype.label
        d = {"type": self.btype.label}
        if self.policy_table is not None:
            d["policy_table"] = [list(r) for r in self.policy_table]
        if self.block_size_dist is not None:
            d["block_size_dist"] = list(self.block_size_dist)
        if self.budget is not None:
            d["budget"] = self.budget
        return d


def default_hyperparameters(types: Sequence[BehaviorType]) -> tuple[float, float]:
    """(gamma, alpha) used for each opponent setting in the reference experiments."""
    if len(types) == 1:
        gamma = 0.99 if types[0] == BehaviorType.AGGRESSIVE else 0.90
        return gamma, 0.01
    return 0.98, 0.001


@dataclass(frozen=True)
class ExperimentConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    blocks_per_agent: int = 5
    learner_blocks: int = 5
    learner_block_size_dist: Optional[tuple] = None  # uniform over 1..5 when unset
    max_steps: int = 100
    # behavior models
    eta: float = 0.1
    streak_cap: int = 2
    games_per_combination: int = 30
    # fusion
    fusion_lr: float = 0.05
    fusion_epochs: int = 20
    summary_mode: str = "noisy_or"
    learner_through_fusion: bool = False
    # turn-taking policy
    roster: tuple = (AgentEntry(BehaviorType.PASSIVE),)
    state: str = "behavior"
    baseline_model: str = "linear"  # or "tabular"
    games: int = 1000
    trials: int = 50
    gamma: Optional[float] = None  # None: per-roster default
    alpha: Optional[float] = None
    eps_initial: float = 1.0
    eps_floor: float = 1e-4
    schedule_hold: int = 50
    schedule_decay: int = 400
    horizon: int = 1
    stop_when_learner_done: bool = True
    # evaluation
    eval_runs: int = 50
    eval_games: int = 1000  # games per run; predictions are scored online throughout
    placement: str = "greedy"
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.state not in ("behavior", "baseline"):
            raise ConfigError(f"state must be 'behavior' or 'baseline', got {self.state!r}")
        if self.baseline_model not in ("linear", "tabular"):
            raise ConfigError(f"baseline_model must be 'linear' or 'tabular', got {self.baseline_model!r}")
        if self.summary_mode not in ("noisy_or", "mean"):
            raise ConfigError(f"unknown summary mode {self.summary_mode!r}")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.blocks_per_agent < 0 or self.learner_blocks < 1:
            raise ConfigError("block budgets must be positive")
        if not self.roster:
            raise ConfigError("roster must name at least one rule-based agent")
        object.__setattr__(self, "roster", tuple(AgentEntry.parse(e) for e in self.roster))

    @property
    def roster_types(self) -> list[BehaviorType]:
        return [e.btype for e in self.roster]

    def resolved_gamma_alpha(self) -> tuple[float, float]:
        gamma, alpha = default_hyperparameters(self.roster_types)
        return (gamma if self.gamma is None else self.gamma,
                alpha if self.alpha is None else self.alpha)

    def replace(self, **changes) -> "ExperimentConfig":
        if "world" in changes and isinstance(changes["world"], dict):
            changes["world"] = dataclasses.replace(self.world, **changes["world"])
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["roster"] = [e.to_json() for e in self.roster]
        return d


def config_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    if "world" in d:
        try:
            d["world"] = WorldConfig(**d["world"])
        except TypeError as e:
            raise ConfigError(str(e)) from None
    if "roster" in d:
        d["roster"] = tuple(AgentEntry.parse(e) for e in d["roster"])
    for key in ("learner_block_size_dist",):
        if d.get(key) is not None:
            d[key] = tuple(d[key])
    return ExperimentConfig(**d)


def load_config(path) -> ExperimentConfig:
    return config_from_dict(json.loads(Path(path).read_text()))
