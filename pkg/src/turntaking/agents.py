"""Rule-based tower builders of the three behavior types."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Optional, Sequence

import numpy as np

from .core import Action, BehaviorType, sample_index
from .env import MAX_BLOCK


class Context(IntEnum):
    ONLY_AGENT_INDICATED = 0
    AGENT_AND_OTHERS_INDICATED = 1
    PASSED_LAST = 2
    PLACED_LAST = 3
    START = 4


# (low, high) per cell; rows follow Context 0..3, columns p, i, a.
NEXT_ACTION_RANGES = {
    BehaviorType.PASSIVE: (
        ((0.0, 0.0), (0.0, 0.0), (1.0, 1.0)),
        ((0.0, 0.05), (0.95, 1.0), (0.0, 0.0)),
        ((0.0, 0.05), (0.95, 1.0), (0.0, 0.0)),
        ((1.0, 1.0), (0.0, 0.0), (0.0, 0.0)),
    ),
    BehaviorType.AGGRESSIVE: (
        ((0.0, 0.0), (0.0, 0.0), (1.0, 1.0)),
        ((0.0, 0.0), (0.0, 0.0), (1.0, 1.0)),
        ((0.0, 0.05), (0.95, 1.0), (0.0, 0.0)),
        ((0.05, 0.15), (0.85, 0.95), (0.0, 0.0)),
    ),
    BehaviorType.STOCHASTIC: (
        ((0.05, 0.15), (0.05, 0.15), (0.75, 0.85)),
        ((0.55, 0.65), (0.35, 0.45), (0.0, 0.05)),
        ((0.35, 0.45), (0.50, 0.60), (0.05, 0.10)),
        ((0.05, 0.15), (0.60, 0.70), (0.20, 0.30)),
    ),
}


def generate_policy_table(btype: BehaviorType, rng: np.random.Generator) -> np.ndarray:
    ranges = np.asarray(NEXT_ACTION_RANGES[BehaviorType(btype)], dtype=float)
    table = rng.uniform(ranges[..., 0], ranges[..., 1])
    return table / table.sum(axis=1, keepdims=True)


def generate_block_size_dist(rng: np.random.Generator) -> np.ndarray:
    w = rng.uniform(size=MAX_BLOCK)
    return w / w.sum()


def _check_dist(name: str, v: np.ndarray) -> None:
    if np.any(v < 0) or np.any(v > 1) or not np.all(np.isfinite(v)):
        raise ValueError(f"{name} entries must lie in [0, 1]")
    sums = np.atleast_1d(v.sum(axis=-1))
    if np.any(np.abs(sums - 1.0) > 1e-9):
        raise ValueError(f"{name} must sum to 1 (got {sums})")


@dataclass(frozen=True)
class RuleAgentSpec:
    agent_id: int
    btype: BehaviorType
    policy_table: np.ndarray  # 4 x 3, rows indexed by Context
    block_size_dist: np.ndarray  # over sizes 1..5

    def __post_init__(self):
        table = np.array(self.policy_table, dtype=float)
        sizes = np.array(self.block_size_dist, dtype=float)
        if table.shape != (4, 3):
            raise ValueError(f"policy table must be 4x3, got {table.shape}")
        if sizes.shape != (MAX_BLOCK,):
            raise ValueError(f"block size distribution needs {MAX_BLOCK} entries")
        _check_dist("policy table row", table)
        _check_dist("block size distribution", sizes)
        table.flags.writeable = False
        sizes.flags.writeable = False
        object.__setattr__(self, "btype", BehaviorType(self.btype))
        object.__setattr__(self, "policy_table", table)
        object.__setattr__(self, "block_size_dist", sizes)
        # plain-float copy for the per-turn hot path
        object.__setattr__(self, "_rows", tuple(tuple(float(x) for x in r) for r in table))

    def to_dict(self) -> dict:
        return {
            "agent_id": self.agent_id,
            "type": self.btype.label,
            "policy_table": self.policy_table.tolist(),
            "block_size_dist": self.block_size_dist.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RuleAgentSpec":
        return cls(d["agent_id"], BehaviorType.parse(d["type"]),
                   np.asarray(d["policy_table"]), np.asarray(d["block_size_dist"]))


def make_rule_agent(agent_id: int, btype: BehaviorType, rng: np.random.Generator,
                    policy_table=None, block_size_dist=None) -> RuleAgentSpec:
    """Sample a fresh agent; explicit tables override the sampled ones."""
    table = generate_policy_table(btype, rng) if policy_table is None else policy_table
    sizes = generate_block_size_dist(rng) if block_size_dist is None else block_size_dist
    return RuleAgentSpec(agent_id, BehaviorType(btype), np.asarray(table, float), np.asarray(sizes, float))


def classify_context(self_last: Action, others_indicated: bool) -> Context:
    if self_last == Action.INDICATE:
        return Context.AGENT_AND_OTHERS_INDICATED if others_indicated else Context.ONLY_AGENT_INDICATED
    if self_last == Action.PASS:
        return Context.PASSED_LAST
    return Context.PLACED_LAST


def next_action_distribution(spec: RuleAgentSpec, ctx: Context, first_turn: bool,
                             blocks_left: int) -> tuple:
    """The agent's true next-action distribution after first-turn/budget masking."""
    row = Context.PASSED_LAST if ctx == Context.START else ctx
    p, i, a = spec._rows[row]
    if first_turn or ctx == Context.START or blocks_left <= 0:
        a = 0.0
        total = p + i
        if total <= 0.0:
            return (0.0, 1.0, 0.0)
        return (p / total, i / total, 0.0)
    return (p, i, a)


def rule_action(spec: RuleAgentSpec, ctx: Context, first_turn: bool, blocks_left: int,
                rng: np.random.Generator) -> Action:
    return Action(sample_index(next_action_distribution(spec, ctx, first_turn, blocks_left), rng))


def draw_block_size(spec: RuleAgentSpec, rng: np.random.Generator) -> int:
    return 1 + sample_index(spec.block_size_dist, rng)


def draw_block_queue(spec: RuleAgentSpec, n_blocks: int, rng: np.random.Generator) -> list[int]:
    return [draw_block_size(spec, rng) for _ in range(n_blocks)]


class RuleAgent:
    """Runtime wrapper that tracks the agent's own history within one game."""

    def __init__(self, spec: RuleAgentSpec):
        self.spec = spec
        self.last: Optional[Action] = None

    @property
    def btype(self) -> BehaviorType:
        return self.spec.btype

    def reset(self) -> None:
        self.last = None

    def context(self, others_last: Sequence[Optional[Action]]) -> Context:
        if self.last is None:
            return Context.START
        return classify_context(self.last, any(a == Action.INDICATE for a in others_last))

    def true_distribution(self, others_last, blocks_left: int) -> tuple:
        return next_action_distribution(self.spec, self.context(others_last),
                                        self.last is None, blocks_left)

    def act(self, others_last, blocks_left: int, rng: np.random.Generator) -> Action:
        return Action(sample_index(self.true_distribution(others_last, blocks_left), rng))
