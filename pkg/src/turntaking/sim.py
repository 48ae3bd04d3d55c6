"""One game of tower building, shared by every training and evaluation phase."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .agents import RuleAgent, RuleAgentSpec, draw_block_queue
from .config import ExperimentConfig
from .core import Action, sample_index
from .env import MAX_BLOCK, Status, init_world
from .fusion import FusionModel, build_feature_vector, summarize_by_type
from .placement import PlacementPolicy, choose_placement
from .policy import (STEP_DIM, BaselineEncoder, Schedule, TabularPolicy, TurnPolicy, permitted_actions,
                     policy_state, rollout, self_rollout)
from .wfst import BehaviorModel, Cursor, build_topology


@dataclass
class GameResult:
    steps: int = 0
    learner_return: float = 0.0
    successes: int = 0
    collision: bool = False
    collapsed: bool = False
    placement_steps: list = field(default_factory=list)
    world: object = field(default=None, repr=False)


class Learner:
    """The Q-learning agent: belief-state construction plus TD bookkeeping."""

    def __init__(self, policy, cfg: ExperimentConfig, fusion: Optional[FusionModel],
                 n_agents: int, schedule: Schedule):
        self.policy = policy
        self.cfg = cfg
        self.kind = cfg.state
        self.fusion = fusion
        self.schedule = schedule
        self.encoder = BaselineEncoder(n_agents)
        self.self_model = build_topology(cfg.learner_blocks * MAX_BLOCK, cfg.eta, cfg.streak_cap)
        sizes = cfg.learner_block_size_dist
        self.block_size_dist = (np.full(MAX_BLOCK, 1.0 / MAX_BLOCK) if sizes is None
                                else np.asarray(sizes, dtype=float))
        self.begin_game(0)

    def draw_queue(self, rng: np.random.Generator) -> list[int]:
        return [1 + sample_index(self.block_size_dist, rng) for _ in range(self.cfg.learner_blocks)]

    def begin_game(self, game_idx: int) -> None:
        self.eps = self.schedule.epsilon(game_idx)
        self.alpha = self.schedule.alpha(game_idx)
        self.cursor = Cursor()
        self.prev = None
        self.successes = 0
        self.collided = False
        self.done = False
        self.placement_steps = []

    def state(self, last: Sequence[Optional[Action]], rolled):
        if self.kind == "baseline":
            if self.cfg.baseline_model == "tabular":
                return self.encoder.key(last)
            return self.encoder.features(last)
        through = self.fusion if self.cfg.learner_through_fusion else None
        own = self_rollout(self.self_model, self.cursor, len(rolled), through,
                           [summ for _, summ in rolled], last[0])
        return policy_state(rolled, own)

    def act(self, s, first_turn: bool, blocks_left: int, rng: np.random.Generator) -> Action:
        if self.prev is not None:
            ps, pa = self.prev
            self.policy.td_update(ps, pa, 0.0, s, False, self.alpha,
                                  permitted_actions(first_turn, blocks_left))
        a = self.policy.select_action(s, self.eps, first_turn, blocks_left, rng)
        self.prev = (s, a)
        return a

    @property
    def episode_return(self) -> float:
        return self.successes - (1 if self.collided else 0)

    def after_turn(self, resolved: Action, size: Optional[int], outcome, world) -> None:
        self.self_model.observe(self.cursor, resolved, size)
        if resolved == Action.PLACE:
            if outcome.collision:
                self.collided = True
                self.done = True
            else:
                self.successes += 1
                self.placement_steps.append(world.step_index)
                if world.blocks_left(0) == 0:
                    self.done = True
        if outcome.status is not Status.RUNNING:
            self.done = True
        if self.done:
            self.finish()

    def finish(self) -> None:
        if self.prev is not None:
            ps, pa = self.prev
            self.policy.td_update(ps, pa, self.episode_return, None, True, self.alpha)
            self.prev = None
        self.done = True


def make_policy(cfg: ExperimentConfig, gamma: float, n_agents: int):
    if cfg.state == "baseline":
        if cfg.baseline_model == "tabular":
            return TabularPolicy(gamma)
        return TurnPolicy(BaselineEncoder(n_agents).dim, gamma)
    return TurnPolicy(STEP_DIM * cfg.horizon, gamma)


def play_game(cfg: ExperimentConfig, specs: Sequence[RuleAgentSpec], rng: np.random.Generator, *,
              models: Optional[Sequence[BehaviorModel]] = None,
              fusion: Optional[FusionModel] = None,
              learner: Optional[Learner] = None,
              pred_log=None,
              fusion_rows: Optional[list] = None,
              placement_policy: PlacementPolicy = choose_placement,
              game_idx: int = 0) -> GameResult:
    """Simulate one game.

    ``models`` (one per rule agent) are updated in place from every observed
    action. ``pred_log`` receives, per rule agent and step, the WFST and
    fused predictions, the realised action and the agent's true
    distribution; ``fusion_rows`` receives ``(features, next action)``
    pairs built from the WFST predictions.
    """
    off = 1 if learner is not None else 0
    n_rule = len(specs)
    budgets = [learner.draw_queue(rng)] if learner is not None else []
    for spec, entry in zip(specs, _entries(cfg, specs)):
        n = cfg.blocks_per_agent if entry is None or entry.budget is None else entry.budget
        budgets.append(draw_block_queue(spec, n, rng))
    world = init_world(cfg.world, budgets)
    agents = [RuleAgent(s) for s in specs]
    types = [int(s.btype) for s in specs]
    cursors = [Cursor() for _ in specs] if models is not None else None
    last: list = [None] * (n_rule + off)
    behavior_learner = learner is not None and learner.kind == "behavior"
    horizon = cfg.horizon if behavior_learner else 1
    if learner is not None:
        learner.begin_game(game_idx)
    result = GameResult()

    for t in range(cfg.max_steps):
        rule_last = last[off:]
        rolled = wfst = None
        if models is not None:
            wfst = [m.predict(c) for m, c in zip(models, cursors)]
            if behavior_learner or pred_log is not None or fusion_rows is not None:
                rolled = rollout(models, cursors, types, rule_last, fusion, horizon, cfg.summary_mode)

        actions: list = [Action.PASS] * (n_rule + off)
        if learner is not None and not learner.done:
            s = learner.state(last, rolled)
            actions[0] = learner.act(s, t == 0, world.blocks_left(0), rng)
        trues = []
        for k, agent in enumerate(agents):
            w = off + k
            true = agent.true_distribution(last[:w] + last[w + 1:], world.blocks_left(w))
            trues.append(true)
            actions[w] = Action(sample_index(true, rng))
        placements: list = [None] * len(actions)
        for w, a in enumerate(actions):
            if a == Action.PLACE:
                size = world.next_block(w)
                if size is not None:
                    placements[w] = placement_policy(world, size)
        outcome = world.apply_joint_turn(actions, placements)
        resolved = outcome.actions

        if models is not None:
            for k in range(n_rule):
                a = resolved[off + k]
                if cursors[k].pending is not None:
                    if pred_log is not None:
                        fused = rolled[0][0][k] if fusion is not None else wfst[k]
                        pred_log.add(types[k], wfst[k], fused, a, trues[k])
                    if fusion_rows is not None:
                        summ = rolled[0][1]
                        if fusion is not None:  # features always use raw WFST summaries
                            summ = summarize_by_type(wfst, rule_last, types, mode=cfg.summary_mode)
                        fusion_rows.append((build_feature_vector(types[k], rule_last[k], wfst[k], summ), int(a)))
                p = placements[off + k]
                models[k].observe(cursors[k], a, p.size if a == Action.PLACE and p is not None else None)
        if learner is not None and not learner.done:
            p = placements[0]
            learner.after_turn(resolved[0], p.size if p is not None else None, outcome, world)
        last = list(resolved)
        for k, agent in enumerate(agents):
            agent.last = resolved[off + k]
        result.steps = t + 1
        if outcome.status is not Status.RUNNING:
            break
        if learner is not None and learner.done and cfg.stop_when_learner_done:
            break

    result.collapsed = world.collapsed
    result.world = world
    if learner is not None:
        learner.finish()
        result.learner_return = learner.episode_return
        result.successes = learner.successes
        result.collision = learner.collided
        result.placement_steps = list(learner.placement_steps)
    return result


def _entries(cfg: ExperimentConfig, specs):
    # roster overrides only apply when the specs came from the roster itself
    if len(specs) == len(cfg.roster) and all(e.btype == s.btype for e, s in zip(cfg.roster, specs)):
        return list(cfg.roster)
    return [None] * len(specs)
