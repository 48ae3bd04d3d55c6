"""The learner's turn-taking policy (when to pass, indicate or place)."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import N_ACTIONS, Action, argmax3
from .fusion import FusionModel, build_feature_vector, refine
from .wfst import BehaviorModel, Cursor

SUMMARY_DIM = 18
STEP_DIM = SUMMARY_DIM + N_ACTIONS


def schedule_value(initial: float, floor: float, game_idx: int, hold: int = 50,
                   decay_games: int = 400) -> float:
    """Constant for ``hold`` games, linear to ``floor`` over ``decay_games``, then flat."""
    if game_idx < 0:
        raise ValueError("game index must be non-negative")
    if game_idx < hold:
        return initial
    if game_idx >= hold + decay_games:
        return floor
    frac = (game_idx - hold) / decay_games
    return initial - frac * (initial - floor)


@dataclass(frozen=True)
class Schedule:
    eps_initial: float = 1.0
    eps_floor: float = 1e-4
    alpha_initial: float = 0.01
    hold: int = 50
    decay_games: int = 400

    def epsilon(self, game_idx: int) -> float:
        return schedule_value(self.eps_initial, self.eps_floor, game_idx, self.hold, self.decay_games)

    def alpha(self, game_idx: int) -> float:
        # same multiplier profile as epsilon, scaled by alpha's own start value
        return self.alpha_initial * self.epsilon(game_idx) / self.eps_initial


def permitted_actions(first_turn: bool, blocks_left: int) -> list[Action]:
    if first_turn or blocks_left <= 0:
        return [Action.PASS, Action.INDICATE]
    return [Action.PASS, Action.INDICATE, Action.PLACE]


def _greedy(q, permitted: Sequence[Action]) -> Action:
    best = permitted[0]
    for a in permitted[1:]:
        if q[a] > q[best]:
            best = a
    return best


def _explore_or_exploit(q_fn, s, eps, first_turn, blocks_left, rng) -> Action:
    permitted = permitted_actions(first_turn, blocks_left)
    if eps > 0.0 and rng.random() < eps:
        return permitted[int(rng.integers(len(permitted)))]
    return _greedy(q_fn(s), permitted)


class TurnPolicy:
    """Q-values linear in the belief state, one weight row (plus bias) per action."""

    def __init__(self, state_dim: int, gamma: float = 0.9, weights: Optional[np.ndarray] = None):
        if not 0.0 <= gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        self.state_dim = state_dim
        self.gamma = gamma
        self.weights = (np.zeros((N_ACTIONS, state_dim + 1)) if weights is None
                        else np.array(weights, dtype=float))
        if self.weights.shape != (N_ACTIONS, state_dim + 1):
            raise ValueError(f"weights must be {(N_ACTIONS, state_dim + 1)}")

    def q_values(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if s.shape != (self.state_dim,):
            raise ValueError(f"state has shape {s.shape}, policy expects ({self.state_dim},)")
        return self.weights[:, :-1] @ s + self.weights[:, -1]

    def select_action(self, s, eps: float, first_turn: bool, blocks_left: int,
                      rng: np.random.Generator) -> Action:
        return _explore_or_exploit(self.q_values, s, eps, first_turn, blocks_left, rng)

    def td_update(self, s, a: Action, r: float, s_next, terminal: bool, alpha: float,
                  next_permitted: Optional[Sequence[Action]] = None) -> float:
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        s = np.asarray(s, dtype=float)
        target = r
        if not terminal:
            q_next = self.q_values(s_next)
            acts = next_permitted or list(Action)
            target += self.gamma * max(q_next[b] for b in acts)
        delta = target - float(self.q_values(s)[a])
        if not np.isfinite(delta):
            raise FloatingPointError(f"non-finite TD error (r={r}, alpha={alpha}, "
                                     f"max|w|={np.abs(self.weights).max():.3g})")
        self.weights[a, :-1] += alpha * delta * s
        self.weights[a, -1] += alpha * delta
        return delta

    def to_dict(self) -> dict:
        return {"kind": "linear", "state_dim": self.state_dim, "gamma": self.gamma,
                "weights": self.weights.tolist()}


START_KEY = ("start",)


class BaselineEncoder:
    """Joint last-action tuple over a fixed roster (learner first)."""

    def __init__(self, n_agents: int):
        self.n_agents = n_agents

    def key(self, last_actions: Sequence[Optional[Action]]) -> tuple:
        if len(last_actions) != self.n_agents:
            raise ValueError(f"baseline state fixed at {self.n_agents} agents, got {len(last_actions)}")
        if any(a is None for a in last_actions):
            return START_KEY
        return tuple(Action(a).symbol for a in last_actions)

    def n_states(self) -> int:
        return N_ACTIONS ** self.n_agents

    @property
    def dim(self) -> int:
        return N_ACTIONS * self.n_agents + 1

    def features(self, last_actions: Sequence[Optional[Action]]) -> np.ndarray:
        """One-hot last action per agent plus a start flag, for linear Q."""
        key = self.key(last_actions)
        v = np.zeros(self.dim)
        if key == START_KEY:
            v[-1] = 1.0
        else:
            for k, a in enumerate(last_actions):
                v[N_ACTIONS * k + int(a)] = 1.0
        return v


def baseline_state(last_actions: Sequence[Optional[Action]]) -> tuple:
    return BaselineEncoder(len(last_actions)).key(last_actions)


class TabularPolicy:
    """Q-table over discrete baseline keys with the same interface as ``TurnPolicy``."""

    def __init__(self, gamma: float = 0.9):
        self.gamma = gamma
        self.table: dict[tuple, list] = {}

    def q_values(self, s) -> list:
        return self.table.get(s, [0.0, 0.0, 0.0])

    def select_action(self, s, eps, first_turn, blocks_left, rng) -> Action:
        return _explore_or_exploit(self.q_values, s, eps, first_turn, blocks_left, rng)

    def td_update(self, s, a, r, s_next, terminal, alpha, next_permitted=None) -> float:
        target = r
        if not terminal:
            q_next = self.q_values(s_next)
            acts = next_permitted or list(Action)
            target += self.gamma * max(q_next[b] for b in acts)
        row = self.table.setdefault(s, [0.0, 0.0, 0.0])
        delta = target - row[a]
        row[a] += alpha * delta
        return delta

    def to_dict(self) -> dict:
        return {"kind": "tabular", "gamma": self.gamma,
                "table": {"".join(k): v for k, v in sorted(self.table.items())}}


def save_policy(policy, path, **extra) -> None:
    Path(path).write_text(json.dumps({**policy.to_dict(), **extra}, indent=1))


def rollout(models: Sequence[BehaviorModel], cursors: Sequence[Cursor], types: Sequence[int],
            last_actions: Sequence[Optional[Action]], fusion: Optional[FusionModel],
            horizon: int = 1, mode: str = "noisy_or") -> list[tuple[np.ndarray, np.ndarray]]:
    """Refined predictions and type summaries for the next ``horizon`` turns.

    Later steps feed each agent's most likely action back in as its previous
    action. Only cursor copies move; the live models are never updated.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    curs = [c.copy() for c in cursors]
    last = list(last_actions)
    out = []
    refined = None
    for step in range(horizon):
        if step:
            for k, model in enumerate(models):
                a = Action(argmax3(refined[k]))
                model.step(curs[k], a)
                last[k] = a
        preds = [model.predict(c) for model, c in zip(models, curs)]
        refined, summaries = refine(preds, last, types, fusion, mode)
        out.append((refined, summaries))
    return out


def self_rollout(model: BehaviorModel, cursor: Cursor, horizon: int = 1,
                 fusion: Optional[FusionModel] = None, summaries=None,
                 last: Optional[Action] = None) -> list[tuple]:
    """The learner's own predicted distributions, optionally routed through fusion."""
    cur = cursor.copy()
    out = []
    for step in range(horizon):
        if step:
            a = Action(argmax3(out[-1]))
            model.step(cur, a)
            last = a
        dist = model.predict(cur)
        if fusion is not None and summaries is not None:
            x = build_feature_vector(0, last, dist, summaries[step], fusion.n_types)
            dist = tuple(fusion.predict(x))
        out.append(tuple(dist))
    return out


def policy_state(rolled: Sequence[tuple], self_dists: Sequence) -> np.ndarray:
    if not rolled:
        raise ValueError("empty roll-out")
    parts = []
    for (_, summaries), own in zip(rolled, self_dists):
        parts.append(np.asarray(summaries).reshape(-1))
        parts.append(np.asarray(own, dtype=float))
    return np.concatenate(parts)
