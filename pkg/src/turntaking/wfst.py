"""Individual behavior models as weighted finite-state transducers.

States are ``(bricks placed, marker)`` pairs where the marker records the
agent's last action: ``S`` (nothing observed yet), ``A`` (just placed),
``P1``/``P2`` and ``I1``/``I2`` (pass or indicate streaks, the last one
absorbing). Each ``(state, observed input)`` pair owns three predictive
arcs, one per possible next action, whose weights are exponential moving
averages of the 0/1 prediction cost. The input alphabet distinguishes
block sizes for placements because they move the state across columns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple, Optional

from .core import N_ACTIONS, UNIFORM, Action
from .env import MAX_BLOCK

SYMBOLS = ("p", "i") + tuple(f"a{s}" for s in range(1, MAX_BLOCK + 1))
N_SYMBOLS = len(SYMBOLS)


class BehaviorState(NamedTuple):
    bricks: int
    marker: str

    def __str__(self) -> str:
        return f"{self.bricks}{self.marker}"


START = BehaviorState(0, "S")


def input_symbol(action: Action, size: Optional[int] = None) -> int:
    if action == Action.PLACE:
        if size is None or not 1 <= size <= MAX_BLOCK:
            raise ValueError(f"placement symbol needs a block size in [1, {MAX_BLOCK}]")
        return 1 + size
    return int(action)


def symbol_action(sym: int) -> Action:
    return Action(min(sym, 2))


def markers(streak_cap: int = 2) -> list[str]:
    return ["A"] + [f"P{k}" for k in range(1, streak_cap + 1)] + [f"I{k}" for k in range(1, streak_cap + 1)]


def advance_state(state: BehaviorState, sym: int, total_bricks: int,
                  streak_cap: int = 2) -> BehaviorState:
    """Successor of ``state`` after observing ``sym``; placements clamp at the last column."""
    if sym >= 2:
        return BehaviorState(min(state.bricks + sym - 1, total_bricks), "A")
    kind = "P" if sym == 0 else "I"
    count = 0
    if state.marker[0] == kind:
        count = int(state.marker[1:])
    return BehaviorState(state.bricks, f"{kind}{min(count + 1, streak_cap)}")


@dataclass
class ArcSet:
    """The three predictive arcs leaving one state on one input."""

    dest: BehaviorState
    weights: list
    initialized: list

    def copy(self) -> "ArcSet":
        return ArcSet(self.dest, list(self.weights), list(self.initialized))


class Cursor:
    """Position of one tracked agent: last state and the input observed from it."""

    __slots__ = ("state", "pending", "last_size")

    def __init__(self, state: BehaviorState = START, pending: Optional[int] = None,
                 last_size: int = 1):
        self.state = state
        self.pending = pending
        self.last_size = last_size

    def copy(self) -> "Cursor":
        return Cursor(self.state, self.pending, self.last_size)

    def __repr__(self) -> str:
        sym = None if self.pending is None else SYMBOLS[self.pending]
        return f"Cursor({self.state}, {sym})"


class BehaviorModel:
    def __init__(self, total_bricks: int, eta: float = 0.1, streak_cap: int = 2,
                 backoff: bool = True):
        if total_bricks < 0:
            raise ValueError("total_bricks must be non-negative")
        if not 0.0 < eta <= 1.0:
            raise ValueError("eta must lie in (0, 1]")
        if streak_cap < 1:
            raise ValueError("streak_cap must be at least 1")
        self.total_bricks = total_bricks
        self.eta = eta
        self.streak_cap = streak_cap
        self.backoff = backoff
        self.arcs: dict[tuple, ArcSet] = {}
        self.overflow = 0  # placements observed past the last column

    def states(self) -> list[BehaviorState]:
        out = [START]
        for m in range(self.total_bricks + 1):
            for mk in markers(self.streak_cap):
                if mk == "A" and m == 0:
                    continue
                out.append(BehaviorState(m, mk))
        return out

    def inputs(self, state: BehaviorState) -> list[int]:
        if state.bricks < self.total_bricks:
            return list(range(N_SYMBOLS))
        return [0, 1]

    def advance(self, state: BehaviorState, sym: int) -> BehaviorState:
        return advance_state(state, sym, self.total_bricks, self.streak_cap)

    def _arcset(self, state: BehaviorState, sym: int) -> ArcSet:
        arcs = self.arcs.get((state, sym))
        if arcs is None:
            # only reachable for placements observed in the last column
            self.overflow += 1
            arcs = ArcSet(self.advance(state, sym), [1.0] * N_ACTIONS, [False] * N_ACTIONS)
            self.arcs[(state, sym)] = arcs
        return arcs

    def observe_transition(self, state: BehaviorState, sym: int, actual_next: Action) -> None:
        arcs = self._arcset(state, sym)
        w, init = arcs.weights, arcs.initialized
        eta = self.eta
        for out in range(N_ACTIONS):
            cost = 0.0 if out == actual_next else 1.0
            if init[out]:
                w[out] = eta * cost + (1.0 - eta) * w[out]
            else:
                w[out] = cost
                init[out] = True

    def predict_next(self, state: BehaviorState, sym: int) -> tuple:
        arcs = self.arcs.get((state, sym))
        if arcs is None:
            return UNIFORM
        w = arcs.weights
        s0 = max(0.0, 1.0 - w[0])
        s1 = max(0.0, 1.0 - w[1])
        s2 = max(0.0, 1.0 - w[2])
        total = s0 + s1 + s2
        if total <= 0.0:
            return UNIFORM
        return (s0 / total, s1 / total, s2 / total)

    # cursor-level helpers used while tracking a live agent

    def predict(self, cur: Cursor) -> tuple:
        if cur.pending is None:
            return UNIFORM
        state = cur.state
        if self.backoff:
            state = self.backoff_state(state, cur.pending)
        return self.predict_next(state, cur.pending)

    def backoff_state(self, state: BehaviorState, sym: int) -> BehaviorState:
        """Nearest column (lower first on ties) whose arcs for this marker and input are trained."""
        arcs = self.arcs.get((state, sym))
        if (arcs is not None and any(arcs.initialized)) or state.marker == "S":
            return state
        for d in range(1, self.total_bricks + 1):
            for m in (state.bricks - d, state.bricks + d):
                if 0 <= m <= self.total_bricks:
                    cand = BehaviorState(m, state.marker)
                    arcs = self.arcs.get((cand, sym))
                    if arcs is not None and any(arcs.initialized):
                        return cand
        return state

    def observe(self, cur: Cursor, action: Action, size: Optional[int] = None) -> None:
        """Score the pending prediction against ``action`` and move the cursor."""
        if cur.pending is not None:
            self.observe_transition(cur.state, cur.pending, action)
        self.step(cur, action, size)

    def step(self, cur: Cursor, action: Action, size: Optional[int] = None) -> None:
        """Move the cursor without touching any weight."""
        if cur.pending is not None:
            arcs = self.arcs.get((cur.state, cur.pending))
            cur.state = arcs.dest if arcs is not None else self.advance(cur.state, cur.pending)
        if action == Action.PLACE:
            size = size or cur.last_size
            cur.last_size = size
        cur.pending = input_symbol(action, size)

    def clone(self) -> "BehaviorModel":
        other = BehaviorModel(self.total_bricks, self.eta, self.streak_cap, self.backoff)
        other.arcs = {k: v.copy() for k, v in self.arcs.items()}
        return other

    def iter_arcs(self) -> Iterator[dict]:
        for (state, sym), arcs in self.arcs.items():
            for out in range(N_ACTIONS):
                yield {
                    "from": str(state),
                    "input": SYMBOLS[sym],
                    "output": Action(out).symbol,
                    "to": str(arcs.dest),
                    "weight": arcs.weights[out],
                    "initialized": arcs.initialized[out],
                }

    def to_dict(self) -> dict:
        return {
            "total_bricks": self.total_bricks,
            "eta": self.eta,
            "streak_cap": self.streak_cap,
            "backoff": self.backoff,
            "arcs": list(self.iter_arcs()),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BehaviorModel":
        model = cls(d["total_bricks"], d["eta"], d["streak_cap"], d.get("backoff", True))
        for rec in d["arcs"]:
            state = _parse_state(rec["from"])
            sym = SYMBOLS.index(rec["input"])
            arcs = model.arcs.get((state, sym))
            if arcs is None:
                arcs = ArcSet(_parse_state(rec["to"]), [1.0] * N_ACTIONS, [False] * N_ACTIONS)
                model.arcs[(state, sym)] = arcs
            out = Action.from_symbol(rec["output"])
            arcs.weights[out] = float(rec["weight"])
            arcs.initialized[out] = bool(rec["initialized"])
        return model

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "BehaviorModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _parse_state(text: str) -> BehaviorState:
    k = 0
    while text[k].isdigit():
        k += 1
    return BehaviorState(int(text[:k]), text[k:])


def build_topology(total_bricks: int, eta: float = 0.1, streak_cap: int = 2,
                   backoff: bool = True) -> BehaviorModel:
    """Blank model with every arc uninitialized at cost 1."""
    model = BehaviorModel(total_bricks, eta, streak_cap, backoff)
    for state in model.states():
        for sym in model.inputs(state):
            model.arcs[(state, sym)] = ArcSet(model.advance(state, sym), [1.0] * N_ACTIONS,
                                              [False] * N_ACTIONS)
    return model


def clone_prototype(proto: BehaviorModel) -> BehaviorModel:
    return proto.clone()
