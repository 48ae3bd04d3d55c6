"""The tower-building world.

A ``TowerWorld`` is a boolean occupancy grid with a fixed base on row 0.
Agents act simultaneously; two or more placements in one turn collapse
the tower regardless of where the blocks would have gone.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .core import Action

MAX_BLOCK = 5


class ConfigError(ValueError):
    pass


class WorldStateError(RuntimeError):
    pass


class Status(Enum):
    RUNNING = "running"
    COMPLETE = "complete"
    COLLAPSED = "collapsed"


class Terminal(Enum):
    RUNNING = "running"
    ALL_BRICKS_USED = "all_bricks_used"
    MAX_HEIGHT = "max_height"
    COLLAPSED = "collapsed"


@dataclass(frozen=True)
class WorldConfig:
    width: int = 100
    height: int = 100
    base_size: int = 8
    max_height: Optional[int] = None  # defaults to height
    score_includes_base: bool = True

    @property
    def top_row(self) -> int:
        return (self.max_height or self.height) - 1


@dataclass(frozen=True)
class Placement:
    row: int
    start_col: int
    size: int

    def __post_init__(self):
        if not 1 <= self.size <= MAX_BLOCK:
            raise ValueError(f"block size {self.size} outside [1, {MAX_BLOCK}]")
        if self.row < 1:
            raise ValueError("placements start at row 1")

    @property
    def cols(self) -> range:
        return range(self.start_col, self.start_col + self.size)

    @property
    def center_sum(self) -> float:
        # sum of cell-center columns (col + 0.5) over the block
        return self.size * self.start_col + self.size * self.size / 2.0


@dataclass
class TurnOutcome:
    actions: tuple
    placement: Optional[tuple] = None  # (agent index, Placement)
    collision: bool = False
    collapse: bool = False
    status: Status = Status.RUNNING


@dataclass
class TowerWorld:
    config: WorldConfig
    grid: np.ndarray
    base_left: int
    base_right: int
    queues: list = field(default_factory=list)
    step_index: int = 0
    status: Status = Status.RUNNING
    collapsed: bool = False
    # running mass of the non-base bricks
    _center_sum: float = 0.0
    _n_bricks: int = 0
    _top: int = 0

    @property
    def width(self) -> int:
        return self.config.width

    @property
    def height(self) -> int:
        return self.config.height

    @property
    def n_agents(self) -> int:
        return len(self.queues)

    def blocks_left(self, agent: int) -> int:
        return len(self.queues[agent])

    def next_block(self, agent: int) -> Optional[int]:
        q = self.queues[agent]
        return q[0] if q else None

    @property
    def base_center(self) -> float:
        return (self.base_left + self.base_right + 1) / 2.0

    def center_of_gravity(self) -> Optional[float]:
        if self._n_bricks == 0:
            return None
        return self._center_sum / self._n_bricks

    def is_stable(self, candidate: Placement) -> bool:
        cog = (self._center_sum + candidate.center_sum) / (self._n_bricks + candidate.size)
        return self.base_left <= cog <= self.base_right + 1

    def _fits(self, p: Placement) -> bool:
        if p.row > self.config.top_row or p.start_col < 0 or p.start_col + p.size > self.width:
            return False
        cells = self.grid[p.row, p.start_col:p.start_col + p.size]
        below = self.grid[p.row - 1, p.start_col:p.start_col + p.size]
        return not cells.any() and bool(below.any())

    def row_placements(self, row: int, size: int) -> list[Placement]:
        """Supported, unoccupied and stable placements of ``size`` on one row."""
        if row < 1 or row > self.config.top_row or size > self.width:
            return []
        n = self.width - size + 1
        occ = np.concatenate(([0], np.cumsum(self.grid[row], dtype=np.int64)))
        sup = np.concatenate(([0], np.cumsum(self.grid[row - 1], dtype=np.int64)))
        free = (occ[size:] - occ[:n]) == 0
        held = (sup[size:] - sup[:n]) > 0
        out = []
        for c in np.flatnonzero(free & held):
            p = Placement(row, int(c), size)
            if self.is_stable(p):
                out.append(p)
        return out

    def legal_placements(self, size: int) -> list[Placement]:
        if self.status is not Status.RUNNING:
            return []
        if not 1 <= size <= MAX_BLOCK:
            raise ValueError(f"block size {size} outside [1, {MAX_BLOCK}]")
        out = []
        for row in range(1, min(self._top + 1, self.config.top_row) + 1):
            out.extend(self.row_placements(row, size))
        return out

    def apply_joint_turn(self, actions: Sequence[Action],
                         placements: Sequence[Optional[Placement]]) -> TurnOutcome:
        """Resolve one simultaneous turn.

        A Place without a placement (or without blocks left) is downgraded
        to Pass before simultaneity is checked.
        """
        if self.status is not Status.RUNNING:
            raise WorldStateError(f"world is {self.status.value}; no further turns")
        if len(actions) != self.n_agents or len(placements) != self.n_agents:
            raise ValueError("one action and one placement slot per agent")
        resolved = []
        placers = []
        for k, (a, p) in enumerate(zip(actions, placements)):
            a = Action(a)
            if a is Action.PLACE and (p is None or not self.queues[k]):
                a = Action.PASS
            if a is Action.PLACE:
                placers.append(k)
            resolved.append(a)
        self.step_index += 1
        out = TurnOutcome(tuple(resolved))
        if len(placers) >= 2:
            out.collision = out.collapse = True
            self._collapse()
        elif placers:
            k = placers[0]
            p = placements[k]
            if p.size != self.queues[k][0]:
                raise ValueError(f"agent {k} must place its next block of size {self.queues[k][0]}")
            if not self._fits(p):
                raise ValueError(f"illegal placement {p}")
            self.queues[k].popleft()
            out.placement = (k, p)
            if self.is_stable(p):
                self._write(p)
            else:
                out.collapse = True
                self._collapse()
        if self.status is Status.RUNNING and self.terminal_status() is not Terminal.RUNNING:
            self.status = Status.COMPLETE
        out.status = self.status
        return out

    def _write(self, p: Placement) -> None:
        self.grid[p.row, p.start_col:p.start_col + p.size] = True
        self._center_sum += p.center_sum
        self._n_bricks += p.size
        self._top = max(self._top, p.row)

    def _collapse(self) -> None:
        self.collapsed = True
        self.status = Status.COLLAPSED

    def tower_score(self, include_base: Optional[bool] = None) -> int:
        if include_base is None:
            include_base = self.config.score_includes_base
        total = int(self.grid.sum())
        return total if include_base else total - self.config.base_size

    def terminal_status(self) -> Terminal:
        if self.collapsed:
            return Terminal.COLLAPSED
        if all(not q for q in self.queues):
            return Terminal.ALL_BRICKS_USED
        if self._top >= self.config.top_row:
            return Terminal.MAX_HEIGHT
        return Terminal.RUNNING

    def render(self, margin: int = 2) -> str:
        cols = np.flatnonzero(self.grid.any(axis=0))
        lo = max(int(cols.min()) - margin, 0)
        hi = min(int(cols.max()) + margin + 1, self.width)
        rows = []
        for r in range(self._top, -1, -1):
            rows.append("".join("#" if c else "." for c in self.grid[r, lo:hi]))
        return "\n".join(rows)


def init_world(config: WorldConfig, budgets: Sequence[Sequence[int]]) -> TowerWorld:
    """Fresh world with the base centered on row 0.

    ``budgets`` holds one queue of block sizes per agent, consumed in order.
    """
    if config.base_size < 1 or config.width < config.base_size:
        raise ConfigError(f"base of {config.base_size} does not fit a world {config.width} wide")
    if config.height < 2 or not 2 <= (config.max_height or config.height) <= config.height:
        raise ConfigError("world needs at least one row above the base")
    if len(budgets) == 0:
        raise ConfigError("at least one agent budget is required")
    for q in budgets:
        for s in q:
            if not 1 <= s <= MAX_BLOCK:
                raise ConfigError(f"block size {s} outside [1, {MAX_BLOCK}]")
    grid = np.zeros((config.height, config.width), dtype=bool)
    left = (config.width - config.base_size) // 2
    right = left + config.base_size - 1
    grid[0, left:right + 1] = True
    return TowerWorld(config=config, grid=grid, base_left=left, base_right=right,
                      queues=[deque(q) for q in budgets])
