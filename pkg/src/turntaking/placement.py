"""Where a block goes once an agent has decided to place one.

Any callable ``(world, size) -> Optional[Placement]`` that only returns
members of ``world.legal_placements(size)`` can stand in for the greedy
policy below.
"""

from __future__ import annotations

from typing import Callable, Optional

from .env import Placement, TowerWorld

PlacementPolicy = Callable[[TowerWorld, int], Optional[Placement]]


def choose_placement(world: TowerWorld, size: int) -> Optional[Placement]:
    """Lowest row first, then the most centered resulting mass, then leftmost."""
    center = world.base_center
    for row in range(1, min(world._top + 1, world.config.top_row) + 1):
        cands = world.row_placements(row, size)
        if not cands:
            continue
        n = world._n_bricks + size

        def offset(p: Placement) -> float:
            return abs((world._center_sum + p.center_sum) / n - center)

        return min(cands, key=lambda p: (offset(p), p.start_col))
    return None


PLACEMENT_POLICIES: dict[str, PlacementPolicy] = {"greedy": choose_placement}


def get_placement_policy(kind: str) -> PlacementPolicy:
    try:
        return PLACEMENT_POLICIES[kind]
    except KeyError:
        raise ValueError(f"unknown placement policy {kind!r}; have {sorted(PLACEMENT_POLICIES)}") from None
