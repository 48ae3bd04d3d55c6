"""Action and behavior-type enumerations shared by every module."""

from enum import IntEnum

import numpy as np


class Action(IntEnum):
    PASS = 0
    INDICATE = 1
    PLACE = 2

    @property
    def symbol(self) -> str:
        return "pia"[self]

    @classmethod
    def from_symbol(cls, s: str) -> "Action":
        return cls("pia".index(s))


class BehaviorType(IntEnum):
    PASSIVE = 0
    AGGRESSIVE = 1
    STOCHASTIC = 2

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, name: str) -> "BehaviorType":
        name = name.strip().lower()
        for t in cls:
            if t.label == name or t.label[0] == name:
                return t
        raise ValueError(f"unknown behavior type {name!r}")


N_ACTIONS = len(Action)
N_TYPES = len(BehaviorType)
UNIFORM = (1.0 / 3, 1.0 / 3, 1.0 / 3)


def argmax3(dist) -> int:
    """Index of the largest entry; ties resolve to the lowest index (p < i < a)."""
    best = 0
    for k in (1, 2):
        if dist[k] > dist[best]:
            best = k
    return best


def sample_index(probs, rng: np.random.Generator) -> int:
    u = rng.random()
    acc = 0.0
    last = 0
    for k, p in enumerate(probs):
        if p <= 0.0:
            continue
        last = k
        acc += p
        if u < acc:
            return k
    return last
