"""Experience replay: transition records and a seeded ring buffer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Transition:
    """One step of shared-reward experience for all agents."""

    obs: list[np.ndarray]  # per-agent observation vectors
    actions: list  # per-agent actions (ints for Q learners, vectors for AC)
    reward: float  # single scalar shared by all agents
    next_obs: list[np.ndarray]
    terminal: bool


class ReplayBuffer:
    """Fixed-capacity ring with uniform without-replacement batch sampling."""

    def __init__(self, capacity: int, rng: np.random.Generator) -> None:
        if capacity < 1:
            raise ValueError("replay capacity must be positive")
        self.capacity = capacity
        self._rng = rng
        self._items: list[Transition] = []
        self._cursor = 0

    def add(self, transition: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self._cursor] = transition
            self._cursor = (self._cursor + 1) % self.capacity

    def __len__(self) -> int:
        return len(self._items)

    def sample(self, batch_size: int) -> list[Transition]:
        if batch_size > len(self._items):
            raise ValueError(f"cannot sample {batch_size} from buffer of {len(self._items)}")
        idx = self._rng.choice(len(self._items), size=batch_size, replace=False)
        return [self._items[i] for i in idx]
