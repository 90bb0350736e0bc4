"""Stateless coordination bandit: reward 1 iff every agent plays action 0.

A minimal cooperative fixture with an enumerable optimum; observations
are a constant bias so the nets have something to condition on.

Topology files are JSON ``{"n_agents": 2, "n_actions": 2}``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..graph import AgentGraph
from ._schema import Checker, load_json_file


@dataclass
class BanditTopology:
    n_agents: int
    n_actions: int

    def derive_graph(self) -> AgentGraph:
        return AgentGraph.complete(self.n_agents)


def load_bandit_topology(path) -> BanditTopology:
    raw = load_json_file(path)
    ck = Checker(str(path))
    ck.obj(raw, "$", {"n_agents": int, "n_actions": int})
    if raw["n_agents"] < 1 or raw["n_actions"] < 2:
        raise ck.fail("$", "need n_agents >= 1 and n_actions >= 2")
    return BanditTopology(raw["n_agents"], raw["n_actions"])


class BanditEnv:
    kind = "discrete"

    def __init__(self, topology: BanditTopology, horizon: int, rng: np.random.Generator):
        self.topology = topology
        self.horizon = horizon
        self.n_agents = topology.n_agents
        self.n_actions = [topology.n_actions] * self.n_agents
        self.obs_dims = [1] * self.n_agents
        self.reset()

    def to_native(self, actions: Sequence[int]) -> list[int]:
        return [int(a) for a in actions]

    def reset(self) -> list[np.ndarray]:
        self.t = 0
        return self.observe_all()

    def step(self, actions: Sequence[int]):
        if len(actions) != self.n_agents:
            raise ValueError(f"expected {self.n_agents} actions")
        reward = 1.0 if all(int(a) == 0 for a in actions) else 0.0
        self.t += 1
        return self.observe_all(), reward, self.t >= self.horizon

    def observe_all(self) -> list[np.ndarray]:
        return [np.ones(1) for _ in range(self.n_agents)]

    def derive_graph(self) -> AgentGraph:
        return self.topology.derive_graph()
