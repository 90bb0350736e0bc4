"""Simulated multi-agent environments and topology loading."""

from __future__ import annotations

import numpy as np

from ..graph import AgentGraph
from ._schema import ActionError, TopologyError
from .bandit import BanditEnv, BanditTopology, load_bandit_topology
from .routing import (
    RoutingEnv,
    RoutingTopology,
    load_routing_topology,
    mlu,
)
from .wifi import WifiEnv, WifiTopology, load_wifi_topology

ENV_KINDS = ("routing", "wifi", "bandit")

_LOADERS = {
    "routing": load_routing_topology,
    "wifi": load_wifi_topology,
    "bandit": load_bandit_topology,
}

_ENV_CLASSES = {
    "routing": RoutingEnv,
    "wifi": WifiEnv,
    "bandit": BanditEnv,
}


def load_topology(kind: str, path):
    if kind not in _LOADERS:
        raise TopologyError(f"unknown environment kind '{kind}' (one of {ENV_KINDS})")
    return _LOADERS[kind](path)


def build_env(kind: str, topology, horizon: int, rng: np.random.Generator):
    if kind not in _ENV_CLASSES:
        raise TopologyError(f"unknown environment kind '{kind}' (one of {ENV_KINDS})")
    return _ENV_CLASSES[kind](topology, horizon, rng)


def derive_neighborhoods(topology) -> AgentGraph:
    """Agent graph induced by an environment topology."""
    return topology.derive_graph()


__all__ = [
    "ActionError",
    "BanditEnv",
    "BanditTopology",
    "ENV_KINDS",
    "RoutingEnv",
    "RoutingTopology",
    "TopologyError",
    "WifiEnv",
    "WifiTopology",
    "build_env",
    "derive_neighborhoods",
    "load_bandit_topology",
    "load_routing_topology",
    "load_topology",
    "load_wifi_topology",
    "mlu",
]
