"""Packet-routing simulator: agents split commodity demand across candidate
paths; the shared reward is one minus the worst link utilization.

Topology files are JSON::

    {
      "routers": ["r0", "r1"],
      "links": [{"from": "r0", "to": "sink", "capacity": 6.0}, ...],
      "commodities": [
        {"src": "r0", "dst": "sink", "paths": [[0], [2, 4]], "demand_mean": 5.0}
      ],
      "demand": {"model": "constant"}
    }

Link ids are indices into ``links``; path endpoints must chain from the
commodity's source to its destination. Nodes that appear only in links
(merge points, sinks) are passive; every router listed in ``routers`` is
an agent and must source at least one commodity. The optional ``demand``
block selects the generator: ``constant`` (always the mean) or ``poisson``
(Poisson draws whose rate is boosted by ``burst_factor`` during bursts
entered with ``burst_prob`` and lasting ``burst_mean_duration`` steps on
average).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..graph import AgentGraph
from ._schema import ActionError, Checker, TopologyError, load_json_file

UTIL_HISTORY = 10
CONTROL_CYCLE = 10



@dataclass
class Link:
    src: str
    dst: str
    capacity: float


@dataclass
class Commodity:
    src: str
    dst: str
    paths: list[list[int]]
    demand_mean: float


@dataclass
class DemandModel:
    model: str = "constant"
    burst_prob: float = 0.0
    burst_factor: float = 1.0
    burst_mean_duration: float = 5.0


@dataclass
class RoutingTopology:
    routers: list[str]
    links: list[Link]
    commodities: list[Commodity]
    demand: DemandModel = field(default_factory=DemandModel)

    def __post_init__(self) -> None:
        owners = {r: [] for r in self.routers}
        for ci, c in enumerate(self.commodities):
            if c.src not in owners:
                raise TopologyError(f"commodities[{ci}].src: '{c.src}' is not a router")
            owners[c.src].append(ci)
        for r, owned in owners.items():
            if not owned:
                raise TopologyError(f"routers: '{r}' sources no commodity; agents must act")
        self._owners = owners

    def owned_commodities(self, router: str) -> list[int]:
        return self._owners[router]

    def direct_links(self, router: str) -> list[int]:
        return [li for li, l in enumerate(self.links) if router in (l.src, l.dst)]

    def derive_graph(self) -> AgentGraph:
        """Routers are adjacent iff some link connects them directly."""
        n = len(self.routers)
        index = {r: i for i, r in enumerate(self.routers)}
        adj = np.zeros((n, n), dtype=bool)
        for link in self.links:
            if link.src in index and link.dst in index and link.src != link.dst:
                i, j = index[link.src], index[link.dst]
                adj[i, j] = adj[j, i] = True
        return AgentGraph(adj)


def load_routing_topology(path) -> RoutingTopology:
    raw = load_json_file(path)
    ck = Checker(str(path))
    ck.obj(raw, "$", {"routers": list, "links": list, "commodities": list}, {"demand": dict})

    routers = raw["routers"]
    if not routers or len(set(routers)) != len(routers):
        raise ck.fail("$.routers", "must be a nonempty list of unique names")
    for i, r in enumerate(routers):
        if not isinstance(r, str):
            raise ck.fail(f"$.routers[{i}]", "must be a string")

    links = []
    for i, entry in enumerate(raw["links"]):
        ck.obj(entry, f"$.links[{i}]", {"from": str, "to": str, "capacity": float})
        links.append(
            Link(entry["from"], entry["to"], ck.positive(entry["capacity"], f"$.links[{i}].capacity"))
        )

    commodities = []
    for i, entry in enumerate(raw["commodities"]):
        ck.obj(
            entry,
            f"$.commodities[{i}]",
            {"src": str, "dst": str, "paths": list},
            {"demand_mean": float},
        )
        paths = entry["paths"]
        if not paths:
            raise ck.fail(f"$.commodities[{i}].paths", "needs at least one path")
        for pi, p in enumerate(paths):
            ppath = f"$.commodities[{i}].paths[{pi}]"
            if not isinstance(p, list) or not p:
                raise ck.fail(ppath, "must be a nonempty list of link ids")
            node = entry["src"]
            for hop, lid in enumerate(p):
                if not isinstance(lid, int) or not 0 <= lid < len(links):
                    raise ck.fail(f"{ppath}[{hop}]", f"invalid link id {lid!r}")
                if links[lid].src != node:
                    raise ck.fail(
                        f"{ppath}[{hop}]",
                        f"link {lid} starts at '{links[lid].src}', expected '{node}'",
                    )
                node = links[lid].dst
            if node != entry["dst"]:
                raise ck.fail(ppath, f"path ends at '{node}', expected '{entry['dst']}'")
        commodities.append(
            Commodity(
                entry["src"], entry["dst"], [list(p) for p in paths],
                ck.positive(entry.get("demand_mean", 1.0), f"$.commodities[{i}].demand_mean"),
            )
        )

    demand = DemandModel()
    if "demand" in raw:
        entry = ck.obj(
            raw["demand"], "$.demand", {},
            {"model": str, "burst_prob": float, "burst_factor": float,
             "burst_mean_duration": float},
        )
        model = entry.get("model", "constant")
        if model not in ("constant", "poisson"):
            raise ck.fail("$.demand.model", f"unknown model '{model}'")
        demand = DemandModel(
            model=model,
            burst_prob=ck.nonneg(entry.get("burst_prob", 0.0), "$.demand.burst_prob"),
            burst_factor=ck.positive(entry.get("burst_factor", 1.0), "$.demand.burst_factor"),
            burst_mean_duration=ck.positive(
                entry.get("burst_mean_duration", 5.0), "$.demand.burst_mean_duration"
            ),
        )
    return RoutingTopology(routers, links, commodities, demand)


def mlu(loads: np.ndarray, capacities: np.ndarray) -> float:
    """Maximum link utilization: max over links of load / capacity."""
    caps = np.asarray(capacities, dtype=np.float64)
    if np.any(caps <= 0):
        raise TopologyError("capacities must be strictly positive")
    return float(np.max(np.asarray(loads, dtype=np.float64) / caps))


class RoutingEnv:
    """Stepped flow-splitting environment over a fixed topology.

    Each agent's action concatenates one simplex per owned commodity
    (fractions over that commodity's candidate paths). Observations are,
    in order: the agent's buffered demands (divided by their configured
    means), per direct link the last ten utilization samples (oldest
    first, links in ascending id order), per direct link the mean
    utilization over the last completed control cycle, and the agent's
    previous action.
    """

    kind = "simplex"

    def __init__(self, topology: RoutingTopology, horizon: int, rng: np.random.Generator):
        self.topology = topology
        self.horizon = horizon
        self._rng = rng
        self.n_agents = len(topology.routers)
        self._owned = [topology.owned_commodities(r) for r in topology.routers]
        self._direct = [topology.direct_links(r) for r in topology.routers]
        self.action_blocks = [
            [len(topology.commodities[c].paths) for c in owned] for owned in self._owned
        ]
        self.action_dims = [sum(b) for b in self.action_blocks]
        self.obs_dims = [
            len(self._owned[i])
            + (UTIL_HISTORY + 1) * len(self._direct[i])
            + self.action_dims[i]
            for i in range(self.n_agents)
        ]
        self._caps = np.array([l.capacity for l in topology.links])
        self.reset()

    def reset(self) -> list[np.ndarray]:
        n_links = len(self.topology.links)
        self.t = 0
        self._util_history = np.zeros((UTIL_HISTORY, n_links))
        self._cycle_avg = np.zeros(n_links)
        self._cycle_accum: list[np.ndarray] = []
        self._last_actions = [self._uniform_action(i) for i in range(self.n_agents)]
        self._burst_left = np.zeros(len(self.topology.commodities), dtype=int)
        self._demands = self._draw_demands()
        self.last_flows: dict[int, float] = {}
        return self.observe_all()

    def _uniform_action(self, agent: int) -> np.ndarray:
        parts = [np.full(b, 1.0 / b) for b in self.action_blocks[agent]]
        return np.concatenate(parts) if parts else np.zeros(0)

    def _draw_demands(self) -> np.ndarray:
        dm = self.topology.demand
        out = np.zeros(len(self.topology.commodities))
        for ci, com in enumerate(self.topology.commodities):
            if dm.model == "poisson":
                if self._burst_left[ci] > 0:
                    self._burst_left[ci] -= 1
                elif dm.burst_prob > 0 and self._rng.uniform() < dm.burst_prob:
                    self._burst_left[ci] = 1 + self._rng.geometric(
                        1.0 / dm.burst_mean_duration
                    )
                rate = com.demand_mean * (dm.burst_factor if self._burst_left[ci] > 0 else 1.0)
                out[ci] = float(self._rng.poisson(rate))
            else:
                out[ci] = com.demand_mean
        return out

    def _validate_action(self, agent: int, action: np.ndarray) -> None:
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (self.action_dims[agent],):
            raise ActionError(
                f"agent {agent}: action shape {action.shape}, expected "
                f"({self.action_dims[agent]},)"
            )
        offset = 0
        for bi, width in enumerate(self.action_blocks[agent]):
            block = action[offset : offset + width]
            if np.any(block < -1e-9) or abs(block.sum() - 1.0) > 1e-6:
                raise ActionError(
                    f"agent {agent}, commodity block {bi}: fractions must be a "
                    f"simplex (got sum {block.sum():.9f})"
                )
            offset += width

    def step(self, actions: Sequence[np.ndarray]):
        """Route the buffered demands and return (obs, reward, done)."""
        if len(actions) != self.n_agents:
            raise ActionError(f"expected {self.n_agents} actions, got {len(actions)}")
        for i, a in enumerate(actions):
            self._validate_action(i, np.asarray(a))

        loads = np.zeros(len(self.topology.links))
        self.last_flows = {}
        for agent, owned in enumerate(self._owned):
            action = np.asarray(actions[agent], dtype=np.float64)
            offset = 0
            for block_idx, ci in enumerate(owned):
                com = self.topology.commodities[ci]
                width = len(com.paths)
                split = action[offset : offset + width]
                demand = self._demands[ci]
                routed = 0.0
                for frac, path in zip(split, com.paths):
                    flow = demand * frac
                    routed += flow
                    for lid in path:
                        loads[lid] += flow
                self.last_flows[ci] = routed
                offset += width

        utilization = loads / self._caps
        reward = 1.0 - mlu(loads, self._caps)

        self._util_history = np.vstack([self._util_history[1:], utilization[None, :]])
        self._cycle_accum.append(utilization)
        if len(self._cycle_accum) == CONTROL_CYCLE:
            self._cycle_avg = np.mean(self._cycle_accum, axis=0)
            self._cycle_accum = []
        self._last_actions = [np.asarray(a, dtype=np.float64).copy() for a in actions]
        self.t += 1
        done = self.t >= self.horizon
        self._demands = self._draw_demands()
        return self.observe_all(), reward, done

    def observe(self, agent: int) -> np.ndarray:
        if not 0 <= agent < self.n_agents:
            raise IndexError(f"agent index {agent} out of range")
        owned = self._owned[agent]
        demand_part = np.array(
            [
                self._demands[c] / max(self.topology.commodities[c].demand_mean, 1e-12)
                for c in owned
            ]
        )
        links = self._direct[agent]
        history_part = self._util_history[:, links].T.reshape(-1)  # per link, oldest first
        cycle_part = self._cycle_avg[links]
        return np.concatenate([demand_part, history_part, cycle_part, self._last_actions[agent]])

    def observe_all(self) -> list[np.ndarray]:
        return [self.observe(i) for i in range(self.n_agents)]

    def derive_graph(self) -> AgentGraph:
        return self.topology.derive_graph()
