"""Synthetic wifi power-configuration environment.

Access points pick an integer transmit power; the shared reward is the
mean received signal quality, where each AP's signal grows (with
diminishing returns) in its own power and is degraded by the
distance-weighted powers of nearby APs. Interference coefficients decay
linearly to zero at the cutoff radius.

Topology files are JSON::

    {
      "aps": [{"id": "ap0", "x": 0.0, "y": 0.0}, ...],
      "cutoff_radius": 1.5,
      "channels": 12,
      "interference_strength": 0.8,
      "load": {"mean": 1.0, "volatility": 0.1}
    }

``interference_strength`` and ``load`` are optional. Observations expose
the nine per-AP telemetry fields of a production controller (frequency,
bandwidth, loss rate, band count, users, bytes, two speeds, latency),
populated by the synthetic model and normalized to unit scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..graph import AgentGraph
from ._schema import ActionError, Checker, TopologyError, load_json_file

POWER_MIN = 10
POWER_MAX = 30
N_POWER_LEVELS = POWER_MAX - POWER_MIN + 1
OBS_FIELDS = 9



@dataclass
class LoadModel:
    mean: float = 1.0
    volatility: float = 0.1


@dataclass
class WifiTopology:
    ap_ids: list[str]
    positions: np.ndarray  # (n, 2)
    cutoff_radius: float
    channels: int
    interference_strength: float = 0.6
    load: LoadModel = field(default_factory=LoadModel)

    def interference(self) -> np.ndarray:
        """Symmetric coefficients in [0, 1], zero at/beyond the cutoff."""
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=-1))
        coeff = np.clip(1.0 - dist / self.cutoff_radius, 0.0, 1.0)
        np.fill_diagonal(coeff, 0.0)
        return coeff

    def derive_graph(self) -> AgentGraph:
        """APs are adjacent iff they interfere (distance under the cutoff)."""
        return AgentGraph(self.interference() > 0.0)


def load_wifi_topology(path) -> WifiTopology:
    raw = load_json_file(path)
    ck = Checker(str(path))
    ck.obj(
        raw, "$",
        {"aps": list, "cutoff_radius": float, "channels": int},
        {"interference_strength": float, "load": dict},
    )
    if not raw["aps"]:
        raise ck.fail("$.aps", "needs at least one access point")
    ids, xy = [], []
    for i, entry in enumerate(raw["aps"]):
        ck.obj(entry, f"$.aps[{i}]", {"id": str, "x": float, "y": float})
        ids.append(entry["id"])
        xy.append((float(entry["x"]), float(entry["y"])))
    if len(set(ids)) != len(ids):
        raise ck.fail("$.aps", "ids must be unique")
    cutoff = ck.positive(raw["cutoff_radius"], "$.cutoff_radius")
    channels = raw["channels"]
    if channels < 1:
        raise ck.fail("$.channels", "must be at least 1")
    strength = ck.nonneg(raw.get("interference_strength", 0.6), "$.interference_strength")
    if strength > 1.0:
        raise ck.fail("$.interference_strength", "must be at most 1")
    load = LoadModel()
    if "load" in raw:
        entry = ck.obj(raw["load"], "$.load", {}, {"mean": float, "volatility": float})
        load = LoadModel(
            mean=ck.positive(entry.get("mean", 1.0), "$.load.mean"),
            volatility=ck.nonneg(entry.get("volatility", 0.1), "$.load.volatility"),
        )
    return WifiTopology(ids, np.array(xy), cutoff, channels, strength, load)


class WifiEnv:
    """Power selection with interference-coupled reward.

    Native actions are integer powers in [POWER_MIN, POWER_MAX]; agents
    working with categorical indices convert through ``to_native``.
    """

    kind = "discrete"

    def __init__(self, topology: WifiTopology, horizon: int, rng: np.random.Generator):
        self.topology = topology
        self.horizon = horizon
        self._rng = rng
        self.n_agents = len(topology.ap_ids)
        self.n_actions = [N_POWER_LEVELS] * self.n_agents
        self.obs_dims = [OBS_FIELDS] * self.n_agents
        self._coeff = topology.interference()
        self._channel = np.arange(self.n_agents) % topology.channels
        self._bandwidth = 0.5 + 0.5 * (np.arange(self.n_agents) % 2)
        self._bands = 0.5 + 0.5 * (np.arange(self.n_agents) % 2 == 0)
        self.reset()

    def to_native(self, actions: Sequence[int]) -> list[int]:
        """Map categorical indices 0..20 onto powers 10..30."""
        return [POWER_MIN + int(a) for a in actions]

    def reset(self) -> list[np.ndarray]:
        self.t = 0
        self._load = np.full(self.n_agents, self.topology.load.mean)
        self._last_powers = np.full(self.n_agents, (POWER_MIN + POWER_MAX) // 2)
        return self.observe_all()

    def reward_for_powers(self, powers: Sequence[int]) -> float:
        """Deterministic shared reward for a joint power choice."""
        p = self._validated(powers)
        s = (p - POWER_MIN) / (POWER_MAX - POWER_MIN)
        interference = self._coeff @ s
        rssi = np.clip(np.sqrt(s) - self.topology.interference_strength * interference, 0.0, 1.0)
        return float(np.mean(rssi))

    def _validated(self, powers: Sequence[int]) -> np.ndarray:
        if len(powers) != self.n_agents:
            raise ActionError(f"expected {self.n_agents} powers, got {len(powers)}")
        p = np.asarray(powers)
        if p.dtype.kind not in "iu":
            raise ActionError("powers must be integers")
        if np.any(p < POWER_MIN) or np.any(p > POWER_MAX):
            raise ActionError(
                f"powers must lie in [{POWER_MIN}, {POWER_MAX}], got {p.tolist()}"
            )
        return p.astype(np.float64)

    def step(self, powers: Sequence[int]):
        reward = self.reward_for_powers(powers)
        self._last_powers = np.asarray(powers, dtype=int)
        vol = self.topology.load.volatility
        drift = self._rng.standard_normal(self.n_agents) * vol
        self._load = np.clip(
            0.9 * self._load + 0.1 * self.topology.load.mean + drift, 0.0, 2.0 * self.topology.load.mean
        )
        self.t += 1
        return self.observe_all(), reward, self.t >= self.horizon

    def observe(self, agent: int) -> np.ndarray:
        s = (self._last_powers - POWER_MIN) / (POWER_MAX - POWER_MIN)
        interference = float(self._coeff[agent] @ s)
        load = self._load[agent] / (2.0 * self.topology.load.mean)
        loss_rate = (interference / (1.0 + interference)) * (0.5 + 0.5 * load)
        throughput = s[agent] * (1.0 - loss_rate)
        return np.array(
            [
                self._channel[agent] / self.topology.channels,  # radio frequency
                self._bandwidth[agent],  # bandwidth
                loss_rate,  # packet loss rate
                self._bands[agent],  # number of bands
                load,  # users in band
                throughput * load,  # download bytes over the window
                0.5 * (1.0 - loss_rate),  # upload speed
                throughput,  # download speed
                np.clip(load * (1.0 + interference) / 2.0, 0.0, 1.0),  # latency
            ]
        )

    def observe_all(self) -> list[np.ndarray]:
        return [self.observe(i) for i in range(self.n_agents)]

    def derive_graph(self) -> AgentGraph:
        return self.topology.derive_graph()
