import json
from pathlib import Path

import numpy as np
import pytest

from nccmarl.envs import (
    ActionError,
    TopologyError,
    build_env,
    derive_neighborhoods,
    load_routing_topology,
    load_topology,
    load_wifi_topology,
    mlu,
)
from nccmarl.envs.routing import Commodity, DemandModel, Link, RoutingEnv, RoutingTopology
from nccmarl.envs.wifi import POWER_MAX, POWER_MIN, WifiEnv
from nccmarl.oracles import mlu_reference

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def two_path_topology(capacities=(10.0, 10.0), demand=10.0, model="constant"):
    return RoutingTopology(
        routers=["r0"],
        links=[Link("r0", "t", capacities[0]), Link("r0", "t", capacities[1])],
        commodities=[Commodity("r0", "t", [[0], [1]], demand)],
        demand=DemandModel(model=model),
    )


def make_routing(topology=None, horizon=10, seed=0):
    topo = topology or two_path_topology()
    return RoutingEnv(topo, horizon, np.random.default_rng(seed))


class TestMlu:
    def test_loads_equal_capacities(self):
        assert mlu(np.array([2.0, 5.0]), np.array([2.0, 5.0])) == 1.0

    def test_zero_loads(self):
        assert mlu(np.zeros(3), np.ones(3)) == 0.0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            n = int(rng.integers(1, 10))
            loads = rng.uniform(0, 5, n)
            caps = rng.uniform(0.5, 5, n)
            assert mlu(loads, caps) == mlu_reference(loads, caps)

    def test_nonpositive_capacity_rejected(self):
        with pytest.raises(TopologyError):
            mlu(np.array([1.0]), np.array([0.0]))


class TestRoutingStep:
    def test_zero_demand_gives_full_reward(self):
        env = make_routing(two_path_topology(demand=0.0))
        _, reward, _ = env.step([np.array([0.5, 0.5])])
        assert reward == 1.0

    def test_saturating_single_path_gives_zero_reward(self):
        env = make_routing(two_path_topology(capacities=(10.0, 10.0), demand=10.0))
        _, reward, _ = env.step([np.array([1.0, 0.0])])
        assert reward == 0.0

    def test_even_split_hand_accounting(self):
        env = make_routing()
        _, reward, _ = env.step([np.array([0.5, 0.5])])
        # loads (5, 5) over capacities (10, 10): utilization 0.5
        assert reward == pytest.approx(0.5)

    def test_invalid_simplex_rejected(self):
        env = make_routing()
        with pytest.raises(ActionError):
            env.step([np.array([0.9, 0.9])])
        with pytest.raises(ActionError):
            env.step([np.array([1.5, -0.5])])

    def test_flow_conservation(self):
        rng = np.random.default_rng(2)
        topo = load_routing_topology(CONFIGS / "topo_routing_small.json")
        env = RoutingEnv(topo, horizon=50, rng=np.random.default_rng(3))
        for _ in range(20):
            demands = env._demands.copy()
            actions = []
            for blocks in env.action_blocks:
                parts = []
                for width in blocks:
                    raw = rng.uniform(0.1, 1.0, width)
                    parts.append(raw / raw.sum())
                actions.append(np.concatenate(parts))
            env.step(actions)
            for ci, injected in enumerate(demands):
                assert env.last_flows[ci] == pytest.approx(injected, abs=1e-9)

    def test_reward_upper_bound(self):
        rng = np.random.default_rng(4)
        env = make_routing(two_path_topology(capacities=(1.0, 1.0), demand=10.0))
        for _ in range(5):
            raw = rng.uniform(0.1, 1.0, 2)
            _, reward, _ = env.step([raw / raw.sum()])
            assert reward <= 1.0

    def test_horizon_termination(self):
        env = make_routing(horizon=3)
        done = False
        for step in range(3):
            _, _, done = env.step([np.array([0.5, 0.5])])
        assert done

    def test_demand_trace_deterministic(self):
        topo = load_routing_topology(CONFIGS / "topo_routing_small.json")
        traces = []
        for _ in range(2):
            env = RoutingEnv(topo, horizon=30, rng=np.random.default_rng(11))
            tr = [env._demands.copy()]
            for _ in range(10):
                env.step([env._uniform_action(i) for i in range(env.n_agents)])
                tr.append(env._demands.copy())
            traces.append(np.vstack(tr))
        assert np.array_equal(traces[0], traces[1])


class TestRoutingObserve:
    def test_fresh_reset_contract(self):
        env = make_routing()
        obs = env.observe(0)
        # demand (1, normalized) + 10-step history (2 links) + cycle avg (2) + action (2)
        assert obs.shape == (1 + 10 * 2 + 2 + 2,)
        assert obs[0] == pytest.approx(1.0)  # constant demand / mean
        assert np.all(obs[1:23] == 0.0)  # histories and cycle averages
        assert np.allclose(obs[23:], [0.5, 0.5])  # uniform last action

    def test_observation_length_formula(self):
        topo = load_routing_topology(CONFIGS / "topo_routing_bottleneck2.json")
        env = RoutingEnv(topo, horizon=10, rng=np.random.default_rng(0))
        for i, router in enumerate(topo.routers):
            n_com = len(topo.owned_commodities(router))
            n_links = len(topo.direct_links(router))
            expected = n_com + 10 * n_links + n_links + env.action_dims[i]
            assert env.obs_dims[i] == expected
            assert env.observe(i).shape == (expected,)

    def test_locality_under_nonadjacent_perturbation(self):
        # two disconnected routers: r1's action can never touch r0's links
        topo = RoutingTopology(
            routers=["r0", "r1"],
            links=[
                Link("r0", "t0", 10.0), Link("r0", "t0", 10.0),
                Link("r1", "t1", 10.0), Link("r1", "t1", 10.0),
            ],
            commodities=[
                Commodity("r0", "t0", [[0], [1]], 5.0),
                Commodity("r1", "t1", [[2], [3]], 5.0),
            ],
        )
        runs = []
        for r1_action in (np.array([1.0, 0.0]), np.array([0.2, 0.8])):
            env = RoutingEnv(topo, horizon=10, rng=np.random.default_rng(5))
            obs_trace = []
            for _ in range(5):
                obs, _, _ = env.step([np.array([0.7, 0.3]), r1_action.copy()])
                obs_trace.append(obs[0].copy())
            runs.append(np.vstack(obs_trace))
        assert np.array_equal(runs[0], runs[1])


class TestRoutingSchema:
    def write(self, tmp_path, payload):
        p = tmp_path / "topo.json"
        p.write_text(json.dumps(payload))
        return p

    def base(self):
        return {
            "routers": ["r0"],
            "links": [{"from": "r0", "to": "t", "capacity": 1.0}],
            "commodities": [{"src": "r0", "dst": "t", "paths": [[0]]}],
        }

    def test_valid_file_loads(self, tmp_path):
        topo = load_routing_topology(self.write(tmp_path, self.base()))
        assert topo.routers == ["r0"]

    def test_unknown_key_rejected(self, tmp_path):
        payload = self.base()
        payload["surprise"] = 1
        with pytest.raises(TopologyError, match="surprise"):
            load_routing_topology(self.write(tmp_path, payload))

    def test_bad_capacity_addressed(self, tmp_path):
        payload = self.base()
        payload["links"][0]["capacity"] = -2
        with pytest.raises(TopologyError, match=r"links\[0\].capacity"):
            load_routing_topology(self.write(tmp_path, payload))

    def test_disconnected_path_addressed(self, tmp_path):
        payload = self.base()
        payload["links"].append({"from": "x", "to": "y", "capacity": 1.0})
        payload["commodities"][0]["paths"] = [[1]]
        with pytest.raises(TopologyError, match=r"paths\[0\]\[0\]"):
            load_routing_topology(self.write(tmp_path, payload))

    def test_router_without_commodity_rejected(self, tmp_path):
        payload = self.base()
        payload["routers"].append("idle")
        with pytest.raises(TopologyError, match="idle"):
            load_routing_topology(self.write(tmp_path, payload))

    def test_syntax_error_reports_line(self, tmp_path):
        p = tmp_path / "broken.json"
        p.write_text('{\n  "routers": [,]\n}')
        with pytest.raises(TopologyError, match="line 2"):
            load_routing_topology(p)


class TestDeriveNeighborhoods:
    def test_line_routing_topology(self):
        topo = RoutingTopology(
            routers=["a", "b", "c"],
            links=[Link("a", "b", 1.0), Link("b", "c", 1.0), Link("c", "b", 1.0)],
            commodities=[
                Commodity("a", "b", [[0]], 1.0),
                Commodity("b", "c", [[1]], 1.0),
                Commodity("c", "b", [[2]], 1.0),
            ],
        )
        graph = derive_neighborhoods(topo)
        assert graph.neighbors(1) == (0, 2)

    def test_wifi_beyond_cutoff_isolated(self):
        topo = load_wifi_topology(CONFIGS / "topo_wifi_line3.json")
        graph = derive_neighborhoods(topo)
        assert graph.neighbors(0) == (1,)
        assert graph.neighbors(1) == (0, 2)
        assert 2 not in graph.neighbors(0)

    def test_fixture_matches_hand_written_adjacency(self):
        topo = load_routing_topology(CONFIGS / "topo_routing_bottleneck2.json")
        graph = derive_neighborhoods(topo)
        # the standby interconnect r0-r1 makes the two agents adjacent
        assert np.array_equal(
            graph.adjacency, np.array([[False, True], [True, False]])
        )


class TestWifi:
    def make(self, seed=0, horizon=20):
        topo = load_wifi_topology(CONFIGS / "topo_wifi_line3.json")
        return WifiEnv(topo, horizon, np.random.default_rng(seed))

    def test_isolated_ap_reward_increasing_in_power(self):
        topo = load_wifi_topology(CONFIGS / "topo_wifi_line3.json")
        topo = type(topo)(
            ap_ids=["solo"], positions=np.zeros((1, 2)), cutoff_radius=1.0,
            channels=3, interference_strength=0.9,
        )
        env = WifiEnv(topo, 10, np.random.default_rng(0))
        rewards = [env.reward_for_powers([p]) for p in range(POWER_MIN, POWER_MAX + 1)]
        assert all(b > a for a, b in zip(rewards, rewards[1:]))

    def test_symmetric_pair_reward_symmetric_under_swap(self):
        topo = load_wifi_topology(CONFIGS / "topo_wifi_line3.json")
        pair = type(topo)(
            ap_ids=["a", "b"], positions=np.array([[0.0, 0.0], [0.5, 0.0]]),
            cutoff_radius=1.9, channels=2, interference_strength=0.9,
        )
        env = WifiEnv(pair, 10, np.random.default_rng(0))
        for p0, p1 in [(10, 30), (15, 22), (30, 11)]:
            assert env.reward_for_powers([p0, p1]) == pytest.approx(
                env.reward_for_powers([p1, p0])
            )

    def test_reward_bounds(self):
        env = self.make()
        rng = np.random.default_rng(7)
        for _ in range(50):
            powers = rng.integers(POWER_MIN, POWER_MAX + 1, size=3)
            r = env.reward_for_powers(powers.tolist())
            assert 0.0 <= r <= 1.0

    def test_out_of_range_power_rejected(self):
        env = self.make()
        with pytest.raises(ActionError):
            env.step([9, 20, 20])
        with pytest.raises(ActionError):
            env.step([31, 20, 20])

    def test_observation_has_nine_fields(self):
        env = self.make()
        obs = env.reset()
        assert all(o.shape == (9,) for o in obs)
        assert env.obs_dims == [9, 9, 9]

    def test_interference_coefficients_properties(self):
        topo = load_wifi_topology(CONFIGS / "topo_wifi_small.json")
        c = topo.interference()
        assert np.array_equal(c, c.T)
        assert np.all(c >= 0.0) and np.all(c <= 1.0)
        assert np.all(np.diag(c) == 0.0)

    def test_step_determinism(self):
        obs1 = []
        obs2 = []
        for store in (obs1, obs2):
            env = self.make(seed=9)
            for _ in range(10):
                o, r, _ = env.step([20, 25, 15])
                store.append((np.concatenate(o), r))
        for (oa, ra), (ob, rb) in zip(obs1, obs2):
            assert np.array_equal(oa, ob) and ra == rb


def test_load_topology_dispatch_and_build(tmp_path):
    for kind, name in [
        ("routing", "topo_routing_small.json"),
        ("wifi", "topo_wifi_line3.json"),
        ("bandit", "topo_bandit2.json"),
    ]:
        topo = load_topology(kind, CONFIGS / name)
        env = build_env(kind, topo, horizon=5, rng=np.random.default_rng(0))
        obs = env.reset()
        assert len(obs) == env.n_agents
    with pytest.raises(TopologyError):
        load_topology("maze", CONFIGS / "topo_bandit2.json")


def test_bandit_reward_rule():
    topo = load_topology("bandit", CONFIGS / "topo_bandit2.json")
    env = build_env("bandit", topo, horizon=3, rng=np.random.default_rng(0))
    env.reset()
    _, r, _ = env.step([0, 0])
    assert r == 1.0
    _, r, _ = env.step([0, 1])
    assert r == 0.0
