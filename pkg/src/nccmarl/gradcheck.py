"""Verification suites: finite-difference gradient checks over every
differentiable operation and composite loss, plus reference-oracle
comparisons (Monte Carlo KL, dense GCN, exhaustive joint max, triple-loop
matmul, Adam recurrences). These back the ``gradcheck`` and ``oracle``
CLI commands and the acceptance tests."""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Optimizer, OptimizerConfig, Tape
from .cognition import CognitionHead, GaussianLatent, kl_diag_gaussians, sample
from .graph import AgentGraph, GcnLayer, gcn_forward
from .nccac import AcLearnerSettings, NccAcLearner
from .nccq import NccQLearner, QLearnerSettings, QNetConfig, mix, td_target
from .oracles import (
    adam_reference,
    exhaustive_joint_max,
    gcn_dense_reference,
    gradient_error,
    kl_monte_carlo,
    matmul_reference,
    mlu_reference,
    numeric_gradient,
)
from .replay import Transition
from .rng import derive_streams

GRAD_TOL = 1e-4
FD_STEP = 1e-5


@dataclass
class CheckResult:
    name: str
    trials: int
    worst: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance

    def line(self) -> str:
        status = "ok  " if self.passed else "FAIL"
        return (
            f"[{status}] {self.name}: worst {self.worst:.3e} "
            f"(tol {self.tolerance:.0e}, {self.trials} trials)"
        )


class _ReplayEps:
    """Generator stand-in that replays a fixed epsilon sequence, so a
    sampled forward pass becomes a deterministic function for FD probing."""

    def __init__(self, rng: np.random.Generator, shapes: list[tuple]) -> None:
        self.values = [rng.standard_normal(s) for s in shapes]
        self.cursor = 0

    def reset(self) -> None:
        self.cursor = 0

    def standard_normal(self, shape):
        value = self.values[self.cursor % len(self.values)]
        assert value.shape == tuple(shape)
        self.cursor += 1
        return value


def _fd_check(build_loss: Callable, params, rng, max_coords=8, step=FD_STEP) -> float:
    """Worst relative error between backward and central differences over
    a random coordinate subset of every given parameter."""
    worst = 0.0
    for p in params:
        with Tape():
            ad.backward(build_loss())
        grad = p.grad.reshape(-1).copy()
        ad.zero_grads(params)
        coords = (
            list(range(p.size))
            if p.size <= max_coords
            else rng.choice(p.size, size=max_coords, replace=False)
        )
        numeric = numeric_gradient(build_loss, p, step=step, coords=list(coords))
        worst = max(worst, gradient_error(grad[list(coords)], numeric))
    return worst


def _op_trial(kind: str, rng: np.random.Generator) -> float:
    shape = (int(rng.integers(1, 4)), int(rng.integers(2, 5)))
    if kind == "log":
        x = ad.parameter(rng.uniform(0.2, 3.0, size=shape))
    elif kind in ("relu", "clip"):
        x = ad.parameter(rng.uniform(0.05, 2.0, size=shape) * rng.choice([-1.0, 1.0], size=shape))
    else:
        x = ad.parameter(rng.standard_normal(shape))
    other = ad.constant(rng.standard_normal(shape))
    w = ad.constant(rng.standard_normal((shape[1], 3)))
    idx = rng.integers(0, shape[1], size=shape[0])
    axis = int(rng.integers(0, 2))
    bias = ad.constant(rng.standard_normal((1, shape[1])))
    builders = {
        "add": lambda: x + other,
        "sub": lambda: x - other,
        "mul": lambda: x * other,
        "negate": lambda: -x,
        "relu": lambda: ad.relu(x),
        "tanh": lambda: ad.tanh(x),
        "exp": lambda: ad.exp(x),
        "log": lambda: ad.log(x),
        "square": lambda: ad.square(x),
        "expm1": lambda: ad.expm1(x),
        "scale": lambda: ad.scale(x, -1.3),
        "add_scalar": lambda: ad.add_scalar(x, 0.7),
        "clip": lambda: ad.clip(x, -0.9, 0.9),
        "softmax": lambda: ad.softmax(x),
        "add_bias": lambda: ad.add_bias(x, bias),
        "gather": lambda: ad.gather(x, idx),
        "matmul": lambda: ad.matmul(x, w),
        "reduce_sum": lambda: ad.reduce("sum", x, axis=axis),
        "reduce_mean": lambda: ad.reduce("mean", x, axis=None),
        "slice_cols": lambda: ad.slice_cols(x, 0, max(1, shape[1] - 1)),
        "concat_cols": lambda: ad.concat_cols([x, ad.scale(x, 0.5)]),
        "sum_tensors": lambda: ad.sum_tensors([x, other, ad.scale(x, 2.0)]),
        "mse": lambda: ad.mse(x, other),
    }
    build = builders[kind]
    target = None

    def loss():
        out = build()
        nonlocal target
        if target is None:
            target = ad.constant(np.zeros(out.shape))
        return ad.tmean(ad.square(out - target)) if out.shape != () else out

    return _fd_check(loss, [x], rng, max_coords=min(8, x.size))


OP_KINDS = (
    "add", "sub", "mul", "negate", "relu", "tanh", "exp", "log", "square",
    "expm1", "scale", "add_scalar", "clip", "softmax", "add_bias", "gather",
    "matmul", "reduce_sum", "reduce_mean", "slice_cols", "concat_cols",
    "sum_tensors", "mse",
)


def _q_loss_trial(rng: np.random.Generator, mixing: bool) -> float:
    graph = AgentGraph.from_edges(3, [(0, 1), (1, 2)])
    streams = derive_streams(int(rng.integers(1 << 30)))
    cfg = QNetConfig(
        obs_dims=[4] * 3, n_actions=[3] * 3, hidden_dim=6, latent_dim=3,
        use_mixing=mixing,
    )
    learner = NccQLearner(
        cfg, graph,
        QLearnerSettings(batch_size=3, replay_capacity=10, alpha=0.1),
        streams,
    )
    obs = [rng.standard_normal((3, 4)) for _ in range(3)]
    actions = rng.integers(0, 3, size=(3, 3))
    y = rng.standard_normal((3, 1))
    eps = _ReplayEps(rng, [(3, 3)] * 3)

    def loss():
        eps.reset()
        fwd = learner.net.forward(obs, eval_mode=False, reparam_rng=eps)
        chosen = [ad.gather(fwd.q_values[i], actions[:, i]) for i in range(3)]
        if mixing:
            td = ad.tmean(ad.square(mix(chosen) - ad.constant(y)))
        else:
            td = ad.sum_tensors(
                [ad.tmean(ad.square(c - ad.constant(y))) for c in chosen]
            )
        from .cognition import cd_loss

        cd_terms = [
            cd_loss(
                i, [ad.constant(obs[i])], fwd.recons[i], fwd.latents[i],
                [fwd.latents[j] for j in graph.neighbors(i)],
            )
            for i in range(3)
        ]
        return td + ad.scale(ad.sum_tensors(cd_terms), 0.1)

    params = learner.net.params
    picked = [params[i] for i in rng.choice(len(params), size=4, replace=False)]
    return _fd_check(loss, picked, rng, max_coords=4, step=1e-6)


def _ac_critic_loss_trial(rng: np.random.Generator) -> float:
    graph = AgentGraph.complete(2)
    streams = derive_streams(int(rng.integers(1 << 30)))
    learner = NccAcLearner(
        graph, [4, 4], [[2], [2]],
        AcLearnerSettings(batch_size=3, replay_capacity=10, alpha=0.1),
        streams, hidden_dim=6, latent_dim=3,
    )
    obs_b = [rng.standard_normal((3, 4)) for _ in range(2)]
    act_b = [np.abs(rng.standard_normal((3, 2))) for _ in range(2)]
    act_b = [a / a.sum(axis=1, keepdims=True) for a in act_b]
    y = rng.standard_normal((3, 1))
    eps = _ReplayEps(rng, [(3, 3)])

    def loss():
        eps.reset()
        learner._reparam_rng = eps
        td, cd, _ = learner._critic_losses(0, obs_b, act_b, y)
        return td + ad.scale(cd, 0.1)

    params = learner.critics[0].params
    picked = [params[i] for i in rng.choice(len(params), size=4, replace=False)]
    return _fd_check(loss, picked, rng, max_coords=4, step=1e-6)


def _ac_actor_objective_trial(rng: np.random.Generator) -> float:
    graph = AgentGraph.complete(2)
    streams = derive_streams(int(rng.integers(1 << 30)))
    learner = NccAcLearner(
        graph, [4, 4], [[2], [2]],
        AcLearnerSettings(batch_size=3, replay_capacity=10),
        streams, hidden_dim=6, latent_dim=3,
    )
    obs_b = [rng.standard_normal((3, 4)) for _ in range(2)]
    frozen = learner.greedy_batch(1, obs_b[1])

    def loss():
        a0 = learner.actors[0](ad.constant(obs_b[0]))
        q = learner.critics[0].forward(obs_b, [a0, frozen], eval_mode=True).q
        return ad.negate(ad.tmean(q))

    return _fd_check(loss, learner.actors[0].params, rng, max_coords=4, step=1e-6)


def _reparam_path_trial(rng: np.random.Generator) -> float:
    mu = ad.parameter(rng.standard_normal((2, 3)))
    log_sigma = ad.parameter(rng.uniform(-1.0, 0.5, size=(2, 3)))
    eps = ad.constant(rng.standard_normal((2, 3)))
    target = ad.constant(rng.standard_normal((2, 3)))
    other = GaussianLatent(
        ad.constant(rng.uniform(-1, 1, (2, 3))), ad.constant(rng.uniform(-1, 0.5, (2, 3)))
    )

    def loss():
        latent = GaussianLatent(mu, log_sigma)
        drawn = sample(latent, eps)
        return ad.mse(drawn, target) + kl_diag_gaussians(latent, other)

    return _fd_check(loss, [mu, log_sigma], rng)


def _gcn_path_trial(rng: np.random.Generator) -> float:
    n = int(rng.integers(2, 5))
    adj = np.triu(rng.random((n, n)) < 0.5, k=1)
    graph = AgentGraph(adj | adj.T)
    layer = GcnLayer.create(3, 4, rng, activation="tanh")
    feats = [ad.parameter(rng.standard_normal((2, 3))) for _ in range(n)]

    def loss():
        outs = gcn_forward(layer, graph, feats)
        return ad.tmean(ad.sum_tensors([ad.square(o) for o in outs]))

    return _fd_check(loss, [layer.weight, feats[0]], rng, max_coords=6, step=1e-6)


def run_gradcheck_suite(seed: int = 0, trials: int = 100) -> list[CheckResult]:
    """Finite-difference checks over ops and composite losses."""
    results = []
    for kind in OP_KINDS:
        rng = np.random.default_rng([seed, zlib.crc32(kind.encode())])
        worst = max(_op_trial(kind, rng) for _ in range(trials))
        results.append(CheckResult(f"op.{kind}", trials, worst, GRAD_TOL))

    composite_trials = max(1, trials)
    composites = [
        ("loss.q_mixed_td_cd", lambda r: _q_loss_trial(r, mixing=True)),
        ("loss.q_independent_td", lambda r: _q_loss_trial(r, mixing=False)),
        ("loss.ac_critic_td_cd", _ac_critic_loss_trial),
        ("loss.ac_actor_objective", _ac_actor_objective_trial),
        ("loss.reparam_recon_kl", _reparam_path_trial),
        ("loss.gcn_path", _gcn_path_trial),
    ]
    for name, trial in composites:
        rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
        worst = max(trial(rng) for _ in range(composite_trials))
        results.append(CheckResult(name, composite_trials, worst, GRAD_TOL))
    return results


def run_oracle_suite(seed: int = 0) -> list[CheckResult]:
    """Reference-implementation comparisons for the core numeric paths."""
    results = []
    rng = np.random.default_rng(seed)

    # closed-form KL vs Monte Carlo, and KL(p||p) at zero
    worst_rel = 0.0
    dim = 4
    for _ in range(50):
        mu_p, mu_q = rng.uniform(-2, 2, dim), rng.uniform(-2, 2, dim)
        ls_p, ls_q = rng.uniform(-1, 0.7, dim), rng.uniform(-1, 0.7, dim)
        p = GaussianLatent(ad.constant(mu_p[None]), ad.constant(ls_p[None]))
        q = GaussianLatent(ad.constant(mu_q[None]), ad.constant(ls_q[None]))
        closed = kl_diag_gaussians(p, q).item()
        mc = kl_monte_carlo(mu_p, np.exp(ls_p), mu_q, np.exp(ls_q), 10**5, rng)
        worst_rel = max(worst_rel, abs(closed - mc) / max(abs(closed), 1e-3))
    results.append(CheckResult("oracle.kl_monte_carlo", 50, worst_rel, 0.01))

    worst_self = 0.0
    for _ in range(50):
        mu = rng.uniform(-2, 2, (1, dim))
        ls = rng.uniform(-1, 0.7, (1, dim))
        p = GaussianLatent(ad.constant(mu), ad.constant(ls))
        worst_self = max(worst_self, abs(kl_diag_gaussians(p, p).item()))
    results.append(CheckResult("oracle.kl_self_zero", 50, worst_self, 1e-12))

    # graph convolution vs the dense normalized-adjacency computation
    worst = 0.0
    perm_exact = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 9))
        adj = np.triu(rng.random((n, n)) < 0.5, k=1)
        graph = AgentGraph(adj | adj.T)
        d_in, d_out = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        w = rng.standard_normal((d_in, d_out))
        h = rng.standard_normal((n, d_in))
        layer = GcnLayer(ad.constant(w), activation="relu")
        out = gcn_forward(layer, graph, [ad.constant(h[i : i + 1]) for i in range(n)])
        stacked = np.vstack([o.data for o in out])
        ref = gcn_dense_reference(graph.adjacency, h, w, "relu")
        worst = max(worst, float(np.max(np.abs(stacked - ref))))
        if n >= 2:
            perm = rng.permutation(n)
            feats_p = [None] * n
            for i in range(n):
                feats_p[perm[i]] = ad.constant(h[i : i + 1])
            out_p = gcn_forward(layer, graph.permuted(perm), feats_p)
            for i in range(n):
                if not np.array_equal(out_p[perm[i]].data, out[i].data):
                    perm_exact = max(perm_exact, 1.0)
    results.append(CheckResult("oracle.gcn_dense", 200, worst, 1e-12))
    results.append(CheckResult("oracle.gcn_permutation_exact", 200, perm_exact, 0.5))

    # decomposed TD max vs exhaustive joint-action max on live networks
    worst_max = 0.0
    learner = None
    for trial in range(1000):
        if trial % 100 == 0:
            n_agents = int(rng.integers(2, 5))
            n_actions = int(rng.integers(2, 6))
            learner = NccQLearner(
                QNetConfig(
                    obs_dims=[3] * n_agents, n_actions=[n_actions] * n_agents,
                    hidden_dim=5, latent_dim=3,
                ),
                AgentGraph.complete(n_agents),
                QLearnerSettings(batch_size=2, replay_capacity=10),
                derive_streams(int(rng.integers(1 << 30))),
            )
        n_agents = learner.net.config.n_agents
        nxt = [rng.standard_normal((1, 3)) for _ in range(n_agents)]
        r = float(rng.uniform(-1, 1))
        y = td_target(learner.target, np.array([r]), nxt, np.array([False]), 1.0)
        with ad.no_grad():
            fwd = learner.target.forward(nxt, eval_mode=True)
        expected = r + exhaustive_joint_max([q.data[0] for q in fwd.q_values])
        worst_max = max(worst_max, abs(y[0, 0] - expected))
    results.append(CheckResult("oracle.decomposed_max", 1000, worst_max, 1e-15))

    # matmul vs scalar triple loop (bit-exact)
    worst_mm = 0.0
    for _ in range(200):
        m, k, n = (int(rng.integers(1, 6)) for _ in range(3))
        a, b = rng.standard_normal((m, k)), rng.standard_normal((k, n))
        got = ad.matmul(ad.constant(a), ad.constant(b)).data
        if not np.array_equal(got, matmul_reference(a, b)):
            worst_mm = 1.0
    results.append(CheckResult("oracle.matmul_triple_loop", 200, worst_mm, 0.5))

    # Adam vs the published recurrences
    worst_adam = 0.0
    for _ in range(20):
        start = rng.standard_normal(5)
        grads = [rng.standard_normal(5) for _ in range(15)]
        p = ad.parameter(start.copy())
        opt = Optimizer([p], OptimizerConfig(kind="adam", lr=0.02))
        for g in grads:
            p.grad = g.copy()
            opt.step()
        ref = adam_reference(start, grads, lr=0.02)
        worst_adam = max(worst_adam, float(np.max(np.abs(p.data - ref))))
    results.append(CheckResult("oracle.adam_recurrences", 20, worst_adam, 1e-13))

    # max link utilization vs plain loop
    from .envs import mlu

    worst_mlu = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 12))
        loads = rng.uniform(0, 5, n)
        caps = rng.uniform(0.5, 5, n)
        if mlu(loads, caps) != mlu_reference(loads, caps):
            worst_mlu = 1.0
    results.append(CheckResult("oracle.mlu_loop", 200, worst_mlu, 0.5))

    return results
