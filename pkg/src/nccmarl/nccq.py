"""Joint Q-learning with additive value mixing and neighborhood cognition.

One flag-driven network covers the whole variant family:

* ``NCC_Q``   - GCN + cognition, neighbor-KL dissonance loss
* ``GRAPH_Q`` - same network, dissonance weight forced to zero
* ``GCC_Q``   - dissonance KL against a single unit-Gaussian prior
* ``VDN``     - GCN and cognition bypassed, additive mixing kept
* ``IDQN``    - mixing bypassed as well (independent per-agent TD)

Bypassed modules are never constructed, so a variant label and the
equivalent explicit flag settings consume the random streams identically
and produce bit-identical runs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Optimizer, OptimizerConfig, Tape, Tensor
from .cognition import CognitionHead, GaussianLatent, cd_loss, kl_value, sample
from .graph import AgentGraph, GcnLayer, gcn_forward
from .layers import Dense, Mlp
from .replay import ReplayBuffer, Transition
from .rng import RngStreams

logger = logging.getLogger(__name__)

Q_VARIANTS = ("NCC_Q", "GRAPH_Q", "GCC_Q", "VDN", "IDQN")


def variant_flags(variant: str) -> dict:
    """Module toggles implied by a Q-variant label."""
    table = {
        "NCC_Q": dict(use_gcn=True, use_cognition=True, use_mixing=True,
                      cd_mode="neighborhood", force_alpha_zero=False),
        "GRAPH_Q": dict(use_gcn=True, use_cognition=True, use_mixing=True,
                        cd_mode="neighborhood", force_alpha_zero=True),
        "GCC_Q": dict(use_gcn=True, use_cognition=True, use_mixing=True,
                      cd_mode="global_unit", force_alpha_zero=False),
        "VDN": dict(use_gcn=False, use_cognition=False, use_mixing=True,
                    cd_mode="neighborhood", force_alpha_zero=True),
        "IDQN": dict(use_gcn=False, use_cognition=False, use_mixing=False,
                     cd_mode="neighborhood", force_alpha_zero=True),
    }
    if variant not in table:
        raise ValueError(f"unknown Q variant '{variant}' (one of {Q_VARIANTS})")
    return table[variant]


@dataclass
class QNetConfig:
    """Architecture of the per-agent Q networks and shared modules."""

    obs_dims: list[int]
    n_actions: list[int]
    hidden_dim: int = 32
    latent_dim: int = 16
    use_gcn: bool = True
    use_cognition: bool = True
    use_mixing: bool = True
    cd_mode: str = "neighborhood"
    share_encoders: bool = False
    gcn_activation: str = "relu"

    @property
    def n_agents(self) -> int:
        return len(self.obs_dims)


@dataclass
class QForward:
    """Everything one forward pass produces: action values plus the
    cognition byproducts needed for the dissonance loss and diagnostics."""

    q_values: list[Tensor]  # per agent (B, n_actions_i)
    latents: list[Optional[GaussianLatent]]
    recons: list[Optional[list[Tensor]]]


class NccQNet:
    """Per-agent encoders and Q heads around shared GCN/cognition modules."""

    def __init__(self, config: QNetConfig, graph: AgentGraph, rng: np.random.Generator):
        if graph.n_agents != config.n_agents:
            raise ValueError(
                f"graph has {graph.n_agents} agents, config {config.n_agents}"
            )
        if config.share_encoders:
            if len(set(config.obs_dims)) != 1 or len(set(config.n_actions)) != 1:
                raise ValueError("share_encoders requires homogeneous obs/action dims")
        if config.use_cognition and len(set(config.obs_dims)) != 1:
            raise ValueError(
                "the shared cognition decoder reconstructs observations, which "
                f"requires equal obs dims across agents; got {config.obs_dims}"
            )
        self.config = config
        self.graph = graph
        n = config.n_agents

        if config.share_encoders:
            shared_enc = Dense(config.obs_dims[0], config.hidden_dim, rng)
            self.encoders = [shared_enc] * n
        else:
            self.encoders = [Dense(d, config.hidden_dim, rng) for d in config.obs_dims]

        self.gcn = (
            GcnLayer.create(config.hidden_dim, config.hidden_dim, rng, config.gcn_activation)
            if config.use_gcn
            else None
        )
        self.cognition = (
            CognitionHead(
                config.hidden_dim,
                config.latent_dim,
                recon_dims=[config.obs_dims[0]],
                decoder_hidden=config.hidden_dim,
                rng=rng,
            )
            if config.use_cognition
            else None
        )

        q_in = config.latent_dim if config.use_cognition else config.hidden_dim
        if config.share_encoders:
            shared_head = Mlp([q_in, config.hidden_dim, config.n_actions[0]], rng)
            self.q_heads = [shared_head] * n
        else:
            self.q_heads = [
                Mlp([q_in, config.hidden_dim, a], rng) for a in config.n_actions
            ]

    def forward(
        self,
        obs: Sequence[np.ndarray],
        eval_mode: bool,
        reparam_rng: Optional[np.random.Generator] = None,
    ) -> QForward:
        """Compute per-agent action values from a batch of observations.

        ``eval_mode`` uses latent means; otherwise one reparameterization
        draw is taken per agent, in agent order, from ``reparam_rng``.
        """
        cfg = self.config
        feats = [
            ad.relu(self.encoders[i](ad.constant(np.atleast_2d(obs[i]))))
            for i in range(cfg.n_agents)
        ]
        if self.gcn is not None:
            feats = gcn_forward(self.gcn, self.graph, feats)

        latents: list[Optional[GaussianLatent]] = [None] * cfg.n_agents
        recons: list[Optional[list[Tensor]]] = [None] * cfg.n_agents
        q_values = []
        for i in range(cfg.n_agents):
            if self.cognition is not None:
                agent_vec, latent = self.cognition.encode(feats[i])
                if eval_mode:
                    eps = np.zeros(latent.mu.shape)
                else:
                    if reparam_rng is None:
                        raise ValueError("training forward needs a reparam generator")
                    eps = reparam_rng.standard_normal(latent.mu.shape)
                drawn = sample(latent, eps)
                latents[i] = latent
                recons[i] = self.cognition.reconstruct(drawn)
                q_in = agent_vec + drawn
            else:
                q_in = feats[i]
            q_values.append(self.q_heads[i](q_in))
        return QForward(q_values, latents, recons)

    @property
    def params(self) -> list[Tensor]:
        seen: list[Tensor] = []
        for t in self._named():
            if all(t[1] is not s for s in seen):
                seen.append(t[1])
        return seen

    def _named(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, enc in enumerate(self.encoders):
            if self.config.share_encoders and i > 0:
                break
            out += [(f"encoder{i}.w", enc.weight), (f"encoder{i}.b", enc.bias)]
        if self.gcn is not None:
            out.append(("gcn.w", self.gcn.weight))
        if self.cognition is not None:
            cog = self.cognition
            for tag, layer in (
                ("agent", cog.agent_layer), ("mu", cog.mu_layer), ("logsigma", cog.log_sigma_layer),
            ):
                out += [(f"cog.{tag}.w", layer.weight), (f"cog.{tag}.b", layer.bias)]
            for d, dec in enumerate(cog.decoders):
                for k, lay in enumerate(dec.layers):
                    out += [(f"cog.dec{d}.l{k}.w", lay.weight), (f"cog.dec{d}.l{k}.b", lay.bias)]
        for i, head in enumerate(self.q_heads):
            if self.config.share_encoders and i > 0:
                break
            for k, lay in enumerate(head.layers):
                out += [(f"qhead{i}.l{k}.w", lay.weight), (f"qhead{i}.l{k}.b", lay.bias)]
        return out

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self._named()}

    def copy_from(self, other: "NccQNet") -> None:
        for (na, a), (nb, b) in zip(self._named(), other._named()):
            assert na == nb
            a.data[...] = b.data


def mix(per_agent_q: Sequence[Tensor]) -> Tensor:
    """Additive joint value: the sum of the chosen per-agent values."""
    return ad.sum_tensors(list(per_agent_q))


def td_target(
    target_net: NccQNet,
    rewards: np.ndarray,
    next_obs: Sequence[np.ndarray],
    terminals: np.ndarray,
    gamma: float,
) -> np.ndarray:
    """Bootstrapped (batch, 1) target for the mixed value.

    Additive mixing lets the joint max decompose into per-agent maxima.
    Computed entirely from target parameters with latent means; terminal
    rows bootstrap nothing.
    """
    with ad.no_grad():
        nxt = target_net.forward(next_obs, eval_mode=True)
    per_agent_max = np.stack([q.data.max(axis=1) for q in nxt.q_values])
    cont = 1.0 - terminals.astype(np.float64)
    return (rewards + gamma * cont * per_agent_max.sum(axis=0))[:, None]


def td_targets_independent(
    target_net: NccQNet,
    rewards: np.ndarray,
    next_obs: Sequence[np.ndarray],
    terminals: np.ndarray,
    gamma: float,
) -> list[np.ndarray]:
    """Per-agent (batch, 1) targets for the unmixed variant."""
    with ad.no_grad():
        nxt = target_net.forward(next_obs, eval_mode=True)
    cont = 1.0 - terminals.astype(np.float64)
    return [
        (rewards + gamma * cont * q.data.max(axis=1))[:, None] for q in nxt.q_values
    ]


@dataclass
class QLearnerSettings:
    gamma: float = 0.98
    alpha: float = 0.1
    batch_size: int = 32
    target_sync_interval: int = 200
    replay_capacity: int = 100_000
    stop_grad_neighbor_kl: bool = False
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)


class NccQLearner:
    """Online/target net pair, replay buffer, and the combined training step."""

    def __init__(
        self,
        net_config: QNetConfig,
        graph: AgentGraph,
        settings: QLearnerSettings,
        streams: RngStreams,
    ) -> None:
        self.graph = graph
        self.settings = settings
        self.net = NccQNet(net_config, graph, streams.init)
        self.target = NccQNet(net_config, graph, np.random.default_rng(0))
        self.target.copy_from(self.net)
        self.optimizer = Optimizer(self.net.params, settings.optimizer)
        self.buffer = ReplayBuffer(settings.replay_capacity, streams.replay)
        self._explore_rng = streams.explore
        self._reparam_rng = streams.reparam
        self.train_steps = 0
        self._warned_underfilled = False
        self._inject_nan_once = False

    @property
    def n_agents(self) -> int:
        return self.net.config.n_agents

    def act(self, obs: Sequence[np.ndarray], epsilon: float) -> list[int]:
        """Epsilon-greedy joint action; one uniform draw per agent, in order."""
        with ad.no_grad():
            fwd = self.net.forward([o[None, :] for o in obs], eval_mode=True)
        actions = []
        for i, q in enumerate(fwd.q_values):
            if self._explore_rng.uniform() < epsilon:
                actions.append(int(self._explore_rng.integers(q.shape[1])))
            else:
                actions.append(int(np.argmax(q.data[0])))
        return actions

    def greedy(self, obs: Sequence[np.ndarray]) -> list[int]:
        """Deterministic evaluation policy; touches no random stream."""
        with ad.no_grad():
            fwd = self.net.forward([o[None, :] for o in obs], eval_mode=True)
        return [int(np.argmax(q.data[0])) for q in fwd.q_values]

    def observe(self, transition: Transition) -> None:
        self.buffer.add(transition)

    def inject_nan_once(self) -> None:
        """Testing hook: poison the next training loss with NaN."""
        self._inject_nan_once = True

    def train_step(self) -> Optional[dict]:
        """One gradient step on the combined loss; None while warming up."""
        s = self.settings
        if len(self.buffer) < s.batch_size:
            if not self._warned_underfilled:
                logger.warning(
                    "replay buffer holds %d < batch size %d; skipping training",
                    len(self.buffer), s.batch_size,
                )
                self._warned_underfilled = True
            return None
        batch = self.buffer.sample(s.batch_size)
        n = self.n_agents
        obs_b = [np.stack([t.obs[i] for t in batch]) for i in range(n)]
        next_obs_b = [np.stack([t.next_obs[i] for t in batch]) for i in range(n)]
        actions = np.array([[t.actions[i] for i in range(n)] for t in batch], dtype=np.intp)
        rewards = np.array([t.reward for t in batch])
        terminals = np.array([t.terminal for t in batch])

        cfg = self.net.config
        if cfg.use_mixing:
            y = td_target(self.target, rewards, next_obs_b, terminals, s.gamma)
        else:
            ys = td_targets_independent(self.target, rewards, next_obs_b, terminals, s.gamma)

        with Tape():
            fwd = self.net.forward(obs_b, eval_mode=False, reparam_rng=self._reparam_rng)
            chosen = [ad.gather(fwd.q_values[i], actions[:, i]) for i in range(n)]
            if cfg.use_mixing:
                q_total = mix(chosen)
                td = ad.tmean(ad.square(q_total - ad.constant(y)))
            else:
                per_agent = [
                    ad.tmean(ad.square(chosen[i] - ad.constant(ys[i]))) for i in range(n)
                ]
                td = ad.sum_tensors(per_agent)

            cd_total = None
            if cfg.use_cognition:
                cd_terms = [
                    cd_loss(
                        i,
                        [ad.constant(obs_b[i])],
                        fwd.recons[i],
                        fwd.latents[i],
                        [fwd.latents[j] for j in self.graph.neighbors(i)],
                        mode=cfg.cd_mode,
                        stop_grad_neighbors=s.stop_grad_neighbor_kl,
                    )
                    for i in range(n)
                ]
                cd_total = ad.sum_tensors(cd_terms) if len(cd_terms) > 1 else cd_terms[0]

            loss = td if (cd_total is None or s.alpha == 0.0) else td + ad.scale(cd_total, s.alpha)
            if self._inject_nan_once:
                loss = ad.scale(loss, float("nan"))
                self._inject_nan_once = False
            ad.backward(loss)
        self.optimizer.step()
        self.train_steps += 1
        if self.train_steps % s.target_sync_interval == 0:
            self.sync_target()

        metrics = {
            "loss": loss.item(),
            "td_loss": td.item(),
            "cd_loss": cd_total.item() if cd_total is not None else float("nan"),
            "mean_neighbor_kl": self._mean_neighbor_kl(fwd.latents),
            "cognition_values": self._cognition_values(fwd.latents),
        }
        return metrics

    def _mean_neighbor_kl(self, latents: Sequence[Optional[GaussianLatent]]) -> float:
        """Mean directed KL over adjacent agent pairs, batch-averaged."""
        if not self.net.config.use_cognition:
            return float("nan")
        vals = [
            kl_value(latents[i], latents[j])
            for i in range(self.n_agents)
            for j in self.graph.neighbors(i)
        ]
        return float(np.mean(vals)) if vals else float("nan")

    def _cognition_values(self, latents) -> list[float]:
        if not self.net.config.use_cognition:
            return [float("nan")] * self.n_agents
        return [float(np.mean(lat.mu.data)) for lat in latents]

    def sync_target(self) -> None:
        """Hard-copy online parameters into the target network."""
        self.target.copy_from(self.net)

    def named_arrays(self) -> dict[str, np.ndarray]:
        return self.net.named_arrays()

    def load_arrays(self, tensors: dict[str, np.ndarray]) -> None:
        from .checkpoint import restore_into

        restore_into(self.net.named_arrays(), tensors)
        self.sync_target()
