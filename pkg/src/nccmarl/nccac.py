"""Deterministic per-agent actors with neighborhood-consistent critics.

Each agent owns an actor mapping its observation to a blockwise-simplex
action and a critic that encodes the observations and actions of its
closed neighborhood through two separate graph convolutions, merges the
branches, and scores the joint local situation through the cognition
latent. Critics are trained on squared TD error plus the dissonance loss;
actors ascend the critic through the chain rule, one agent at a time in
index order.

Variants: ``NCC_AC`` (full), ``GRAPH_AC`` (dissonance weight zero),
``GCC_AC`` (unit-Gaussian prior for every agent).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Optimizer, OptimizerConfig, Tape, Tensor
from .cognition import CognitionHead, GaussianLatent, cd_loss, kl_value, sample
from .graph import AgentGraph, GcnLayer, gcn_forward_scoped
from .layers import Dense, Mlp
from .replay import ReplayBuffer, Transition
from .rng import RngStreams

logger = logging.getLogger(__name__)

AC_VARIANTS = ("NCC_AC", "GRAPH_AC", "GCC_AC")


def ac_variant_flags(variant: str) -> dict:
    table = {
        "NCC_AC": dict(cd_mode="neighborhood", force_alpha_zero=False),
        "GRAPH_AC": dict(cd_mode="neighborhood", force_alpha_zero=True),
        "GCC_AC": dict(cd_mode="global_unit", force_alpha_zero=False),
    }
    if variant not in table:
        raise ValueError(f"unknown AC variant '{variant}' (one of {AC_VARIANTS})")
    return table[variant]


@dataclass
class NoiseProcess:
    """Gaussian exploration noise on actor logits, linearly decayed."""

    start: float = 0.3
    final: float = 0.02
    decay_frac: float = 0.5

    def sigma(self, step: int, total_steps: int) -> float:
        span = max(1, int(total_steps * self.decay_frac))
        frac = min(1.0, step / span)
        return self.start + frac * (self.final - self.start)


class Actor:
    """Deterministic policy: observation -> one simplex per commodity."""

    def __init__(self, obs_dim: int, blocks: Sequence[int], hidden_dim: int,
                 rng: np.random.Generator) -> None:
        if not blocks or any(b < 1 for b in blocks):
            raise ValueError(f"invalid action blocks {blocks}")
        self.blocks = list(blocks)
        self.net = Mlp([obs_dim, hidden_dim, sum(blocks)], rng)

    def logits(self, obs: Tensor) -> Tensor:
        return self.net(obs)

    def normalize(self, logits: Tensor) -> Tensor:
        """Blockwise softmax: nonnegative splits summing to one per block."""
        if len(self.blocks) == 1:
            return ad.softmax(logits)
        parts, offset = [], 0
        for width in self.blocks:
            parts.append(ad.softmax(ad.slice_cols(logits, offset, offset + width)))
            offset += width
        return ad.concat_cols(parts)

    def __call__(self, obs: Tensor) -> Tensor:
        return self.normalize(self.logits(obs))

    @property
    def params(self) -> list[Tensor]:
        return self.net.params


@dataclass
class CriticForward:
    q: Tensor  # (B, 1)
    latent: GaussianLatent
    recons: list[Tensor]  # [obs reconstruction, action reconstruction]


class NccCritic:
    """Per-agent scalar critic over the agent's closed neighborhood.

    Observations and actions pass through separate encoders and graph
    convolutions; the merged feature feeds the cognition head, while the
    agent-specific branch comes directly from the agent's own encoded
    action (shortcut), so the critic stays sharp in its own action.
    """

    def __init__(
        self,
        agent: int,
        graph: AgentGraph,
        obs_dims: Sequence[int],
        action_dims: Sequence[int],
        hidden_dim: int,
        latent_dim: int,
        rng: np.random.Generator,
        gcn_activation: str = "relu",
    ) -> None:
        self.agent = agent
        self.graph = graph
        self.scope = graph.closed_neighborhood(agent)
        self.obs_enc = {j: Dense(obs_dims[j], hidden_dim, rng) for j in self.scope}
        self.act_enc = {j: Dense(action_dims[j], hidden_dim, rng) for j in self.scope}
        self.gcn_obs = GcnLayer.create(hidden_dim, hidden_dim, rng, gcn_activation)
        self.gcn_act = GcnLayer.create(hidden_dim, hidden_dim, rng, gcn_activation)
        self.cognition = CognitionHead(
            hidden_dim,
            latent_dim,
            recon_dims=[obs_dims[agent], action_dims[agent]],
            decoder_hidden=hidden_dim,
            rng=rng,
            with_agent_branch=False,
        )
        self.shortcut = Dense(hidden_dim, latent_dim, rng)
        self.q_head = Mlp([latent_dim, hidden_dim, 1], rng)

    def forward(
        self,
        obs: Sequence,
        actions: Sequence,
        eval_mode: bool,
        reparam_rng: Optional[np.random.Generator] = None,
    ) -> CriticForward:
        """Score the neighborhood; ``obs``/``actions`` are full per-agent
        lists (ndarrays or tensors); only the scope entries are read."""
        as_tensor = lambda v: v if isinstance(v, Tensor) else ad.constant(np.atleast_2d(v))
        h_o = {j: ad.relu(self.obs_enc[j](as_tensor(obs[j]))) for j in self.scope}
        h_a = {j: ad.relu(self.act_enc[j](as_tensor(actions[j]))) for j in self.scope}
        merged = gcn_forward_scoped(self.gcn_obs, self.graph, h_o, self.agent) + \
            gcn_forward_scoped(self.gcn_act, self.graph, h_a, self.agent)
        _, latent = self.cognition.encode(merged)
        if eval_mode:
            eps = np.zeros(latent.mu.shape)
        else:
            if reparam_rng is None:
                raise ValueError("training forward needs a reparam generator")
            eps = reparam_rng.standard_normal(latent.mu.shape)
        drawn = sample(latent, eps)
        recons = self.cognition.reconstruct(drawn)
        agent_vec = self.shortcut(h_a[self.agent])
        q = self.q_head(agent_vec + drawn)
        return CriticForward(q, latent, recons)

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        out = []
        for j in self.scope:
            out += [(f"{prefix}.obs{j}.w", self.obs_enc[j].weight),
                    (f"{prefix}.obs{j}.b", self.obs_enc[j].bias),
                    (f"{prefix}.act{j}.w", self.act_enc[j].weight),
                    (f"{prefix}.act{j}.b", self.act_enc[j].bias)]
        out += [(f"{prefix}.gcno.w", self.gcn_obs.weight),
                (f"{prefix}.gcna.w", self.gcn_act.weight)]
        cog = self.cognition
        for tag, layer in (("mu", cog.mu_layer), ("logsigma", cog.log_sigma_layer)):
            out += [(f"{prefix}.cog.{tag}.w", layer.weight), (f"{prefix}.cog.{tag}.b", layer.bias)]
        for d, dec in enumerate(cog.decoders):
            for k, lay in enumerate(dec.layers):
                out += [(f"{prefix}.cog.dec{d}.l{k}.w", lay.weight),
                        (f"{prefix}.cog.dec{d}.l{k}.b", lay.bias)]
        out += [(f"{prefix}.shortcut.w", self.shortcut.weight),
                (f"{prefix}.shortcut.b", self.shortcut.bias)]
        for k, lay in enumerate(self.q_head.layers):
            out += [(f"{prefix}.q.l{k}.w", lay.weight), (f"{prefix}.q.l{k}.b", lay.bias)]
        return out

    @property
    def params(self) -> list[Tensor]:
        return [t for _, t in self.named("c")]


def actor_update(
    actor: Actor,
    critic_fn: Callable[[Tensor], Tensor],
    obs: np.ndarray,
    optimizer: Optional[Optimizer] = None,
) -> float:
    """One deterministic-policy-gradient step for a single actor.

    ``critic_fn`` maps the actor's on-tape action batch to a (B, 1) value
    batch with everything else bound; gradients reach only this actor's
    parameters plus (discarded) critic internals. With ``optimizer`` None
    the gradients are left in place for inspection instead of applied.
    Returns the mean value being ascended.
    """
    with Tape():
        action = actor(ad.constant(np.atleast_2d(obs)))
        value = ad.tmean(critic_fn(action))
        ad.backward(ad.negate(value))
    if optimizer is not None:
        optimizer.step()
    return value.item()


@dataclass
class AcLearnerSettings:
    gamma: float = 0.98
    alpha: float = 0.1
    batch_size: int = 32
    target_sync_interval: int = 200
    replay_capacity: int = 100_000
    stop_grad_neighbor_kl: bool = False
    cd_mode: str = "neighborhood"
    cd_anchor_weight: float = 0.0
    actor_optimizer: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(lr=1e-3))
    critic_optimizer: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(lr=1e-3))


class NccAcLearner:
    """All agents' actors/critics plus their target copies and buffers.

    Updates run sequentially in agent order: every critic takes its step
    (TD plus weighted dissonance), then every actor ascends its own
    critic. Each backward pass starts from cleared gradients so the
    per-agent steps stay isolated.
    """

    def __init__(
        self,
        graph: AgentGraph,
        obs_dims: Sequence[int],
        action_blocks: Sequence[Sequence[int]],
        settings: AcLearnerSettings,
        streams: RngStreams,
        hidden_dim: int = 32,
        latent_dim: int = 16,
    ) -> None:
        self.graph = graph
        self.settings = settings
        self.obs_dims = list(obs_dims)
        self.action_blocks = [list(b) for b in action_blocks]
        self.action_dims = [sum(b) for b in self.action_blocks]
        n = graph.n_agents

        def build(rng):
            actors = [Actor(self.obs_dims[i], self.action_blocks[i], hidden_dim, rng)
                      for i in range(n)]
            critics = [
                NccCritic(i, graph, self.obs_dims, self.action_dims, hidden_dim,
                          latent_dim, rng)
                for i in range(n)
            ]
            return actors, critics

        self.actors, self.critics = build(streams.init)
        self.target_actors, self.target_critics = build(np.random.default_rng(0))
        self._copy_targets()

        self.actor_opts = [Optimizer(a.params, settings.actor_optimizer) for a in self.actors]
        self.critic_opts = [Optimizer(c.params, settings.critic_optimizer) for c in self.critics]
        self.buffer = ReplayBuffer(settings.replay_capacity, streams.replay)
        self._explore_rng = streams.explore
        self._reparam_rng = streams.reparam
        self.iterations = 0
        self._warned_underfilled = False
        self._inject_nan_once = False

    @property
    def n_agents(self) -> int:
        return self.graph.n_agents

    def _copy_targets(self) -> None:
        for src, dst in zip(self.actors, self.target_actors):
            for a, b in zip(src.params, dst.params):
                b.data[...] = a.data
        for src, dst in zip(self.critics, self.target_critics):
            for a, b in zip(src.params, dst.params):
                b.data[...] = a.data

    def sync_target(self) -> None:
        self._copy_targets()

    def _all_params(self) -> list[Tensor]:
        out = []
        for a in self.actors:
            out += a.params
        for c in self.critics:
            out += c.params
        return out

    def act(self, obs: Sequence[np.ndarray], sigma: float) -> list[np.ndarray]:
        """Noisy actions: Gaussian noise on the logits, renormalized by the
        blockwise softmax. One noise draw per agent, in agent order."""
        out = []
        with ad.no_grad():
            for i, actor in enumerate(self.actors):
                logits = actor.logits(ad.constant(obs[i][None, :]))
                if sigma > 0:
                    noise = sigma * self._explore_rng.standard_normal(logits.shape)
                    logits = ad.constant(logits.data + noise)
                out.append(actor.normalize(logits).data[0].copy())
        return out

    def greedy(self, obs: Sequence[np.ndarray]) -> list[np.ndarray]:
        with ad.no_grad():
            return [
                actor(ad.constant(obs[i][None, :])).data[0].copy()
                for i, actor in enumerate(self.actors)
            ]

    def observe(self, transition: Transition) -> None:
        self.buffer.add(transition)

    def inject_nan_once(self) -> None:
        self._inject_nan_once = True

    def _batch_arrays(self, batch: list[Transition]):
        n = self.n_agents
        obs_b = [np.stack([t.obs[i] for t in batch]) for i in range(n)]
        act_b = [np.stack([np.asarray(t.actions[i], dtype=np.float64) for t in batch])
                 for i in range(n)]
        next_obs_b = [np.stack([t.next_obs[i] for t in batch]) for i in range(n)]
        rewards = np.array([t.reward for t in batch])
        terminals = np.array([t.terminal for t in batch])
        return obs_b, act_b, next_obs_b, rewards, terminals

    def _td_target(self, agent: int, next_obs_b, rewards, terminals) -> np.ndarray:
        """(B, 1) bootstrap from target critic and target actors."""
        with ad.no_grad():
            next_actions = [
                self.target_actors[j](ad.constant(next_obs_b[j]))
                for j in range(self.n_agents)
            ]
            q_next = self.target_critics[agent].forward(
                next_obs_b, next_actions, eval_mode=True
            ).q
        cont = 1.0 - terminals.astype(np.float64)
        return (rewards + self.settings.gamma * cont * q_next.data[:, 0])[:, None]

    def _critic_losses(self, agent: int, obs_b, act_b, y) -> tuple[Tensor, Tensor, CriticForward]:
        """On-tape TD and dissonance terms for one agent's critic."""
        fwd = self.critics[agent].forward(
            obs_b, act_b, eval_mode=False, reparam_rng=self._reparam_rng
        )
        td = ad.tmean(ad.square(fwd.q - ad.constant(y)))
        neighbor_latents = [
            self.critics[j].forward(obs_b, act_b, eval_mode=True).latent
            for j in self.graph.neighbors(agent)
        ]
        cd = cd_loss(
            agent,
            [ad.constant(obs_b[agent]), ad.constant(act_b[agent])],
            fwd.recons,
            fwd.latent,
            neighbor_latents,
            mode=self.settings.cd_mode,
            stop_grad_neighbors=self.settings.stop_grad_neighbor_kl,
            unit_anchor=self.settings.cd_anchor_weight,
        )
        return td, cd, fwd

    def critic_td_loss(self, agent: int, batch: list[Transition]) -> float:
        """Standalone mean squared TD error for one agent (evaluation latents)."""
        obs_b, act_b, next_obs_b, rewards, terminals = self._batch_arrays(batch)
        y = self._td_target(agent, next_obs_b, rewards, terminals)
        with ad.no_grad():
            fwd = self.critics[agent].forward(obs_b, act_b, eval_mode=True)
            td = ad.tmean(ad.square(fwd.q - ad.constant(y)))
        return td.item()

    def critic_cd_loss(self, agent: int, batch: list[Transition]) -> float:
        """Standalone dissonance loss for one agent (evaluation latents)."""
        obs_b, act_b, _, _, _ = self._batch_arrays(batch)
        with ad.no_grad():
            fwd = self.critics[agent].forward(obs_b, act_b, eval_mode=True)
            neighbor_latents = [
                self.critics[j].forward(obs_b, act_b, eval_mode=True).latent
                for j in self.graph.neighbors(agent)
            ]
            cd = cd_loss(
                agent,
                [ad.constant(obs_b[agent]), ad.constant(act_b[agent])],
                fwd.recons,
                fwd.latent,
                neighbor_latents,
                mode=self.settings.cd_mode,
                stop_grad_neighbors=self.settings.stop_grad_neighbor_kl,
                unit_anchor=self.settings.cd_anchor_weight,
            )
        return cd.item()

    def train_iteration(self) -> Optional[dict]:
        """Critic steps then actor steps, all agents in order, then the
        periodic hard target sync. Returns a metrics record, or None while
        the buffer is underfilled."""
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
        obs_b, act_b, next_obs_b, rewards, terminals = self._batch_arrays(batch)

        td_losses, cd_losses, latents = [], [], []
        for i in range(self.n_agents):
            y = self._td_target(i, next_obs_b, rewards, terminals)
            ad.zero_grads(self._all_params())
            with Tape():
                td, cd, fwd = self._critic_losses(i, obs_b, act_b, y)
                loss = td if s.alpha == 0.0 else td + ad.scale(cd, s.alpha)
                if self._inject_nan_once:
                    loss = ad.scale(loss, float("nan"))
                    self._inject_nan_once = False
                ad.backward(loss)
            self.critic_opts[i].step()
            td_losses.append(td.item())
            cd_losses.append(cd.item())
            latents.append(GaussianLatent(fwd.latent.mu.detach(), fwd.latent.log_sigma.detach()))

        for i in range(self.n_agents):
            ad.zero_grads(self._all_params())

            def critic_of(action: Tensor, agent: int = i) -> Tensor:
                acts = [
                    action if j == agent else self.greedy_batch(j, obs_b[j])
                    for j in range(self.n_agents)
                ]
                return self.critics[agent].forward(obs_b, acts, eval_mode=True).q

            actor_update(self.actors[i], critic_of, obs_b[i], self.actor_opts[i])

        self.iterations += 1
        if self.iterations % s.target_sync_interval == 0:
            self.sync_target()

        kl_vals = [
            kl_value(latents[i], latents[j])
            for i in range(self.n_agents)
            for j in self.graph.neighbors(i)
        ]
        return {
            "loss": float(np.sum(td_losses) + s.alpha * np.sum(cd_losses)),
            "td_loss": float(np.mean(td_losses)),
            "cd_loss": float(np.mean(cd_losses)),
            "td_losses": td_losses,
            "cd_losses": cd_losses,
            "mean_neighbor_kl": float(np.mean(kl_vals)) if kl_vals else float("nan"),
            "cognition_values": [float(np.mean(l.mu.data)) for l in latents],
        }

    def greedy_batch(self, agent: int, obs: np.ndarray) -> Tensor:
        """Current-policy actions for a whole batch, detached from the tape."""
        with ad.no_grad():
            return ad.constant(self.actors[agent](ad.constant(obs)).data)

    def named_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for i, actor in enumerate(self.actors):
            for k, lay in enumerate(actor.net.layers):
                out[f"actor{i}.l{k}.w"] = lay.weight.data
                out[f"actor{i}.l{k}.b"] = lay.bias.data
        for i, critic in enumerate(self.critics):
            for name, t in critic.named(f"critic{i}"):
                out[name] = t.data
        return out

    def load_arrays(self, tensors: dict[str, np.ndarray]) -> None:
        from .checkpoint import restore_into

        restore_into(self.named_arrays(), tensors)
        self.sync_target()
