"""Variational cognition: latent encoder, reparameterized sampling, and
the dissonance losses that pull neighboring agents' latents together.

Each agent's aggregated neighborhood feature is split into an
agent-specific vector and a diagonal Gaussian over a shared latent space.
The dissonance loss combines reconstruction error with a KL term whose
prior is either a neighbor's latent distribution (neighborhood mode) or a
unit Gaussian (global mode, also the fallback for isolated agents).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .layers import Dense, Mlp

logger = logging.getLogger(__name__)

# Encoder log-std clamp; keeps sigma in [e^-5, e^2] so KL terms stay finite.
LOG_SIGMA_MIN = -5.0
LOG_SIGMA_MAX = 2.0


@dataclass
class GaussianLatent:
    """Diagonal Gaussian q(C | .) as (batch, dim) mean and log-std tensors."""

    mu: Tensor
    log_sigma: Tensor

    def __post_init__(self) -> None:
        if self.mu.shape != self.log_sigma.shape:
            raise ShapeError("GaussianLatent", self.mu.shape, self.log_sigma.shape)

    @property
    def dim(self) -> int:
        return self.mu.shape[-1]

    def detached(self) -> "GaussianLatent":
        return GaussianLatent(self.mu.detach(), self.log_sigma.detach())

    @classmethod
    def unit(cls, shape: tuple) -> "GaussianLatent":
        """Standard normal N(0, I) of the given (batch, dim) shape."""
        return cls(ad.constant(np.zeros(shape)), ad.constant(np.zeros(shape)))


class CognitionHead:
    """Maps an aggregated feature to the agent branch, the latent, and back.

    The decoder holds one small MLP per reconstruction target (observation,
    and additionally the action for the actor-critic variant).
    """

    def __init__(
        self,
        feature_dim: int,
        latent_dim: int,
        recon_dims: Sequence[int],
        decoder_hidden: int,
        rng: np.random.Generator,
        with_agent_branch: bool = True,
    ) -> None:
        self.latent_dim = latent_dim
        # the actor-critic critic supplies its own agent branch (an action
        # shortcut), so the built-in one is optional
        self.agent_layer = Dense(feature_dim, latent_dim, rng) if with_agent_branch else None
        self.mu_layer = Dense(feature_dim, latent_dim, rng)
        self.log_sigma_layer = Dense(feature_dim, latent_dim, rng)
        self.decoders = [Mlp([latent_dim, decoder_hidden, d], rng) for d in recon_dims]

    def encode(self, feature: Tensor) -> tuple[Optional[Tensor], GaussianLatent]:
        agent_vec = self.agent_layer(feature) if self.agent_layer is not None else None
        mu = self.mu_layer(feature)
        log_sigma = ad.clip(self.log_sigma_layer(feature), LOG_SIGMA_MIN, LOG_SIGMA_MAX)
        return agent_vec, GaussianLatent(mu, log_sigma)

    def reconstruct(self, latent_sample: Tensor) -> list[Tensor]:
        return [dec(latent_sample) for dec in self.decoders]

    @property
    def params(self) -> list[Tensor]:
        ps = self.agent_layer.params if self.agent_layer is not None else []
        ps = ps + self.mu_layer.params + self.log_sigma_layer.params
        for dec in self.decoders:
            ps += dec.params
        return ps


def sample(latent: GaussianLatent, epsilon) -> Tensor:
    """Reparameterized draw mu + exp(log_sigma) * epsilon.

    ``epsilon`` is treated as a constant: gradients reach mu and log_sigma
    only. Pass zeros for evaluation mode (the draw collapses to the mean).
    """
    eps = epsilon if isinstance(epsilon, Tensor) else ad.constant(epsilon)
    if eps.shape != latent.mu.shape:
        raise ShapeError("sample", latent.mu.shape, eps.shape)
    return latent.mu + ad.exp(latent.log_sigma) * eps.detach()


def kl_diag_gaussians(p: GaussianLatent, q: GaussianLatent) -> Tensor:
    """KL(p || q) for diagonal Gaussians, summed over latent dimensions.

    For batched latents the per-sample divergences are averaged over the
    batch. The variance part is computed as expm1(2d) - 2d with
    d = log_sigma_p - log_sigma_q, which is algebraically
    sigma_p^2/sigma_q^2 - 1 - 2 log(sigma_p/sigma_q) but cannot dip below
    zero by rounding, so the result is nonnegative even at p == q.
    """
    if p.mu.shape != q.mu.shape:
        raise ShapeError("kl_diag_gaussians", p.mu.shape, q.mu.shape)
    d2 = ad.scale(p.log_sigma - q.log_sigma, 2.0)
    var_part = ad.expm1(d2) - d2
    maha = ad.square(p.mu - q.mu) * ad.exp(ad.scale(q.log_sigma, -2.0))
    per_dim = ad.scale(var_part + maha, 0.5)
    return ad.tmean(ad.tsum(per_dim, axis=-1))


def kl_to_unit_gaussian(p: GaussianLatent) -> Tensor:
    """KL(p || N(0, I)): the neighborhood KL against an explicit unit prior."""
    return kl_diag_gaussians(p, GaussianLatent.unit(p.mu.shape))


def kl_value(p: GaussianLatent, q: GaussianLatent) -> float:
    """Tape-free closed-form KL(p || q), batch-averaged; for diagnostics."""
    mu_p, ls_p = p.mu.data, p.log_sigma.data
    mu_q, ls_q = q.mu.data, q.log_sigma.data
    d2 = 2.0 * (ls_p - ls_q)
    per_dim = 0.5 * ((np.expm1(d2) - d2) + (mu_p - mu_q) ** 2 * np.exp(-2.0 * ls_q))
    return float(np.mean(np.sum(per_dim, axis=-1)))


def cd_loss(
    agent_index: int,
    targets: Sequence[Tensor],
    reconstructions: Sequence[Tensor],
    latent: GaussianLatent,
    neighbor_latents: Sequence[GaussianLatent],
    mode: str = "neighborhood",
    stop_grad_neighbors: bool = False,
    unit_anchor: float = 0.0,
) -> Tensor:
    """Dissonance loss: reconstruction error plus a latent-consistency KL.

    ``neighborhood`` mode averages KL(own || neighbor) over the given
    neighbor latents; with none available it falls back to the unit-Gaussian
    prior and logs a warning. ``global_unit`` mode always uses the unit
    prior. Gradients flow into neighbor latents too unless
    ``stop_grad_neighbors`` is set.

    The pairwise KL is invariant to shifting every latent's mean (and
    log-std) by the same amount, so with independently parameterized
    critics the common mode can drift until the sigma clamp makes the KL
    explosively curved. A small ``unit_anchor`` adds that fraction of
    KL(own || N(0, I)) in neighborhood mode to pin the common mode.
    """
    if mode not in ("neighborhood", "global_unit"):
        raise ValueError(f"unknown cd_loss mode '{mode}'")
    if len(targets) != len(reconstructions) or not targets:
        raise ValueError("targets and reconstructions must pair up, nonempty")
    errors = [ad.mse(recon, target) for target, recon in zip(targets, reconstructions)]
    recon_term = errors[0] if len(errors) == 1 else ad.sum_tensors(errors)

    if mode == "neighborhood" and not neighbor_latents:
        logger.warning(
            "agent %d has no neighbors; dissonance loss falls back to the unit-Gaussian prior",
            agent_index,
        )
        mode = "global_unit"

    if mode == "global_unit":
        kl_term = kl_to_unit_gaussian(latent)
    else:
        kls = [
            kl_diag_gaussians(latent, q.detached() if stop_grad_neighbors else q)
            for q in neighbor_latents
        ]
        total = kls[0] if len(kls) == 1 else ad.sum_tensors(kls)
        kl_term = ad.scale(total, 1.0 / len(kls))
        if unit_anchor > 0.0:
            kl_term = kl_term + ad.scale(kl_to_unit_gaussian(latent), unit_anchor)
    return recon_term + kl_term
