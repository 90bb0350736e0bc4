"""Seed-derived random streams, one per concern.

A run's master seed spawns independent child streams in a fixed order so
that, e.g., toggling exploration noise cannot shift the environment's
demand trace. Stream order is part of the determinism contract.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STREAM_ORDER = ("init", "explore", "reparam", "env", "replay")


@dataclass
class RngStreams:
    """Independent generators for one seeded run."""

    init: np.random.Generator  # parameter initialization
    explore: np.random.Generator  # epsilon-greedy draws / actor noise
    reparam: np.random.Generator  # latent sampling epsilon
    env: np.random.Generator  # demand / load processes
    replay: np.random.Generator  # replay buffer sampling


def derive_streams(master_seed: int) -> RngStreams:
    children = np.random.SeedSequence(master_seed).spawn(len(STREAM_ORDER))
    gens = {name: np.random.default_rng(seq) for name, seq in zip(STREAM_ORDER, children)}
    return RngStreams(**gens)
