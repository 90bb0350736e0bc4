"""Experiment configuration: a strict JSON schema for full runs.

Unknown keys are rejected and every field is range-checked at load time,
so typos fail immediately with an addressed message rather than silently
falling back to defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .envs import ENV_KINDS
from .nccac import AC_VARIANTS
from .nccq import Q_VARIANTS

ALGORITHMS = Q_VARIANTS + AC_VARIANTS


class ConfigError(ValueError):
    """Configuration file failed validation; message is path-addressed."""


@dataclass
class EnvSpec:
    kind: str
    topology: Path


@dataclass
class ExperimentConfig:
    env: EnvSpec
    algorithm: str
    episodes: int
    seeds: list[int]
    alpha: float = 0.1
    gamma: float = 0.98
    lr: float = 1e-3
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    hidden_dim: int = 32
    latent_dim: int = 16
    replay_capacity: int = 100_000
    batch_size: int = 32
    target_sync_interval: int = 200
    train_every: int = 1
    horizon: int = 100
    epsilon_start: float = 1.0
    epsilon_final: float = 0.05
    epsilon_decay_frac: float = 0.5
    noise_start: float = 0.3
    noise_final: float = 0.02
    noise_decay_frac: float = 0.5
    share_encoders: bool = False
    stop_grad_neighbor_kl: bool = False
    use_gcn: Optional[bool] = None
    use_cognition: Optional[bool] = None
    use_mixing: Optional[bool] = None
    optimizer: str = "adam"
    weight_decay: float = 0.0
    cd_anchor_weight: float = 0.0
    fault_nan_seed: Optional[int] = None
    fault_nan_step: Optional[int] = None

    @property
    def is_actor_critic(self) -> bool:
        return self.algorithm in AC_VARIANTS


_FLOAT_FIELDS = {
    "alpha", "gamma", "lr", "actor_lr", "critic_lr",
    "epsilon_start", "epsilon_final", "epsilon_decay_frac",
    "noise_start", "noise_final", "noise_decay_frac", "weight_decay",
    "cd_anchor_weight",
}
_INT_FIELDS = {
    "episodes", "hidden_dim", "latent_dim", "replay_capacity", "batch_size",
    "target_sync_interval", "train_every", "horizon",
}
_BOOL_FIELDS = {"share_encoders", "stop_grad_neighbor_kl"}
_OPT_BOOL_FIELDS = {"use_gcn", "use_cognition", "use_mixing"}
_OPT_INT_FIELDS = {"fault_nan_seed", "fault_nan_step"}


def _err(source: str, path: str, msg: str) -> ConfigError:
    return ConfigError(f"{source}: {path}: {msg}")


def load_config(path) -> ExperimentConfig:
    """Parse and validate an experiment file; topology paths resolve
    relative to the config file's directory."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: no such config file")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return parse_config(raw, source=str(path), base_dir=path.parent)


def parse_config(raw: dict, source: str = "<config>", base_dir: Path = Path(".")) -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(raw) - known
    if unknown:
        raise _err(source, "$", f"unknown keys {sorted(unknown)}")
    for required in ("env", "algorithm", "episodes", "seeds"):
        if required not in raw:
            raise _err(source, "$", f"missing required key '{required}'")

    env_raw = raw["env"]
    if not isinstance(env_raw, dict) or set(env_raw) != {"kind", "topology"}:
        raise _err(source, "$.env", "must be an object with exactly 'kind' and 'topology'")
    if env_raw["kind"] not in ENV_KINDS:
        raise _err(source, "$.env.kind", f"'{env_raw['kind']}' is not one of {ENV_KINDS}")
    topology = (base_dir / env_raw["topology"]).resolve()
    if not topology.is_file():
        raise _err(source, "$.env.topology", f"no such file: {topology}")
    env = EnvSpec(env_raw["kind"], topology)

    algorithm = raw["algorithm"]
    if algorithm not in ALGORITHMS:
        raise _err(source, "$.algorithm", f"'{algorithm}' is not one of {ALGORITHMS}")

    seeds = raw["seeds"]
    if (
        not isinstance(seeds, list)
        or not seeds
        or any(isinstance(s, bool) or not isinstance(s, int) for s in seeds)
    ):
        raise _err(source, "$.seeds", "must be a nonempty list of integers")
    if len(set(seeds)) != len(seeds):
        raise _err(source, "$.seeds", "seeds must be unique")

    kwargs: dict = {"env": env, "algorithm": algorithm, "seeds": list(seeds)}
    for name in raw:
        if name in ("env", "algorithm", "seeds"):
            continue
        value = raw[name]
        where = f"$.{name}"
        if name in _FLOAT_FIELDS:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise _err(source, where, "must be a number")
            kwargs[name] = float(value)
        elif name in _INT_FIELDS:
            if isinstance(value, bool) or not isinstance(value, int):
                raise _err(source, where, "must be an integer")
            kwargs[name] = value
        elif name in _BOOL_FIELDS:
            if not isinstance(value, bool):
                raise _err(source, where, "must be a boolean")
            kwargs[name] = value
        elif name in _OPT_BOOL_FIELDS:
            if value is not None and not isinstance(value, bool):
                raise _err(source, where, "must be a boolean or null")
            kwargs[name] = value
        elif name in _OPT_INT_FIELDS:
            if value is not None and (isinstance(value, bool) or not isinstance(value, int)):
                raise _err(source, where, "must be an integer or null")
            kwargs[name] = value
        elif name == "optimizer":
            if value not in ("adam", "sgd"):
                raise _err(source, where, "must be 'adam' or 'sgd'")
            kwargs[name] = value
        else:  # episodes handled above via _INT_FIELDS, so this is unreachable
            raise _err(source, where, "unhandled key")

    config = ExperimentConfig(**kwargs)
    _validate_ranges(config, source)
    return config


def _validate_ranges(c: ExperimentConfig, source: str) -> None:
    def check(cond: bool, where: str, msg: str) -> None:
        if not cond:
            raise _err(source, where, msg)

    check(c.alpha >= 0, "$.alpha", "must be nonnegative")
    check(0.0 <= c.gamma <= 1.0, "$.gamma", "must lie in [0, 1]")
    for name in ("lr", "actor_lr", "critic_lr", "weight_decay", "cd_anchor_weight"):
        check(getattr(c, name) >= 0, f"$.{name}", "must be nonnegative")
    for name in ("hidden_dim", "latent_dim", "batch_size", "replay_capacity",
                 "target_sync_interval", "train_every", "horizon"):
        check(getattr(c, name) >= 1, f"$.{name}", "must be at least 1")
    check(c.episodes >= 0, "$.episodes", "must be nonnegative")
    check(c.batch_size <= c.replay_capacity, "$.batch_size", "cannot exceed replay_capacity")
    for pair in (("epsilon_start", "epsilon_final"), ("noise_start", "noise_final")):
        hi, lo = (getattr(c, p) for p in pair)
        check(0.0 <= lo <= hi, f"$.{pair[1]}", f"need 0 <= {pair[1]} <= {pair[0]}")
    check(c.epsilon_start <= 1.0, "$.epsilon_start", "must be at most 1")
    for name in ("epsilon_decay_frac", "noise_decay_frac"):
        check(0.0 < getattr(c, name) <= 1.0, f"$.{name}", "must lie in (0, 1]")
    if not c.is_actor_critic:
        check(c.env.kind != "routing", "$.algorithm",
              "Q-learning variants need discrete actions; routing is continuous")
    else:
        check(c.env.kind == "routing", "$.algorithm",
              "actor-critic variants need continuous actions; use a routing env")
        for name in _OPT_BOOL_FIELDS:
            check(getattr(c, name) is None, f"$.{name}",
                  "module bypass flags apply only to Q-learning variants")
