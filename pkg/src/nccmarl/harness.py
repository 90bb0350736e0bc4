"""Experiment orchestration: seeded training loops, metric persistence,
checkpointing, and greedy evaluation.

Each seed runs fully independently (own derived random streams, own
environment and learner) and streams one metrics row per episode to its
CSV. Wall-clock timings go to a separate sidecar so the metrics files are
bit-identical across reruns. An aggregate CSV carries the per-episode
mean and standard deviation across the seeds that completed.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .autodiff import OptimizerConfig
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .envs import build_env, derive_neighborhoods, load_topology
from .nccac import AcLearnerSettings, NccAcLearner, NoiseProcess, ac_variant_flags
from .nccq import NccQLearner, QLearnerSettings, QNetConfig, variant_flags
from .replay import Transition
from .rng import derive_streams

logger = logging.getLogger(__name__)


class SeedFailure(RuntimeError):
    """A seed aborted mid-run (numeric failure); other seeds are unaffected."""


def linear_decay(step: int, total_steps: int, start: float, final: float,
                 frac: float) -> float:
    span = max(1, int(total_steps * frac))
    t = min(1.0, step / span)
    return start + t * (final - start)


def build_environment(config: ExperimentConfig, env_rng):
    topology = load_topology(config.env.kind, config.env.topology)
    env = build_env(config.env.kind, topology, config.horizon, env_rng)
    return env, derive_neighborhoods(topology)


def build_learner(config: ExperimentConfig, env, graph, streams):
    if config.is_actor_critic:
        flags = ac_variant_flags(config.algorithm)
        settings = AcLearnerSettings(
            gamma=config.gamma,
            alpha=0.0 if flags["force_alpha_zero"] else config.alpha,
            batch_size=config.batch_size,
            target_sync_interval=config.target_sync_interval,
            replay_capacity=config.replay_capacity,
            stop_grad_neighbor_kl=config.stop_grad_neighbor_kl,
            cd_mode=flags["cd_mode"],
            cd_anchor_weight=config.cd_anchor_weight,
            actor_optimizer=OptimizerConfig(
                kind=config.optimizer, lr=config.actor_lr,
                weight_decay=config.weight_decay,
            ),
            critic_optimizer=OptimizerConfig(
                kind=config.optimizer, lr=config.critic_lr,
                weight_decay=config.weight_decay,
            ),
        )
        return NccAcLearner(
            graph, env.obs_dims, env.action_blocks, settings, streams,
            hidden_dim=config.hidden_dim, latent_dim=config.latent_dim,
        )
    flags = variant_flags(config.algorithm)
    override = lambda name, default: default if getattr(config, name) is None else getattr(config, name)
    net_config = QNetConfig(
        obs_dims=env.obs_dims,
        n_actions=env.n_actions,
        hidden_dim=config.hidden_dim,
        latent_dim=config.latent_dim,
        use_gcn=override("use_gcn", flags["use_gcn"]),
        use_cognition=override("use_cognition", flags["use_cognition"]),
        use_mixing=override("use_mixing", flags["use_mixing"]),
        cd_mode=flags["cd_mode"],
        share_encoders=config.share_encoders,
    )
    settings = QLearnerSettings(
        gamma=config.gamma,
        alpha=0.0 if flags["force_alpha_zero"] else config.alpha,
        batch_size=config.batch_size,
        target_sync_interval=config.target_sync_interval,
        replay_capacity=config.replay_capacity,
        stop_grad_neighbor_kl=config.stop_grad_neighbor_kl,
        optimizer=OptimizerConfig(
            kind=config.optimizer, lr=config.lr, weight_decay=config.weight_decay,
        ),
    )
    return NccQLearner(net_config, graph, settings, streams)


def metric_columns(n_agents: int) -> list[str]:
    return (
        ["episode", "mean_reward", "td_loss", "cd_loss", "mean_neighbor_kl"]
        + [f"cognition_value_{i}" for i in range(n_agents)]
    )


def _fmt(value: float) -> str:
    return repr(float(value))


@dataclass
class SeedResult:
    seed: int
    status: str  # "ok" or "failed: <reason>"
    episodes_completed: int
    csv_path: Path
    checkpoint_path: Optional[Path]


@dataclass
class RunSummary:
    out_dir: Path
    seed_results: list[SeedResult]
    aggregate_path: Optional[Path]
    figure_paths: list[Path]

    @property
    def completed_seeds(self) -> list[int]:
        return [r.seed for r in self.seed_results if r.status == "ok"]


def run_experiment(
    config: ExperimentConfig,
    out_dir,
    seeds: Optional[Sequence[int]] = None,
    figures: bool = True,
) -> RunSummary:
    """Run every seed, aggregate the metrics, and render figures.

    One seed's failure (recorded in the summary) never interrupts the
    remaining seeds or corrupts their outputs.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = list(config.seeds if seeds is None else seeds)

    results = []
    for seed in seeds:
        csv_path = out_dir / f"seed_{seed}.csv"
        timing_path = out_dir / f"seed_{seed}.timings.csv"
        ckpt_path = out_dir / f"seed_{seed}.ckpt"
        try:
            episodes = _run_seed(config, seed, csv_path, timing_path, ckpt_path)
            results.append(
                SeedResult(seed, "ok", episodes, csv_path,
                           ckpt_path if episodes > 0 else None)
            )
        except SeedFailure as e:
            logger.error("seed %d aborted: %s", seed, e)
            results.append(SeedResult(seed, f"failed: {e}", 0, csv_path, None))

    aggregate_path = _write_aggregate(out_dir, [r for r in results if r.status == "ok"])
    summary = RunSummary(out_dir, results, aggregate_path, [])
    _write_summary_json(out_dir, config, summary)
    if figures and aggregate_path is not None:
        from .report import render_run

        summary.figure_paths = render_run(out_dir)
    return summary


def _run_seed(config: ExperimentConfig, seed: int, csv_path: Path,
              timing_path: Path, ckpt_path: Path) -> int:
    streams = derive_streams(seed)
    env, graph = build_environment(config, streams.env)
    learner = build_learner(config, env, graph, streams)
    noise = NoiseProcess(config.noise_start, config.noise_final, config.noise_decay_frac)
    total_steps = max(1, config.episodes * config.horizon)
    columns = metric_columns(env.n_agents)

    global_step = 0
    episodes_done = 0
    with open(csv_path, "w", newline="") as fh, open(timing_path, "w", newline="") as th:
        writer = csv.writer(fh)
        writer.writerow(columns)
        twriter = csv.writer(th)
        twriter.writerow(["episode", "wall_clock_s"])
        for episode in range(config.episodes):
            t_start = time.perf_counter()
            obs = env.reset()
            rewards = []
            train_metrics: list[dict] = []
            done = False
            while not done:
                if config.is_actor_critic:
                    sigma = noise.sigma(global_step, total_steps)
                    actions = learner.act(obs, sigma)
                    native = actions
                else:
                    epsilon = linear_decay(
                        global_step, total_steps,
                        config.epsilon_start, config.epsilon_final,
                        config.epsilon_decay_frac,
                    )
                    actions = learner.act(obs, epsilon)
                    native = env.to_native(actions)
                next_obs, reward, done = env.step(native)
                learner.observe(Transition(obs, actions, reward, next_obs, done))
                rewards.append(reward)
                if global_step % config.train_every == 0:
                    if config.fault_nan_seed == seed and config.fault_nan_step == global_step:
                        learner.inject_nan_once()
                    metrics = (
                        learner.train_iteration()
                        if config.is_actor_critic
                        else learner.train_step()
                    )
                    if metrics is not None:
                        if not np.isfinite(metrics["loss"]):
                            raise SeedFailure(
                                f"non-finite loss at step {global_step} "
                                f"(episode {episode})"
                            )
                        train_metrics.append(metrics)
                global_step += 1
                obs = next_obs

            row = _episode_row(episode, rewards, train_metrics, env.n_agents)
            writer.writerow(row)
            fh.flush()
            twriter.writerow([episode, f"{time.perf_counter() - t_start:.6f}"])
            episodes_done += 1

    if episodes_done > 0:
        step_count = learner.iterations if config.is_actor_critic else learner.train_steps
        save_checkpoint(ckpt_path, config.algorithm, seed, step_count, learner.named_arrays())
    return episodes_done


def _episode_row(episode: int, rewards: list, train_metrics: list[dict],
                 n_agents: int) -> list[str]:
    def mean_of(key):
        vals = [m[key] for m in train_metrics]
        return float(np.mean(vals)) if vals else float("nan")

    row = [
        str(episode),
        _fmt(np.mean(rewards) if rewards else float("nan")),
        _fmt(mean_of("td_loss")),
        _fmt(mean_of("cd_loss")),
        _fmt(mean_of("mean_neighbor_kl")),
    ]
    for i in range(n_agents):
        vals = [m["cognition_values"][i] for m in train_metrics]
        row.append(_fmt(np.mean(vals) if vals else float("nan")))
    return row


AGGREGATE_COLUMNS = [
    "episode",
    "reward_mean", "reward_std",
    "td_loss_mean", "td_loss_std",
    "cd_loss_mean", "cd_loss_std",
    "kl_mean", "kl_std",
]


def read_metrics_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(cell) for cell in row] for row in reader]
    data = np.array(rows) if rows else np.zeros((0, len(header)))
    return {name: data[:, i] for i, name in enumerate(header)}


def _write_aggregate(out_dir: Path, ok_results: list[SeedResult]) -> Optional[Path]:
    path = out_dir / "aggregate.csv"
    if not ok_results:
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerow(AGGREGATE_COLUMNS)
        return path
    tables = [read_metrics_csv(r.csv_path) for r in ok_results]
    n_episodes = min(len(t["episode"]) for t in tables)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(AGGREGATE_COLUMNS)
        for ep in range(n_episodes):
            row = [str(ep)]
            for key in ("mean_reward", "td_loss", "cd_loss", "mean_neighbor_kl"):
                vals = np.array([t[key][ep] for t in tables])
                row += [_fmt(vals.mean()), _fmt(vals.std())]
            writer.writerow(row)
    return path


def _write_summary_json(out_dir: Path, config: ExperimentConfig,
                        summary: RunSummary) -> None:
    payload = {
        "algorithm": config.algorithm,
        "env_kind": config.env.kind,
        "topology": str(config.env.topology),
        "seeds": {str(r.seed): r.status for r in summary.seed_results},
        "episodes": config.episodes,
    }
    (out_dir / "summary.json").write_text(json.dumps(payload, indent=2) + "\n")


@dataclass
class EvalResult:
    mean_reward: float
    std_reward: float
    episode_rewards: list[float]


def evaluate_checkpoint(
    checkpoint_path, config: ExperimentConfig, n_episodes: int, seed: int = 0
) -> EvalResult:
    """Greedy deterministic rollouts of a saved policy (no exploration,
    latent means)."""
    ckpt = load_checkpoint(checkpoint_path)
    if ckpt.module != config.algorithm:
        from .checkpoint import CheckpointError

        raise CheckpointError(
            f"checkpoint was trained with '{ckpt.module}', config says "
            f"'{config.algorithm}'"
        )
    streams = derive_streams(seed)
    env, graph = build_environment(config, streams.env)
    learner = build_learner(config, env, graph, streams)
    learner.load_arrays(ckpt.tensors)

    episode_rewards = []
    for _ in range(n_episodes):
        obs = env.reset()
        rewards = []
        done = False
        while not done:
            actions = learner.greedy(obs)
            native = actions if config.is_actor_critic else env.to_native(actions)
            obs, reward, done = env.step(native)
            rewards.append(reward)
        episode_rewards.append(float(np.mean(rewards)))
    arr = np.array(episode_rewards)
    return EvalResult(float(arr.mean()), float(arr.std()), episode_rewards)
