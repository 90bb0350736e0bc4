"""Figure rendering for finished runs: learning curves, per-agent
cognition-value traces, and neighborhood-KL curves, written as PNGs next
to the metrics CSVs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .harness import read_metrics_csv

SEED_LINE = dict(alpha=0.35, linewidth=0.9)
MEAN_LINE = dict(linewidth=2.0)


def _seed_tables(run_dir: Path) -> dict[int, dict[str, np.ndarray]]:
    tables = {}
    for path in sorted(run_dir.glob("seed_*.csv")):
        if path.name.endswith(".timings.csv"):
            continue
        seed = int(path.stem.split("_")[1])
        table = read_metrics_csv(path)
        if len(table["episode"]):
            tables[seed] = table
    return tables


def render_run(run_dir, out_dir=None) -> list[Path]:
    """Render all figures for one run directory; returns written paths."""
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir is not None else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    agg = read_metrics_csv(run_dir / "aggregate.csv")
    seeds = _seed_tables(run_dir)
    written = []

    # episode reward: per-seed traces behind the cross-seed mean +/- std band
    fig, ax = plt.subplots(figsize=(7, 4.2))
    for seed, table in seeds.items():
        ax.plot(table["episode"], table["mean_reward"], color="tab:blue", **SEED_LINE)
    if len(agg["episode"]):
        ax.plot(agg["episode"], agg["reward_mean"], color="tab:blue",
                label="mean over seeds", **MEAN_LINE)
        ax.fill_between(
            agg["episode"],
            agg["reward_mean"] - agg["reward_std"],
            agg["reward_mean"] + agg["reward_std"],
            color="tab:blue", alpha=0.2, linewidth=0,
        )
    ax.set_xlabel("episode")
    ax.set_ylabel("mean step reward")
    ax.legend(loc="lower right")
    written.append(_save(fig, out_dir / "rewards.png"))

    # training losses
    fig, axes = plt.subplots(1, 2, figsize=(10, 4.2))
    for ax, key, label in (
        (axes[0], "td_loss", "TD loss"),
        (axes[1], "cd_loss", "dissonance loss"),
    ):
        for table in seeds.values():
            ax.plot(table["episode"], table[key], color="tab:orange", **SEED_LINE)
        if len(agg["episode"]):
            ax.plot(agg["episode"], agg[f"{key.split('_')[0]}_loss_mean"],
                    color="tab:orange", **MEAN_LINE)
        ax.set_xlabel("episode")
        ax.set_ylabel(label)
    written.append(_save(fig, out_dir / "losses.png"))

    # neighborhood KL
    fig, ax = plt.subplots(figsize=(7, 4.2))
    for table in seeds.values():
        ax.plot(table["episode"], table["mean_neighbor_kl"], color="tab:green", **SEED_LINE)
    if len(agg["episode"]):
        ax.plot(agg["episode"], agg["kl_mean"], color="tab:green",
                label="mean over seeds", **MEAN_LINE)
    ax.set_xlabel("episode")
    ax.set_ylabel("mean neighbor KL")
    ax.legend(loc="upper right")
    written.append(_save(fig, out_dir / "neighbor_kl.png"))

    # per-agent cognition values (first seed): consistency shows as the
    # per-agent traces converging onto each other
    if seeds:
        first = seeds[min(seeds)]
        agent_cols = sorted(
            (c for c in first if c.startswith("cognition_value_")),
            key=lambda c: int(c.rsplit("_", 1)[1]),
        )
        fig, ax = plt.subplots(figsize=(7, 4.2))
        for col in agent_cols:
            ax.plot(first["episode"], first[col], linewidth=1.4,
                    label=f"agent {col.rsplit('_', 1)[1]}")
        ax.set_xlabel("episode")
        ax.set_ylabel("cognition value (mean latent component)")
        ax.legend(loc="best", fontsize=8)
        written.append(_save(fig, out_dir / "cognition_values.png"))

    return written


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
