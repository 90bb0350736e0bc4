"""Command-line interface.

Subcommands: ``train`` (run an experiment config, write CSVs, checkpoints,
and figures), ``eval`` (greedy rollouts of a checkpoint), ``report``
(re-render figures for a finished run), ``gradcheck`` (finite-difference
suite), ``oracle`` (reference-oracle suite). Exit codes: 0 success,
1 failure with diagnostics, 2 usage errors.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

OUT_DIR_ENV = "NCCMARL_OUT_DIR"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nccmarl",
        description="neighborhood-consistent multi-agent RL experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run all seeds of an experiment config")
    train.add_argument("--config", required=True, type=Path, help="experiment JSON")
    train.add_argument("--seeds", type=int, nargs="+", default=None,
                       help="override the config's seed list")
    train.add_argument("--out", type=Path, default=None,
                       help=f"output directory (default runs/<config stem>; "
                            f"base overridable via ${OUT_DIR_ENV})")
    train.add_argument("--no-figures", action="store_true",
                       help="skip figure rendering")

    ev = sub.add_parser("eval", help="greedy rollouts of a saved checkpoint")
    ev.add_argument("--checkpoint", required=True, type=Path)
    ev.add_argument("--config", required=True, type=Path)
    ev.add_argument("--episodes", type=int, default=20)
    ev.add_argument("--seed", type=int, default=0)

    rep = sub.add_parser("report", help="render figures for a finished run")
    rep.add_argument("--run-dir", required=True, type=Path)
    rep.add_argument("--out", type=Path, default=None,
                     help="write figures here instead of into the run dir")

    gc = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--trials", type=int, default=100)

    orc = sub.add_parser("oracle", help="reference-oracle comparison suite")
    orc.add_argument("--seed", type=int, default=0)
    return parser


def _default_out_dir(config_path: Path) -> Path:
    base = Path(os.environ.get(OUT_DIR_ENV, "runs"))
    return base / config_path.stem


def _cmd_train(args) -> int:
    from .config import load_config
    from .harness import run_experiment

    config = load_config(args.config)
    out_dir = args.out if args.out is not None else _default_out_dir(args.config)
    summary = run_experiment(
        config, out_dir, seeds=args.seeds, figures=not args.no_figures
    )
    for result in summary.seed_results:
        print(f"seed {result.seed}: {result.status} "
              f"({result.episodes_completed} episodes)")
    print(f"outputs in {summary.out_dir}")
    if summary.figure_paths:
        print("figures: " + ", ".join(p.name for p in summary.figure_paths))
    return 0 if summary.completed_seeds else 1


def _cmd_eval(args) -> int:
    from .config import load_config
    from .harness import evaluate_checkpoint

    config = load_config(args.config)
    result = evaluate_checkpoint(args.checkpoint, config, args.episodes, args.seed)
    print(f"episodes: {args.episodes}")
    print(f"mean reward: {result.mean_reward:.6f} +/- {result.std_reward:.6f}")
    return 0


def _cmd_report(args) -> int:
    from .report import render_run

    if not (args.run_dir / "aggregate.csv").is_file():
        print(f"error: {args.run_dir} has no aggregate.csv (not a run directory?)",
              file=sys.stderr)
        return 1
    written = render_run(args.run_dir, args.out)
    for path in written:
        print(f"wrote {path}")
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck_suite

    t0 = time.perf_counter()
    results = run_gradcheck_suite(seed=args.seed, trials=args.trials)
    for result in results:
        print(result.line())
    elapsed = time.perf_counter() - t0
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed "
          f"in {elapsed:.1f}s")
    return 1 if failed else 0


def _cmd_oracle(args) -> int:
    from .gradcheck import run_oracle_suite

    results = run_oracle_suite(seed=args.seed)
    for result in results:
        print(result.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} oracles passed")
    return 1 if failed else 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    handlers = {
        "train": _cmd_train,
        "eval": _cmd_eval,
        "report": _cmd_report,
        "gradcheck": _cmd_gradcheck,
        "oracle": _cmd_oracle,
    }
    try:
        return handlers[args.command](args)
    except Exception as e:  # noqa: BLE001 - CLI boundary: diagnostics, not tracebacks
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
