"""Command-line surface: train, eval, baseline, rollout, dump-action-table."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .action_codec import build_discrete_table, dump_action_table
from .config import FullConfig, build_config, load_config
from .drl import save_checkpoint, save_training_log, train
from .env_sim import Environment
from .pipeline import (
    BaselinePolicy,
    CheckpointPolicy,
    aggregate_metrics,
    eval_grid,
    export_metrics,
    export_trajectories,
    run_episode,
    run_episode_baseline,
)


def _load(args) -> FullConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = build_config({})
    if args.timing_mode:
        import dataclasses
        pipeline = dataclasses.replace(cfg.pipeline, timing_mode=args.timing_mode)
        cfg = dataclasses.replace(cfg, pipeline=pipeline)
    return cfg


def _parts(cfg: FullConfig):
    chain = cfg.chain
    env = Environment(cfg.pipeline.world, cfg.pipeline.rewards, chain)
    table = build_discrete_table(chain, cfg.pipeline.codec)
    return chain, env, table


def cmd_train(args) -> int:
    cfg = _load(args)
    import dataclasses
    dqn = dataclasses.replace(cfg.dqn, seed=args.seed)
    chain, env, table = _parts(cfg)
    agent, rows = train(env, table, cfg.pipeline, dqn, args.episodes)
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(os.path.join(args.out, "policy.npz"), agent, cfg.hash())
    save_training_log(rows, os.path.join(args.out, "training_log.csv"))
    print(f"trained {len(rows)} episodes -> {args.out}/policy.npz")
    return 0


def cmd_eval(args) -> int:
    cfg = _load(args)
    chain, _, _ = _parts(cfg)
    policy = CheckpointPolicy(args.policy) if args.policy else BaselinePolicy()
    name = "policy" if args.policy else "baseline"
    metrics, results = eval_grid(policy, cfg.pipeline, chain,
                                 master_seed=args.seed, workers=args.workers,
                                 method_name=name)
    os.makedirs(args.out, exist_ok=True)
    export_metrics([metrics], os.path.join(args.out, "metrics.csv"))
    export_trajectories(results, os.path.join(args.out, "trajectories.csv"))
    print(f"{metrics.episodes} episodes, success {metrics.success_pct:.1f}% "
          f"-> {args.out}/metrics.csv")
    return 0


def cmd_baseline(args) -> int:
    cfg = _load(args)
    chain, env, table = _parts(cfg)
    rng = np.random.default_rng(args.seed)
    results = []
    for ep in range(args.episodes):
        seed = int(rng.integers(0, 2 ** 31))
        results.append(run_episode_baseline(env, table, cfg.pipeline, seed=seed))
    metrics = aggregate_metrics(results, "baseline")
    os.makedirs(args.out, exist_ok=True)
    export_metrics([metrics], os.path.join(args.out, "metrics.csv"))
    export_trajectories(results, os.path.join(args.out, "trajectories.csv"))
    print(f"baseline: {metrics.success_pct:.1f}% success over {len(results)} episodes")
    return 0


def cmd_rollout(args) -> int:
    cfg = _load(args)
    chain, env, table = _parts(cfg)
    policy = CheckpointPolicy(args.policy) if args.policy else BaselinePolicy()
    rng = np.random.default_rng(args.seed)
    results = []
    for ep in range(args.episodes):
        seed = int(rng.integers(0, 2 ** 31))
        results.append(run_episode(policy, env, table, cfg.pipeline, seed=seed))
    os.makedirs(args.out, exist_ok=True)
    export_trajectories(results, os.path.join(args.out, "trajectories.csv"))
    for ep, r in enumerate(results):
        print(f"episode {ep}: {r.outcome.value}, reward {r.cumulative_reward:.2f}, "
              f"{r.rl_steps} steps")
    return 0


def cmd_dump_action_table(args) -> int:
    cfg = _load(args)
    chain = cfg.chain
    table = build_discrete_table(chain, cfg.pipeline.codec)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "action_table.csv")
    dump_action_table(table, path)
    print(f"{len(table)} actions -> {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="multimpc",
        description="Multi-model NMPC motion planning for a mobile manipulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=str, default=None, help="YAML config path")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", type=str, default="out")
        p.add_argument("--timing-mode", choices=["synchronous", "realtime"],
                       default=None)

    p = sub.add_parser("train", help="train the DQN policy")
    common(p)
    p.add_argument("--episodes", type=int, default=500)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run the 108-configuration evaluation grid")
    common(p)
    p.add_argument("--policy", type=str, default=None, help="checkpoint path")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="run seeded whole-body baseline episodes")
    common(p)
    p.add_argument("--episodes", type=int, default=10)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("rollout", help="roll out a policy on seeded episodes")
    common(p)
    p.add_argument("--policy", type=str, default=None, help="checkpoint path")
    p.add_argument("--episodes", type=int, default=1)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("dump-action-table", help="export the discrete action table")
    common(p)
    p.set_defaults(func=cmd_dump_action_table)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
