"""Command-line entry point: train, eval, replay, aggregate, plotdata."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .core import ConfigurationError
from .harness import analysis
from .harness.config import build_run_config, default_preset, load_config_dict
from .harness.trial import evaluate, load_learner, run_trial, transcript


def _resolve_config(args):
    source = args.config or default_preset(args.env, args.size)
    d = load_config_dict(source)
    env = dict(d.get("env") or {})
    if args.env:
        if env.get("name") not in (None, args.env):
            raise ConfigurationError(f"--env {args.env} conflicts with config env {env.get('name')}")
        env["name"] = args.env
    if args.size is not None:
        env["size"] = args.size
    if args.scenario is not None:
        env["scenario"] = args.scenario
    d["env"] = env
    if args.episodes is not None:
        d["episodes"] = args.episodes
    return build_run_config(d, args.algo)


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    seeds = [args.seed] if args.seed is not None else cfg.seeds
    out = Path(args.out or "runs")
    for seed in seeds:
        run_dir = out / cfg.method / f"seed{seed}" if len(seeds) > 1 or args.out is None else out
        progress = None
        if not args.quiet:
            def progress(ep, mean, seed=seed):
                print(f"[{cfg.method} seed {seed}] episode {ep}: mean return {mean:.3f}", flush=True)
        run_trial(cfg, seed, run_dir, progress)
        print(run_dir)
    return 0


def cmd_eval(args) -> int:
    learner, cfg, env = load_learner(args.checkpoint)
    returns = evaluate(learner, env, args.n or cfg.eval_episodes, args.seed or 0, 0)
    print(f"mean_return {float(np.mean(returns))!r}")
    for k, r in enumerate(returns):
        print(f"return_{k} {r!r}")
    return 0


def cmd_replay(args) -> int:
    learner, _, env = load_learner(args.checkpoint)
    text, _ = transcript(env, learner, args.seed or 0, args.epsilon)
    sys.stdout.write(text)
    if args.render:
        sys.stdout.write(env.render() + "\n")
    return 0


def cmd_aggregate(args) -> int:
    dirs = []
    for p in args.runs:
        p = Path(p)
        if (p / "config.yaml").is_file():
            dirs.append(p)
        else:
            dirs += sorted(c.parent for c in p.rglob("config.yaml"))
    if not dirs:
        raise ConfigurationError("no run directories found")
    summaries = analysis.aggregate(dirs, args.window)
    analysis.write_summary(summaries, args.out or "summary.csv")
    for s in summaries:
        print(f"{s.method}: seeds={s.n_seeds} final mean={s.mean[-1]:.3f} se={s.stderr[-1]:.3f}")
    return 0


def cmd_plotdata(args) -> int:
    summaries = analysis.read_summary(args.summary)
    analysis.emit_plotdata(summaries, args.out or "plotdata.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="macac", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one algorithm for one or more seeds")
    t.add_argument("--env", choices=["boxpushing", "warehouse", "toy"])
    t.add_argument("--size", type=int)
    t.add_argument("--scenario")
    t.add_argument("--algo", required=True)
    t.add_argument("--seed", type=int, help="single seed (default: the config's seed list)")
    t.add_argument("--episodes", type=int)
    t.add_argument("--config", help="preset name or YAML file")
    t.add_argument("--out", help="output directory")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint with exploration off")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--seed", type=int)
    e.add_argument("-n", type=int, help="number of test episodes")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("replay", help="print a transcript of one episode")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--epsilon", type=float, default=0.0)
    r.add_argument("--render", action="store_true", help="also print the final environment state")
    r.set_defaults(func=cmd_replay)

    a = sub.add_parser("aggregate", help="mean and standard error across seeds")
    a.add_argument("runs", nargs="+", help="run directories or parents of run directories")
    a.add_argument("--window", type=int, default=10)
    a.add_argument("--out")
    a.set_defaults(func=cmd_aggregate)

    d = sub.add_parser("plotdata", help="convert a summary into plot-ready CSV")
    d.add_argument("summary")
    d.add_argument("--out")
    d.set_defaults(func=cmd_plotdata)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
