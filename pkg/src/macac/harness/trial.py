"""Training trial loop, evaluation and learner checkpoints."""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np
import yaml

from ..algorithms.learners import EnvInfo, Learner, make_learner
from ..buffers import TrajectoryBuffer
from ..core import ConfigurationError, EpisodeLog, MacroEnv, run_episode
from ..envs.boxpushing import BoxPushing
from ..envs.toy import ToyEnv, ToySpec
from ..envs.warehouse import Warehouse
from ..nn import checkpoint
from .config import RunConfig, build_run_config

CSV_NAME = "eval.csv"
CONFIG_NAME = "config.yaml"
CHECKPOINT_NAME = "final.ckpt"


def make_env(env_cfg: dict, gamma: float) -> MacroEnv:
    name = env_cfg["name"]
    if name == "boxpushing":
        return BoxPushing(size=int(env_cfg.get("size", 8)), gamma=gamma,
                          primitive=bool(env_cfg.get("primitive", False)))
    if name == "warehouse":
        return Warehouse(gamma=gamma)
    if name == "toy":
        spec = ToySpec.from_text(Path(env_cfg["spec"]).read_text())
        spec.gamma = gamma
        return ToyEnv(spec)
    raise ConfigurationError(f"unknown env {name!r}")


def epsilon_at(episode: int, start: float, end: float, decay: int) -> float:
    """Linear decay from ``start`` to ``end`` over ``decay`` episodes, then flat."""
    return max(end, start - (start - end) * episode / decay)


def evaluate(learner: Learner, env: MacroEnv, n_episodes: int, seed: int, episode: int) -> list[float]:
    """Discounted returns of ``n_episodes`` test runs with exploration off.

    Uses its own random stream so evaluation never perturbs training.
    """
    out = []
    for k in range(n_episodes):
        rng = np.random.default_rng([seed, 2, episode, k])
        s = run_episode(env, learner.policy(), 0.0, rng=rng, env_seed=k)
        out.append(s.discounted_return)
    return out


def _csv_header(n: int) -> list[str]:
    return ["episode", "mean_return"] + [f"return_{k}" for k in range(n)]


def _csv_row(episode: int, returns: list[float]) -> list[str]:
    return [str(episode), repr(float(np.mean(returns)))] + [repr(float(r)) for r in returns]


def save_learner(path, learner: Learner, config: RunConfig, episodes_done: int) -> None:
    arrays = {}
    arch = {}
    for name, net in learner.named_nets().items():
        arch[name] = net.architecture()
        for k, v in net.params.items():
            arrays[f"{name}/{k}"] = v
    meta = {
        "config": config.to_dict(),
        "config_hash": config.hash(),
        "architecture": arch,
        "seed": learner.seed,
        "version": learner.version,
        "episodes": episodes_done,
    }
    checkpoint.save(path, arrays, meta)


def load_learner(path) -> tuple[Learner, RunConfig, MacroEnv]:
    arrays, meta = checkpoint.load(path)
    config = build_run_config(meta["config"])
    env = make_env(config.env, config.learner.gamma)
    learner = make_learner(EnvInfo.from_env(env), config.learner, meta["seed"])
    for name, net in learner.named_nets().items():
        if net.architecture() != meta["architecture"][name]:
            raise ConfigurationError(f"checkpoint architecture mismatch for {name}")
        net.load_params({k: arrays[f"{name}/{k}"] for k in net.params})
    learner.version = meta["version"]
    return learner, config, env


def run_trial(config: RunConfig, seed: int, out_dir, progress=None) -> Path:
    """Train one seed; write config, evaluation CSV and final checkpoint to ``out_dir``."""
    config.validate()
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / CONFIG_NAME).write_text(config.to_yaml(), encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot write to output directory {out}: {exc}") from exc

    lc = config.learner
    env = make_env(config.env, lc.gamma)
    eval_env = make_env(config.env, lc.gamma)
    learner = make_learner(EnvInfo.from_env(env), lc, seed)
    buffer = TrajectoryBuffer()
    rng = np.random.default_rng([seed, 1])

    csv_path = out / CSV_NAME
    with open(csv_path, "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(_csv_header(config.eval_episodes))
        writer.writerow(_csv_row(0, evaluate(learner, eval_env, config.eval_episodes, seed, 0)))
        fp.flush()
        for e in range(config.episodes):
            eps = epsilon_at(e, lc.eps_start, lc.eps_end, lc.eps_decay)
            log = EpisodeLog(env.n_agents, policy_version=learner.version)
            run_episode(env, learner.policy(), eps, log, rng=rng, env_seed=e)
            buffer.add(log)
            done = e + 1
            if done % lc.train_freq == 0:
                learner.train_round(buffer.episodes)
                buffer.reset()
            if done % lc.target_update == 0:
                learner.sync_targets()
            if done % config.eval_period == 0:
                returns = evaluate(learner, eval_env, config.eval_episodes, seed, done)
                writer.writerow(_csv_row(done, returns))
                fp.flush()
                if progress is not None:
                    progress(done, float(np.mean(returns)))
    save_learner(out / CHECKPOINT_NAME, learner, config, config.episodes)
    return out


def read_eval_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Return (episodes, mean returns) from an evaluation CSV."""
    with open(path, encoding="utf-8") as fp:
        rows = list(csv.DictReader(fp))
    return (np.array([int(r["episode"]) for r in rows], dtype=np.int64),
            np.array([float(r["mean_return"]) for r in rows]))


def load_run_config(run_dir) -> RunConfig:
    return build_run_config(yaml.safe_load((Path(run_dir) / CONFIG_NAME).read_text()))


def transcript(env: MacroEnv, learner: Learner, seed: int, epsilon: float = 0.0) -> tuple[str, float]:
    """Replay one episode; return a line-per-macro transcript and the discounted return."""
    log = EpisodeLog(env.n_agents)
    summary = run_episode(env, learner.policy(), epsilon, log, rng=np.random.default_rng([seed, 3]),
                          env_seed=seed)
    buf = io.StringIO()
    buf.write(f"seed={seed} epsilon={epsilon}\n")
    for i in range(env.n_agents):
        start = 0
        for rec in log.agent_steps[i]:
            if rec.terminated or rec.t == len(log.steps) - 1:
                rewards = [s.r for s in log.steps[start:rec.t + 1]]
                buf.write(
                    f"agent {i} t={start:3d} macro={env.macro_name(i, rec.m)} "
                    f"duration={rec.t + 1 - start} reward_sum={sum(rewards):g}\n"
                )
                start = rec.t + 1
    # report rewards that differ from the usual per-step value (0 or a step cost)
    values, counts = np.unique(log.rewards, return_counts=True)
    usual = values[np.argmax(counts)] if len(values) else 0.0
    for t, s in enumerate(log.steps):
        if s.r != usual:
            buf.write(f"event t={t} reward {s.r:+g}\n")
    buf.write(f"length={summary.length} terminal={summary.terminal} "
              f"total_reward={summary.total_reward:g} discounted_return={summary.discounted_return!r}\n")
    return buf.getvalue(), summary.discounted_return
