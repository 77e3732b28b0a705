"""Run configuration: YAML files, named presets and validation.

A config file is a mapping with these keys (all optional except ``env``
and either ``methods`` or ``learner`` once ``base`` is resolved):

    base: name of a preset to start from (keys here override it)
    env: {name: boxpushing|warehouse|toy, size: int, scenario: A, primitive: bool, spec: path}
    gamma: discount, required
    episodes: training episodes
    eval_period: episodes between evaluations (default 100)
    eval_episodes: test episodes per evaluation (default 10)
    seeds: list of integer seeds
    eps_start / eps_end / eps_decay: linear exploration schedule
    critic_input: {algorithm: joint-history|state|both}
    methods: {algorithm: {actor_lr, critic_lr, train_freq, target_update, n_step}}
    learner: the same five keys for a single resolved algorithm (written by ``train``)
    algorithm: the resolved algorithm name (written by ``train``)

Algorithm names are ``mac-iac``, ``mac-cac``, ``naive-mac-iacc``,
``mac-iaicc`` plus the primitive baselines ``iac`` and ``cac``, which run
the macro learners on the one-step action set.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from ..algorithms.learners import LearnerConfig
from ..core import ConfigurationError

PRIMITIVE_BASELINES = {"iac": "mac-iac", "cac": "mac-cac"}
METHOD_NAMES = ("iac", "cac", "mac-iac", "mac-cac", "naive-mac-iacc", "mac-iaicc")
LEARNER_KEYS = ("actor_lr", "critic_lr", "train_freq", "target_update", "n_step")


@dataclass
class RunConfig:
    method: str
    env: dict
    learner: LearnerConfig
    episodes: int
    eval_period: int = 100
    eval_episodes: int = 10
    seeds: list = field(default_factory=lambda: [0])

    def validate(self) -> None:
        self.learner.validate()
        if self.episodes < 0:
            raise ConfigurationError("episodes must be >= 0")
        if self.eval_period < 1 or self.eval_episodes < 1:
            raise ConfigurationError("eval_period and eval_episodes must be >= 1")
        if self.env.get("name") not in ("boxpushing", "warehouse", "toy"):
            raise ConfigurationError(f"unknown env {self.env.get('name')!r}")
        if self.env["name"] == "warehouse" and str(self.env.get("scenario", "A")).upper() != "A":
            raise ConfigurationError("only Warehouse scenario A is available")

    def to_dict(self) -> dict:
        lc = self.learner
        d = {
            "algorithm": self.method,
            "env": dict(self.env),
            "gamma": lc.gamma,
            "episodes": self.episodes,
            "eval_period": self.eval_period,
            "eval_episodes": self.eval_episodes,
            "seeds": list(self.seeds),
            "eps_start": lc.eps_start,
            "eps_end": lc.eps_end,
            "eps_decay": lc.eps_decay,
            "learner": {k: getattr(lc, k) for k in LEARNER_KEYS},
        }
        if lc.critic_input is not None:
            d["critic_input"] = {self.method: lc.critic_input}
        return d

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def preset_names() -> list[str]:
    root = resources.files("macac.presets")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_preset(name: str) -> dict:
    path = resources.files("macac.presets") / f"{name}.yaml"
    if not path.is_file():
        raise ConfigurationError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return _resolve(yaml.safe_load(path.read_text()))


def _resolve(d: dict) -> dict:
    d = dict(d or {})
    base = d.pop("base", None)
    if base is None:
        return d
    merged = load_preset(base)
    for k, v in d.items():
        if isinstance(v, dict) and isinstance(merged.get(k), dict):
            merged[k] = {**merged[k], **v}
        else:
            merged[k] = v
    return merged


def load_config_dict(path_or_name: str) -> dict:
    p = Path(path_or_name)
    if p.is_file():
        return _resolve(yaml.safe_load(p.read_text()))
    return load_preset(path_or_name)


def default_preset(env: str, size: int | None = None) -> str:
    if env == "boxpushing":
        return f"boxpushing-{size or 8}"
    if env == "warehouse":
        return "warehouse-a"
    raise ConfigurationError(f"no default preset for env {env!r}")


def build_run_config(d: dict, method: str | None = None) -> RunConfig:
    """Resolve a config mapping (preset or stored run) into a validated RunConfig."""
    method = method or d.get("algorithm")
    if method is None:
        raise ConfigurationError("no algorithm given (use --algo)")
    if method not in METHOD_NAMES:
        raise ConfigurationError(f"unknown algorithm {method!r}; choose from {METHOD_NAMES}")
    if "learner" in d and d.get("algorithm") in (None, method):
        hp = d["learner"]
    elif "methods" in d and method in d["methods"]:
        hp = d["methods"][method]
    else:
        raise ConfigurationError(f"config has no hyperparameters for {method!r}")
    missing = [k for k in LEARNER_KEYS if k not in hp]
    if missing:
        raise ConfigurationError(f"missing hyperparameters for {method}: {missing}")
    if "gamma" not in d:
        raise ConfigurationError("gamma must be set explicitly")
    env = dict(d.get("env") or {})
    if "name" not in env:
        raise ConfigurationError("env.name is required")
    if method in PRIMITIVE_BASELINES:
        if env["name"] != "boxpushing":
            raise ConfigurationError("primitive baselines are only defined for boxpushing")
        env["primitive"] = True
    learner = LearnerConfig(
        algorithm=PRIMITIVE_BASELINES.get(method, method),
        actor_lr=float(hp["actor_lr"]),
        critic_lr=float(hp["critic_lr"]),
        train_freq=int(hp["train_freq"]),
        target_update=int(hp["target_update"]),
        n_step=int(hp["n_step"]),
        gamma=float(d["gamma"]),
        eps_start=float(d.get("eps_start", 1.0)),
        eps_end=float(d.get("eps_end", 0.01)),
        eps_decay=int(d.get("eps_decay", 4000)),
        critic_input=(d.get("critic_input") or {}).get(method),
    )
    cfg = RunConfig(
        method=method,
        env=env,
        learner=learner,
        episodes=int(d.get("episodes", 40000)),
        eval_period=int(d.get("eval_period", 100)),
        eval_episodes=int(d.get("eval_episodes", 10)),
        seeds=[int(s) for s in d.get("seeds", [0])],
    )
    cfg.validate()
    return cfg
