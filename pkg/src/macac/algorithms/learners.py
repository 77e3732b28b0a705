"""The four macro-action actor-critic learners and a primitive IAC reference.

Every learner consumes complete episode logs collected by the current
policy, squeezes them the way its critic needs, takes one Adam step on each
critic, then one Adam step on each actor using advantages
``y - V(h)`` where ``y`` is the (n-step) target built from the target critic.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from ..buffers import pad_sequences, squeeze_agent, squeeze_iaicc, squeeze_joint
from ..core import ConfigurationError, EpisodeLog, MacroEnv
from ..nn.network import CENTRALIZED_SIZES, DECENTRALIZED_SIZES, RecurrentNet, target_sync
from ..nn.optim import Adam, global_norm
from .policies import CentralizedPolicy, DecentralizedPolicy, joint_input, local_input
from .targets import n_step_targets, score_logit_grad

ALGORITHMS = ("mac-iac", "mac-cac", "naive-mac-iacc", "mac-iaicc", "primitive-iac")
CRITIC_INPUTS = ("local", "joint-history", "state", "both")


@dataclass
class EnvInfo:
    n_agents: int
    obs_dims: tuple[int, ...]
    n_macros: tuple[int, ...]
    state_dim: int
    gamma: float

    @classmethod
    def from_env(cls, env: MacroEnv) -> "EnvInfo":
        env.reset(0)
        n = env.n_agents
        return cls(n, tuple(env.obs_dim(i) for i in range(n)),
                   tuple(env.n_macros(i) for i in range(n)), env.state_dim, env.gamma)


@dataclass
class LearnerConfig:
    algorithm: str
    actor_lr: float
    critic_lr: float
    train_freq: int
    target_update: int
    n_step: int
    gamma: float
    eps_start: float = 1.0
    eps_end: float = 0.01
    eps_decay: int = 4000
    critic_input: str | None = None
    actor_sizes: tuple | None = None
    critic_sizes: tuple | None = None

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        for name in ("actor_lr", "critic_lr"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        for name in ("train_freq", "target_update"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.n_step < 0:
            raise ConfigurationError("n_step must be >= 0")
        if not 0 < self.gamma <= 1:
            raise ConfigurationError("gamma must be in (0, 1]")
        if not (0 <= self.eps_end <= self.eps_start <= 1):
            raise ConfigurationError("need 0 <= eps_end <= eps_start <= 1")
        if self.eps_decay < 1:
            raise ConfigurationError("eps_decay must be >= 1")
        allowed = {
            "mac-iac": ("local",),
            "primitive-iac": ("local",),
            "mac-cac": ("joint-history",),
            "naive-mac-iacc": ("joint-history", "state", "both"),
            "mac-iaicc": ("joint-history", "state", "both"),
        }[self.algorithm]
        if self.resolved_critic_input() not in allowed:
            raise ConfigurationError(
                f"{self.algorithm} critic input must be one of {allowed}, got {self.critic_input!r}"
            )

    def resolved_critic_input(self) -> str:
        if self.critic_input is not None:
            return self.critic_input
        return {"mac-iac": "local", "primitive-iac": "local"}.get(self.algorithm, "joint-history")

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        for k in ("actor_sizes", "critic_sizes"):
            if out[k] is not None:
                out[k] = list(out[k])
        return out


def net_seed(seed: int, name: str) -> np.random.SeedSequence:
    """Initialization seed for a named network, stable across algorithms."""
    return np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])


# ---------------------------------------------------------------------------
# per-episode features


@dataclass
class EpisodeData:
    log: EpisodeLog
    agent: list = field(default_factory=list)  # squeezed transitions per agent
    joint: list = field(default_factory=list)


def _local_sequence(trans, obs_dim, n_macros) -> np.ndarray:
    rows = [local_input(trans[0].z, None, n_macros)]
    for k in range(1, len(trans)):
        rows.append(local_input(trans[k].z, trans[k - 1].m, n_macros))
    rows.append(local_input(trans[-1].z_next, trans[-1].m, n_macros))
    return np.stack(rows)


def _joint_sequence(jtrans, n_macros) -> np.ndarray:
    n = len(n_macros)
    rows = [joint_input(jtrans[0].z, (None,) * n, n_macros)]
    for k in range(1, len(jtrans)):
        rows.append(joint_input(jtrans[k].z, jtrans[k - 1].m, n_macros))
    rows.append(joint_input(jtrans[-1].z_next, jtrans[-1].m, n_macros))
    return np.stack(rows)


def _state_sequence(jtrans) -> np.ndarray:
    rows = [np.asarray(tr.state, dtype=np.float32) for tr in jtrans]
    rows.append(np.asarray(jtrans[-1].next_state, dtype=np.float32))
    return np.stack(rows)


@dataclass
class TDProblem:
    """Critic rows of one episode, indexing into that episode's input sequence."""

    value_idx: np.ndarray
    boot_idx: np.ndarray
    rc: np.ndarray
    tau: np.ndarray
    done: np.ndarray


def _rows_problem(trans) -> TDProblem:
    K = len(trans)
    return TDProblem(
        np.arange(K), np.arange(1, K + 1),
        np.array([t.rc for t in trans]), np.array([t.tau for t in trans]),
        np.array([t.done for t in trans], dtype=bool),
    )


# ---------------------------------------------------------------------------
# learners


class Learner:
    """Shared machinery: network construction, critic and actor steps."""

    algorithm = ""

    def __init__(self, info: EnvInfo, config: LearnerConfig, seed: int = 0):
        config.validate()
        if config.algorithm != self.algorithm:
            raise ConfigurationError(f"{type(self).__name__} cannot run {config.algorithm!r}")
        self.info = info
        self.config = config
        self.seed = int(seed)
        self.gamma = config.gamma
        self.critic_input = config.resolved_critic_input()
        self.version = 0
        self.actors: list[RecurrentNet] = []
        self.critics: list[RecurrentNet] = []
        self.targets: list[RecurrentNet] = []
        self._build()
        self.actor_opts = [Adam(a.params, config.actor_lr) for a in self.actors]
        self.critic_opts = [Adam(c.params, config.critic_lr) for c in self.critics]
        self.targets = [target_sync(c) for c in self.critics]

    # -- construction helpers --------------------------------------------
    def _net(self, name, in_dim, out_dim, head, centralized, head_splits=None, kind="actor"):
        override = self.config.actor_sizes if kind == "actor" else self.config.critic_sizes
        sizes = override or (CENTRALIZED_SIZES if centralized else DECENTRALIZED_SIZES)
        return RecurrentNet(in_dim, out_dim, head, sizes=sizes, seed=net_seed(self.seed, name),
                            head_splits=head_splits)

    def _local_dim(self, i):
        return self.info.obs_dims[i] + self.info.n_macros[i]

    def _joint_dim(self):
        return sum(self._local_dim(i) for i in range(self.info.n_agents))

    def _central_input_dim(self):
        return {
            "joint-history": self._joint_dim(),
            "state": self.info.state_dim,
            "both": self._joint_dim() + self.info.state_dim,
        }[self.critic_input]

    def _central_sequence(self, d: EpisodeData) -> np.ndarray:
        if self.critic_input == "joint-history":
            return _joint_sequence(d.joint, self.info.n_macros)
        if self.critic_input == "state":
            return _state_sequence(d.joint)
        return np.concatenate([_joint_sequence(d.joint, self.info.n_macros),
                               _state_sequence(d.joint)], axis=1)

    def _build(self):
        raise NotImplementedError

    # -- public API -------------------------------------------------------
    def policy(self):
        raise NotImplementedError

    def named_nets(self) -> dict[str, RecurrentNet]:
        out = {}
        for i, a in enumerate(self.actors):
            out[f"actor{i}"] = a
        for i, c in enumerate(self.critics):
            out[f"critic{i}"] = c
        for i, c in enumerate(self.targets):
            out[f"target{i}"] = c
        return out

    def sync_targets(self) -> None:
        self.targets = [target_sync(c) for c in self.critics]

    def _prepare(self, episodes: Sequence[EpisodeLog]) -> list[EpisodeData]:
        if not episodes:
            raise ValueError("train_round needs at least one episode")
        for ep in episodes:
            if ep.policy_version is not None and ep.policy_version != self.version:
                raise ConfigurationError(
                    f"off-policy episode: collected by version {ep.policy_version}, "
                    f"learner is at version {self.version}"
                )
        data = []
        for ep in episodes:
            term = ep.terminal
            d = EpisodeData(ep)
            d.agent = [squeeze_agent(ep.agent_steps[i], self.gamma, term) for i in range(ep.n_agents)]
            d.joint = squeeze_joint(ep.steps, self.gamma, term, ep.final_state)
            data.append(d)
        return data

    def train_round(self, episodes: Sequence[EpisodeLog]) -> dict:
        data = self._prepare(episodes)
        diag = self._train(data)
        self.version += 1
        return diag

    def _train(self, data: list[EpisodeData]) -> dict:
        raise NotImplementedError

    # -- update steps ------------------------------------------------------
    def _critic_step(self, k: int, seqs: list[np.ndarray], problems: list[TDProblem]):
        """One critic update; returns per-episode (targets, live values)."""
        critic, target = self.critics[k], self.targets[k]
        X, _ = pad_sequences(seqs)
        V, _, cache = critic.forward(X)
        Vt, _, _ = target.forward(X)
        count = sum(len(p.value_idx) for p in problems)
        grad = np.zeros(V.shape, dtype=np.float64)
        ys, vs = [], []
        for b, p in enumerate(problems):
            y = n_step_targets(p.rc, p.tau, p.done, Vt[p.boot_idx, b], self.gamma, self.config.n_step)
            v = V[p.value_idx, b].astype(np.float64)
            np.add.at(grad[:, b], p.value_idx, -2.0 * (y - v) / max(count, 1))
            ys.append(y)
            vs.append(v)
        grads = critic.backward(cache, grad)
        self.critic_opts[k].step(critic.params, grads)
        deltas = np.concatenate([y - v for y, v in zip(ys, vs)]) if count else np.zeros(0)
        return ys, vs, {
            "critic_loss": float(np.mean(deltas**2)) if count else 0.0,
            "td_abs": float(np.mean(np.abs(deltas))) if count else 0.0,
            "critic_grad_norm": global_norm(grads),
        }

    def _actor_step(self, k: int, seqs, rows):
        """One actor update.

        ``rows[b]`` is a list of (input index, head index, macro, advantage)
        for episode b. The loss is the mean over distinct (episode, input)
        rows of -sum over heads of log pi * A.
        """
        actor = self.actors[k]
        X, _ = pad_sequences(seqs)
        P, _, cache = actor.forward(X)
        dlogits = np.zeros(P.shape, dtype=np.float64)
        bounds = np.concatenate([[0], np.cumsum(actor.head_splits)])
        n_rows = sum(len({r[0] for r in rs}) for rs in rows)
        ent = []
        for b, rs in enumerate(rows):
            for t, head, m, adv in rs:
                sl = slice(bounds[head], bounds[head + 1])
                p = P[t, b, sl].astype(np.float64)
                dlogits[t, b, sl] += score_logit_grad(p[None], [m], np.array([adv]))[0] / n_rows
                ent.append(-float(np.sum(p * np.log(np.maximum(p, 1e-12)))))
        grads = actor.backward(cache, dlogits, wrt="logits")
        self.actor_opts[k].step(actor.params, grads)
        return {"entropy": float(np.mean(ent)) if ent else 0.0, "actor_grad_norm": global_norm(grads)}


class MacIAC(Learner):
    """Independent actors, each with a local history critic."""

    algorithm = "mac-iac"

    def _build(self):
        for i in range(self.info.n_agents):
            d, M = self._local_dim(i), self.info.n_macros[i]
            self.actors.append(self._net(f"actor{i}", d, M, "softmax", False))
            self.critics.append(self._net(f"critic{i}", d, 1, "value", False, kind="critic"))

    def policy(self):
        return DecentralizedPolicy(self.actors, self.info.n_macros)

    def _agent_sequences(self, data, i):
        return [_local_sequence(d.agent[i], self.info.obs_dims[i], self.info.n_macros[i]) for d in data]

    def _train(self, data):
        diag = {}
        for i in range(self.info.n_agents):
            seqs = self._agent_sequences(data, i)
            problems = [_rows_problem(d.agent[i]) for d in data]
            ys, vs, cd = self._critic_step(i, seqs, problems)
            rows = [
                [(k, 0, tr.m, y[k] - v[k]) for k, tr in enumerate(d.agent[i])]
                for d, y, v in zip(data, ys, vs)
            ]
            ad = self._actor_step(i, seqs, rows)
            for key, val in {**cd, **ad}.items():
                diag[f"{key}/{i}"] = val
        return diag


class PrimitiveIAC(MacIAC):
    """Reference per-step IAC update working on raw records (no squeezing).

    Only meaningful when every macro lasts one primitive step.
    """

    algorithm = "primitive-iac"

    def _prepare(self, episodes):
        for ep in episodes:
            for recs in ep.agent_steps:
                if not all(r.terminated for r in recs):
                    raise ConfigurationError("primitive IAC requires one-step macros")
        return list(episodes)

    def _train(self, episodes):
        diag = {}
        for i in range(self.info.n_agents):
            M = self.info.n_macros[i]
            seqs, problems, rows = [], [], []
            for ep in episodes:
                recs = ep.agent_steps[i]
                x = [local_input(recs[0].z, None, M)]
                x += [local_input(recs[t].z, recs[t - 1].m, M) for t in range(1, len(recs))]
                x.append(local_input(recs[-1].z_next, recs[-1].m, M))
                seqs.append(np.stack(x))
                T = len(recs)
                done = np.zeros(T, dtype=bool)
                done[-1] = ep.terminal
                problems.append(TDProblem(np.arange(T), np.arange(1, T + 1),
                                          np.array([r.r for r in recs]), np.ones(T), done))
            ys, vs, cd = self._critic_step(i, seqs, problems)
            for ep, y, v in zip(episodes, ys, vs):
                rows.append([(t, 0, r.m, y[t] - v[t]) for t, r in enumerate(ep.agent_steps[i])])
            ad = self._actor_step(i, seqs, rows)
            for key, val in {**cd, **ad}.items():
                diag[f"{key}/{i}"] = val
        return diag


class MacCAC(Learner):
    """Centralized joint actor with factored per-agent heads and a joint critic."""

    algorithm = "mac-cac"

    def _build(self):
        D = self._joint_dim()
        M = self.info.n_macros
        self.actors.append(self._net("actor", D, sum(M), "softmax", True, head_splits=M))
        self.critics.append(self._net("critic", D, 1, "value", True, kind="critic"))

    def policy(self):
        return CentralizedPolicy(self.actors[0], self.info.n_macros)

    def _train(self, data):
        seqs = [_joint_sequence(d.joint, self.info.n_macros) for d in data]
        ys, vs, cd = self._critic_step(0, seqs, [_rows_problem(d.joint) for d in data])
        rows = []
        for d, y, v in zip(data, ys, vs):
            rs = []
            for k, tr in enumerate(d.joint):
                for i, starting in enumerate(tr.starting):
                    if starting:
                        rs.append((k, i, tr.m[i], y[k] - v[k]))
            rows.append(rs)
        ad = self._actor_step(0, seqs, rows)
        return {**cd, **ad}


class NaiveMacIACC(Learner):
    """Decentralized actors sharing one centralized critic on joint rows."""

    algorithm = "naive-mac-iacc"

    def _build(self):
        for i in range(self.info.n_agents):
            self.actors.append(self._net(f"actor{i}", self._local_dim(i), self.info.n_macros[i],
                                         "softmax", False))
        self.critics.append(self._net("critic", self._central_input_dim(), 1, "value", True,
                                      kind="critic"))

    def policy(self):
        return DecentralizedPolicy(self.actors, self.info.n_macros)

    def _train(self, data):
        seqs = [self._central_sequence(d) for d in data]
        ys, vs, cd = self._critic_step(0, seqs, [_rows_problem(d.joint) for d in data])
        diag = dict(cd)
        for i in range(self.info.n_agents):
            aseqs, rows = [], []
            for d, y, v in zip(data, ys, vs):
                aseqs.append(_local_sequence(d.agent[i], self.info.obs_dims[i], self.info.n_macros[i]))
                where = {tr.t_start: j for j, tr in enumerate(d.joint)}
                rows.append([(k, 0, tr.m, y[where[tr.t_start]] - v[where[tr.t_start]])
                             for k, tr in enumerate(d.agent[i])])
            ad = self._actor_step(i, aseqs, rows)
            for key, val in ad.items():
                diag[f"{key}/{i}"] = val
        return diag


class MacIAICC(Learner):
    """Decentralized actors, each with its own centralized critic.

    Each critic reads the whole joint-row sequence but is trained only on
    the agent's own macro segments, with the agent's cumulative reward and
    discount exponent.
    """

    algorithm = "mac-iaicc"

    def _build(self):
        for i in range(self.info.n_agents):
            self.actors.append(self._net(f"actor{i}", self._local_dim(i), self.info.n_macros[i],
                                         "softmax", False))
            self.critics.append(self._net(f"critic{i}", self._central_input_dim(), 1, "value", True,
                                          kind="critic"))

    def policy(self):
        return DecentralizedPolicy(self.actors, self.info.n_macros)

    def _train(self, data):
        seqs = [self._central_sequence(d) for d in data]
        diag = {}
        for i in range(self.info.n_agents):
            problems = []
            for d in data:
                crit, _ = squeeze_iaicc(d.log.steps, i, self.gamma, terminal=d.log.terminal,
                                        final_state=d.log.final_state)
                masked = [(k, row) for k, row in enumerate(crit) if row.mask]
                problems.append(TDProblem(
                    np.array([row.start for _, row in masked]),
                    np.array([k + 1 for k, _ in masked]),
                    np.array([row.rc for _, row in masked]),
                    np.array([row.tau for _, row in masked]),
                    np.array([row.joint.done for _, row in masked], dtype=bool),
                ))
            ys, vs, cd = self._critic_step(i, seqs, problems)
            aseqs, rows = [], []
            for d, y, v in zip(data, ys, vs):
                aseqs.append(_local_sequence(d.agent[i], self.info.obs_dims[i], self.info.n_macros[i]))
                if len(d.agent[i]) != len(y):
                    raise RuntimeError("actor rows and critic rows are misaligned")
                rows.append([(k, 0, tr.m, y[k] - v[k]) for k, tr in enumerate(d.agent[i])])
            ad = self._actor_step(i, aseqs, rows)
            for key, val in {**cd, **ad}.items():
                diag[f"{key}/{i}"] = val
        return diag


LEARNERS = {cls.algorithm: cls for cls in (MacIAC, PrimitiveIAC, MacCAC, NaiveMacIACC, MacIAICC)}


def make_learner(info: EnvInfo, config: LearnerConfig, seed: int = 0) -> Learner:
    config.validate()
    return LEARNERS[config.algorithm](info, config, seed)
