"""MacDec-POMDP abstractions and the asynchronous macro-action executor.

Environments are stepped at the primitive timescale. Each agent runs its
current macro-action's low-level controller until the macro's termination
predicate fires, and only then picks a new macro from its high-level policy.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol, Sequence

import numpy as np


class ConfigurationError(ValueError):
    """Raised when an environment, policy or run configuration is invalid."""


class MacroInitiationError(ConfigurationError):
    """A policy picked a macro-action whose initiation predicate is false."""


def always(_history) -> bool:
    return True


@dataclass
class LowLevelHistory:
    """Primitive observations and actions since the current macro started.

    ``observations`` always has one more entry than ``actions``.
    """

    observations: list = field(default_factory=list)
    actions: list = field(default_factory=list)

    @property
    def last(self):
        return self.observations[-1]

    def __len__(self) -> int:
        return len(self.actions)


@dataclass(frozen=True)
class MacroActionDef:
    """An option: initiation predicate, low-level controller, termination predicate."""

    id: int
    name: str
    controller: Callable[[LowLevelHistory], int]
    termination: Callable[[LowLevelHistory], bool]
    initiation: Callable[[Sequence], bool] = always


def one_step_macro(macro_id: int, name: str, primitive: int) -> MacroActionDef:
    """A macro that executes ``primitive`` once and terminates."""
    return MacroActionDef(
        id=macro_id,
        name=name,
        controller=lambda hist: primitive,
        termination=lambda hist: len(hist) >= 1,
    )


class MacroEnv(ABC):
    """Contract every environment implements.

    Subclasses set ``n_agents``, ``horizon`` and ``gamma``.
    """

    n_agents: int
    horizon: int
    gamma: float

    @abstractmethod
    def reset(self, seed: int | None = None) -> None: ...

    @abstractmethod
    def macro_actions(self, agent: int) -> list[MacroActionDef]: ...

    @abstractmethod
    def n_primitive_actions(self, agent: int) -> int: ...

    @abstractmethod
    def macro_observation(self, agent: int) -> np.ndarray:
        """Fresh macro-observation captured from the current state."""

    @abstractmethod
    def low_level_observation(self, agent: int) -> Any: ...

    @abstractmethod
    def step(self, actions: Sequence[int]) -> tuple[float, bool]:
        """Apply one joint primitive action; return (shared reward, terminal)."""

    @abstractmethod
    def state_vector(self) -> np.ndarray: ...

    @property
    def t(self) -> int:
        return self._t

    def start_macro(self, agent: int, macro_id: int) -> None:
        """Hook called when ``agent`` begins executing ``macro_id``."""

    def obs_dim(self, agent: int) -> int:
        return int(self.macro_observation(agent).shape[0])

    def n_macros(self, agent: int) -> int:
        return len(self.macro_actions(agent))

    @property
    def state_dim(self) -> int:
        return int(self.state_vector().shape[0])

    def macro_name(self, agent: int, macro_id: int) -> str:
        return self.macro_actions(agent)[macro_id].name

    def render(self) -> str:
        return ""


@dataclass
class StepRecord:
    """One agent's view of one primitive step (a Mac-CERTs row)."""

    t: int
    agent: int
    z: np.ndarray
    m: int
    r: float
    terminated: bool
    z_next: np.ndarray


@dataclass
class JointStepRecord:
    """All agents' view of one primitive step (a Mac-JERTs row).

    ``state`` is the environment state vector before the step; it is only
    used by critics that condition on the true state.
    """

    t: int
    z: tuple
    m: tuple
    r: float
    terminated: tuple
    z_next: tuple
    state: np.ndarray | None = None

    @property
    def joint_terminated(self) -> bool:
        return any(self.terminated)


@dataclass
class EpisodeSummary:
    total_reward: float
    discounted_return: float
    length: int
    terminal: bool


class Recorder(Protocol):
    def add(self, agent_records: list[StepRecord], joint: JointStepRecord) -> None: ...

    def finish(self, summary: EpisodeSummary, final_state: np.ndarray) -> None: ...


@dataclass
class EpisodeLog:
    """Per-step experience of a single episode, kept at the primitive timescale."""

    n_agents: int
    steps: list[JointStepRecord] = field(default_factory=list)
    agent_steps: list[list[StepRecord]] = field(default_factory=list)
    summary: EpisodeSummary | None = None
    final_state: np.ndarray | None = None
    policy_version: int | None = None

    def __post_init__(self):
        if not self.agent_steps:
            self.agent_steps = [[] for _ in range(self.n_agents)]

    def add(self, agent_records, joint):
        for rec in agent_records:
            self.agent_steps[rec.agent].append(rec)
        self.steps.append(joint)

    def finish(self, summary, final_state):
        self.summary = summary
        self.final_state = final_state

    @property
    def terminal(self) -> bool:
        return bool(self.summary and self.summary.terminal)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([s.r for s in self.steps], dtype=np.float64)

    def __len__(self) -> int:
        return len(self.steps)


class NullRecorder:
    def add(self, agent_records, joint):
        pass

    def finish(self, summary, final_state):
        pass


class MacroPolicy(Protocol):
    """High-level action selector driven by :func:`run_episode`.

    ``select`` is called at every primitive step where at least one agent's
    macro has terminated. ``macro_obs`` holds every agent's current
    macro-observation (held for agents still running a macro) and
    ``prev_macros`` the macro each agent executed on the previous step.
    """

    def reset(self) -> None: ...

    def select(
        self,
        deciding: list[int],
        macro_obs: list[np.ndarray],
        prev_macros: list[int | None],
        epsilon: float,
        rng: np.random.Generator,
    ) -> dict[int, int]: ...


def mixed_distribution(probs: np.ndarray, epsilon: float) -> np.ndarray:
    """(1 - eps) * probs + eps * uniform."""
    probs = np.asarray(probs, dtype=np.float64)
    return (1.0 - epsilon) * probs + epsilon / probs.shape[-1]


def sample_index(p: np.ndarray, rng: np.random.Generator) -> int:
    # inverse-CDF sampling; cheaper than rng.choice for tiny vectors
    c = np.cumsum(p)
    idx = int(np.searchsorted(c, rng.random() * c[-1], side="right"))
    return min(idx, p.shape[0] - 1)


def select_macro(policy_net, history_state, net_input, epsilon, rng):
    """Advance an actor's recurrent state with ``net_input`` and sample a macro.

    Returns ``(macro_id, new_state, probs)`` where ``probs`` is the softmax
    output before exploration mixing.
    """
    probs, new_state = policy_net.step(net_input, history_state)
    p = mixed_distribution(probs, epsilon)
    return sample_index(p, rng), new_state, probs


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def run_episode(
    env: MacroEnv,
    policy: MacroPolicy,
    epsilon: float = 0.0,
    recorder: Recorder | None = None,
    rng: int | np.random.Generator | None = 0,
    env_seed: int | None = None,
) -> EpisodeSummary:
    """Run one episode asynchronously at the primitive timescale.

    The environment is reset with ``env_seed`` (defaults to an integer seed
    ``rng`` when one is given).
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ConfigurationError(f"epsilon must be in [0, 1], got {epsilon}")
    if env_seed is None and isinstance(rng, (int, np.integer)):
        env_seed = int(rng)
    gen = as_generator(rng)
    recorder = recorder if recorder is not None else NullRecorder()

    env.reset(env_seed)
    policy.reset()
    n = env.n_agents
    macros = [env.macro_actions(i) for i in range(n)]
    n_prim = [env.n_primitive_actions(i) for i in range(n)]
    z = [env.macro_observation(i) for i in range(n)]
    running: list[int | None] = [None] * n
    prev: list[int | None] = [None] * n
    lowhist: list[LowLevelHistory | None] = [None] * n
    macro_hist: list[list] = [[] for _ in range(n)]

    t = 0
    total = 0.0
    disc = 0.0
    done = False
    gamma = env.gamma
    while True:
        deciding = [i for i in range(n) if running[i] is None]
        if deciding:
            choice = policy.select(deciding, z, prev, epsilon, gen)
            for i in deciding:
                m = int(choice[i])
                if not 0 <= m < len(macros[i]):
                    raise ConfigurationError(f"agent {i}: macro id {m} out of range")
                if not macros[i][m].initiation(macro_hist[i]):
                    raise MacroInitiationError(
                        f"agent {i}: initiation of {macros[i][m].name!r} fails at t={t}"
                    )
                running[i] = m
                env.start_macro(i, m)
                lowhist[i] = LowLevelHistory([env.low_level_observation(i)], [])

        actions = []
        for i in range(n):
            a = int(macros[i][running[i]].controller(lowhist[i]))
            if not 0 <= a < n_prim[i]:
                raise ConfigurationError(f"agent {i}: controller emitted illegal action {a}")
            actions.append(a)

        state = env.state_vector()
        r, done = env.step(actions)
        r = float(r)
        total += r
        disc += gamma**t * r

        terminated = []
        z_next = []
        for i in range(n):
            h = lowhist[i]
            h.actions.append(actions[i])
            h.observations.append(env.low_level_observation(i))
            term = bool(done or macros[i][running[i]].termination(h))
            terminated.append(term)
            z_next.append(env.macro_observation(i) if term else z[i])

        agent_records = [
            StepRecord(t, i, z[i], running[i], r, terminated[i], z_next[i]) for i in range(n)
        ]
        joint = JointStepRecord(
            t, tuple(z), tuple(running), r, tuple(terminated), tuple(z_next), state
        )
        recorder.add(agent_records, joint)

        for i in range(n):
            prev[i] = running[i]
            if terminated[i]:
                macro_hist[i].append((z[i], running[i]))
                running[i] = None
        z = z_next
        t += 1
        if done or t >= env.horizon:
            break

    summary = EpisodeSummary(total, disc, t, bool(done))
    recorder.finish(summary, env.state_vector())
    return summary


class ScriptedPolicy:
    """Plays fixed macro sequences, one list per agent (last entry repeats)."""

    def __init__(self, scripts: Sequence[Sequence[int]]):
        self.scripts = [list(s) for s in scripts]
        self.reset()

    def reset(self):
        self._k = [0] * len(self.scripts)

    def select(self, deciding, macro_obs, prev_macros, epsilon, rng):
        out = {}
        for i in deciding:
            seq = self.scripts[i]
            out[i] = seq[min(self._k[i], len(seq) - 1)]
            self._k[i] += 1
        return out


class UniformPolicy:
    """Uniformly random macro selection."""

    def __init__(self, n_macros: Sequence[int]):
        self.n_macros = list(n_macros)

    def reset(self):
        pass

    def select(self, deciding, macro_obs, prev_macros, epsilon, rng):
        return {i: int(rng.integers(self.n_macros[i])) for i in deciding}
