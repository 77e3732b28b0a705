"""A tiny, fully enumerable MacDec-POMDP.

Used as an exact oracle: the value of a tabular softmax joint policy is
computed by summing over every trajectory, and its gradient is computed both
by finite differences and by enumerating the expectation of the macro-level
score-function estimator.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from ..core import ConfigurationError, MacroActionDef, MacroEnv

MAX_TRAJECTORIES = 100_000


@dataclass
class ToySpec:
    """Tabular MacDec-POMDP.

    Shapes, with ``M_i`` macros and ``Z_i`` macro-observations for agent i:
      initial_state (S,), initial_obs[i] (S, Z_i),
      transition (S, M_0, ..., M_{n-1}, S), reward (S, M_0, ..., M_{n-1}),
      observation[i] (M_i, S, Z_i), durations[i] (M_i,).
    While a macro runs the agent's primitive action is the macro id.
    """

    initial_state: np.ndarray
    initial_obs: list[np.ndarray]
    transition: np.ndarray
    reward: np.ndarray
    observation: list[np.ndarray]
    durations: list[list[int]]
    horizon: int
    gamma: float

    @property
    def n_agents(self) -> int:
        return len(self.durations)

    @property
    def n_states(self) -> int:
        return self.initial_state.shape[0]

    def n_macros(self, i: int) -> int:
        return len(self.durations[i])

    def n_obs(self, i: int) -> int:
        return self.observation[i].shape[2]

    def to_text(self) -> str:
        data = {
            "initial_state": self.initial_state.tolist(),
            "initial_obs": [o.tolist() for o in self.initial_obs],
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "observation": [o.tolist() for o in self.observation],
            "durations": [list(map(int, d)) for d in self.durations],
            "horizon": self.horizon,
            "gamma": self.gamma,
        }
        return json.dumps(data, indent=1, sort_keys=True)

    @classmethod
    def from_text(cls, text: str) -> "ToySpec":
        d = json.loads(text)
        return cls(
            initial_state=np.array(d["initial_state"], dtype=np.float64),
            initial_obs=[np.array(o, dtype=np.float64) for o in d["initial_obs"]],
            transition=np.array(d["transition"], dtype=np.float64),
            reward=np.array(d["reward"], dtype=np.float64),
            observation=[np.array(o, dtype=np.float64) for o in d["observation"]],
            durations=[list(x) for x in d["durations"]],
            horizon=int(d["horizon"]),
            gamma=float(d["gamma"]),
        )


def _sparse_dist(rng, n, support):
    p = np.zeros(n)
    idx = rng.choice(n, size=min(support, n), replace=False)
    p[idx] = rng.dirichlet(np.ones(len(idx)))
    return p


def random_spec(rng, n_agents=2, n_states=4, n_macros=(2, 2), n_obs=2, horizon=4,
                durations=(1, 2), gamma=None, max_support=2) -> ToySpec:
    """Random spec with sparse stochastic transitions and observations."""
    rng = np.random.default_rng(rng)
    n_macros = tuple(n_macros)[:n_agents]
    joint = tuple(n_macros)
    transition = np.zeros((n_states,) + joint + (n_states,))
    for idx in itertools.product(range(n_states), *[range(m) for m in joint]):
        transition[idx] = _sparse_dist(rng, n_states, rng.integers(1, max_support + 1))
    reward = rng.normal(size=(n_states,) + joint).round(3)
    observation = []
    initial_obs = []
    for i in range(n_agents):
        o = np.zeros((n_macros[i], n_states, n_obs))
        for m in range(n_macros[i]):
            for s in range(n_states):
                o[m, s] = _sparse_dist(rng, n_obs, rng.integers(1, max_support + 1))
        observation.append(o)
        initial_obs.append(np.stack([_sparse_dist(rng, n_obs, 1) for _ in range(n_states)]))
    return ToySpec(
        initial_state=_sparse_dist(rng, n_states, 2),
        initial_obs=initial_obs,
        transition=transition,
        reward=reward,
        observation=observation,
        durations=[[int(rng.choice(durations)) for _ in range(m)] for m in n_macros],
        horizon=horizon,
        gamma=float(rng.uniform(0.5, 1.0)) if gamma is None else gamma,
    )


# ---------------------------------------------------------------------------
# enumeration


@dataclass
class Decisions:
    """Flat table of one agent's decisions across all enumerated trajectories."""

    leaf: np.ndarray
    row: np.ndarray
    macro: np.ndarray
    t: np.ndarray
    next_row: np.ndarray  # -1 when the trajectory ends before the next decision
    cum_reward: np.ndarray
    duration: np.ndarray


@dataclass
class TrajectoryTable:
    """Every trajectory of a spec, independent of the policy parameters."""

    spec: ToySpec
    histories: list[dict]  # per agent: history tuple -> table row
    p_env: np.ndarray  # (L,) product of environment probabilities
    rewards: np.ndarray  # (L, H)
    decisions: list[Decisions]
    n_leaves: int = field(init=False)

    def __post_init__(self):
        self.n_leaves = self.p_env.shape[0]
        g = self.spec.gamma
        H = self.spec.horizon
        # return-to-go from every primitive step, togo[:, H] = 0
        togo = np.zeros((self.n_leaves, H + 1))
        for t in range(H - 1, -1, -1):
            togo[:, t] = self.rewards[:, t] + g * togo[:, t + 1]
        self.return_to_go = togo

    def param_shapes(self) -> list[tuple[int, int]]:
        return [(len(h), self.spec.n_macros(i)) for i, h in enumerate(self.histories)]

    def zero_params(self) -> list[np.ndarray]:
        return [np.zeros(s) for s in self.param_shapes()]

    def random_params(self, rng, scale=1.0) -> list[np.ndarray]:
        rng = np.random.default_rng(rng)
        return [rng.normal(scale=scale, size=s) for s in self.param_shapes()]


def enumerate_trajectories(spec: ToySpec, cap: int = MAX_TRAJECTORIES) -> TrajectoryTable:
    n = spec.n_agents
    H = spec.horizon
    histories: list[dict] = [{} for _ in range(n)]
    p_env: list[float] = []
    rewards: list[list[float]] = []
    # per agent, per leaf: list of (row, macro, t, duration, next_row, cum_reward)
    per_agent: list[list[list]] = [[] for _ in range(n)]

    def row_of(i, hist):
        table = histories[i]
        if hist not in table:
            table[hist] = len(table)
        return table[hist]

    def finish(prob, rews, decs):
        if len(p_env) >= cap:
            raise ConfigurationError(f"more than {cap} trajectories; spec too large to enumerate")
        leaf_rewards = np.asarray(rews)
        p_env.append(prob)
        rewards.append(rews)
        g = spec.gamma
        for i in range(n):
            out = []
            mine = decs[i]
            for k, (row, m, t) in enumerate(mine):
                tau = min(spec.durations[i][m], H - t)
                seg = leaf_rewards[t:t + tau]
                rc = float(np.sum(seg * g ** np.arange(tau)))
                nxt = mine[k + 1][0] if k + 1 < len(mine) else -1
                out.append((row, m, t, tau, nxt, rc))
            per_agent[i].append(out)

    def expand(t, s, prob, rews, running, hists, decs):
        # running[i] = (macro, steps remaining) or None
        deciding = [i for i in range(n) if running[i] is None]
        choices = itertools.product(*[range(spec.n_macros(i)) for i in deciding])
        for choice in choices:
            run = list(running)
            dec = [list(d) for d in decs]
            for i, m in zip(deciding, choice):
                run[i] = (m, spec.durations[i][m])
                dec[i].append((row_of(i, hists[i]), m, t))
            macro = tuple(r[0] for r in run)
            r = float(spec.reward[(s,) + macro])
            next_dist = spec.transition[(s,) + macro]
            for s2 in np.flatnonzero(next_dist):
                p2 = prob * next_dist[s2]
                left = [(m, k - 1) for m, k in run]
                ended = [i for i in range(n) if left[i][1] == 0]
                if t + 1 == H:
                    finish(p2, rews + [r], dec)
                    continue
                obs_choices = [np.flatnonzero(spec.observation[i][left[i][0], s2]) for i in ended]
                for zs in itertools.product(*obs_choices):
                    p3 = p2
                    new_hists = list(hists)
                    new_run = list(left)
                    for i, z in zip(ended, zs):
                        p3 *= spec.observation[i][left[i][0], s2, z]
                        new_hists[i] = hists[i] + (left[i][0], int(z))
                        new_run[i] = None
                    expand(t + 1, int(s2), p3, rews + [r], new_run, new_hists, dec)

    for s0 in np.flatnonzero(spec.initial_state):
        obs_choices = [np.flatnonzero(spec.initial_obs[i][s0]) for i in range(n)]
        for zs in itertools.product(*obs_choices):
            p = spec.initial_state[s0]
            for i, z in enumerate(zs):
                p *= spec.initial_obs[i][s0, z]
            expand(0, int(s0), p, [], [None] * n, [(int(z),) for z in zs], [[] for _ in range(n)])

    decisions = []
    for i in range(n):
        cols = [[] for _ in range(7)]
        for leaf, out in enumerate(per_agent[i]):
            for row, m, t, tau, nxt, rc in out:
                for col, v in zip(cols, (leaf, row, m, t, nxt, rc, tau)):
                    col.append(v)
        decisions.append(Decisions(
            leaf=np.array(cols[0], dtype=np.int64),
            row=np.array(cols[1], dtype=np.int64),
            macro=np.array(cols[2], dtype=np.int64),
            t=np.array(cols[3], dtype=np.int64),
            next_row=np.array(cols[4], dtype=np.int64),
            cum_reward=np.array(cols[5], dtype=np.float64),
            duration=np.array(cols[6], dtype=np.int64),
        ))
    return TrajectoryTable(spec, histories, np.array(p_env), np.array(rewards, dtype=np.float64),
                           decisions)


# ---------------------------------------------------------------------------
# exact value and gradients


def _log_softmax(theta):
    x = theta - theta.max(axis=1, keepdims=True)
    return x - np.log(np.exp(x).sum(axis=1, keepdims=True))


def _leaf_probs(table: TrajectoryTable, params) -> np.ndarray:
    logp = np.log(table.p_env)
    for dec, theta in zip(table.decisions, params):
        lp = _log_softmax(theta)[dec.row, dec.macro]
        logp = logp + np.bincount(dec.leaf, weights=lp, minlength=table.n_leaves)
    return np.exp(logp)


def exact_value(table: TrajectoryTable, params) -> float:
    """J(theta): probability-weighted discounted return over all trajectories."""
    return float(_leaf_probs(table, params) @ table.return_to_go[:, 0])


def history_values(table: TrajectoryTable, params, probs=None) -> list[np.ndarray]:
    """Exact E[return-to-go | agent i's macro-observation-action history]."""
    probs = _leaf_probs(table, params) if probs is None else probs
    out = []
    for dec, theta in zip(table.decisions, params):
        w = probs[dec.leaf]
        num = np.bincount(dec.row, weights=w * table.return_to_go[dec.leaf, dec.t],
                          minlength=theta.shape[0])
        den = np.bincount(dec.row, weights=w, minlength=theta.shape[0])
        out.append(np.divide(num, den, out=np.zeros_like(num), where=den > 0))
    return out


def score_gradient(table: TrajectoryTable, params, estimator: str = "td") -> list[np.ndarray]:
    """Exact expectation of the macro-level score-function estimator.

    ``estimator="td"`` weights each decision's score by the advantage
    ``r^c + gamma^tau V(h') - V(h)`` with exact history values;
    ``estimator="q"`` uses the sampled return-to-go instead.
    Each decision at primitive time t carries the occupancy weight gamma^t.
    """
    g = table.spec.gamma
    probs = _leaf_probs(table, params)
    values = history_values(table, params, probs) if estimator == "td" else None
    grads = []
    for i, (dec, theta) in enumerate(zip(table.decisions, params)):
        pi = np.exp(_log_softmax(theta))
        if estimator == "td":
            v = values[i]
            v_next = np.where(dec.next_row >= 0, v[np.maximum(dec.next_row, 0)], 0.0)
            weight = dec.cum_reward + g ** dec.duration * v_next - v[dec.row]
        elif estimator == "q":
            weight = table.return_to_go[dec.leaf, dec.t]
        else:
            raise ValueError(f"unknown estimator {estimator!r}")
        coef = probs[dec.leaf] * g ** dec.t * weight
        score = -pi[dec.row] * coef[:, None]
        score[np.arange(len(dec.macro)), dec.macro] += coef
        grad = np.zeros_like(theta)
        np.add.at(grad, dec.row, score)
        grads.append(grad)
    return grads


def finite_difference_gradient(table: TrajectoryTable, params, h: float = 1e-4) -> list[np.ndarray]:
    """Fourth-order central differences of :func:`exact_value`."""
    grads = []
    for i, theta in enumerate(params):
        grad = np.zeros_like(theta)
        for idx in np.ndindex(theta.shape):
            vals = []
            for step in (2 * h, h, -h, -2 * h):
                shifted = [p.copy() for p in params]
                shifted[i][idx] += step
                vals.append(exact_value(table, shifted))
            grad[idx] = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * h)
        grads.append(grad)
    return grads


def exact_policy_gradient(table: TrajectoryTable, params, h: float = 1e-4):
    """Return (finite-difference gradient, enumerated score-function gradient)."""
    return finite_difference_gradient(table, params, h), score_gradient(table, params, "td")


def monte_carlo_value(table: TrajectoryTable, params, n_episodes: int, rng) -> tuple[float, float]:
    """Sample episodes of the spec in a batch; return (mean return, standard error).

    Dynamics are simulated directly from the spec arrays; the table is only
    used to look up the policy row of each sampled history.
    """
    spec = table.spec
    rng = np.random.default_rng(rng)
    n = spec.n_agents
    N = n_episodes
    pis = [np.exp(_log_softmax(theta)) for theta in params]
    lookups = [dict(h) for h in table.histories]

    def draw(p_rows):
        c = np.cumsum(p_rows, axis=1)
        u = rng.random(p_rows.shape[0])[:, None] * c[:, -1:]
        return np.minimum((u >= c).sum(axis=1), p_rows.shape[1] - 1)

    s = draw(np.broadcast_to(spec.initial_state, (N, spec.n_states)))
    hists = []
    for i in range(n):
        z = draw(spec.initial_obs[i][s])
        hists.append([(int(v),) for v in z])
    macro = np.zeros((n, N), dtype=np.int64)
    left = np.zeros((n, N), dtype=np.int64)
    ret = np.zeros(N)
    for t in range(spec.horizon):
        for i in range(n):
            deciding = np.flatnonzero(left[i] == 0)
            if deciding.size:
                rows = np.array([lookups[i][hists[i][e]] for e in deciding])
                m = draw(pis[i][rows])
                macro[i, deciding] = m
                left[i, deciding] = np.array(spec.durations[i])[m]
        idx = (s,) + tuple(macro[i] for i in range(n))
        ret += spec.gamma ** t * spec.reward[idx]
        s = draw(spec.transition[idx])
        left -= 1
        for i in range(n):
            ended = np.flatnonzero(left[i] == 0)
            if ended.size and t + 1 < spec.horizon:
                z = draw(spec.observation[i][macro[i, ended], s[ended]])
                for e, zz in zip(ended, z):
                    hists[i][e] = hists[i][e] + (int(macro[i, e]), int(zz))
    return float(ret.mean()), float(ret.std(ddof=1) / np.sqrt(N))


# ---------------------------------------------------------------------------
# environment and policy adapters for the generic executor


class ToyEnv(MacroEnv):
    """Runs a :class:`ToySpec` through the generic executor."""

    def __init__(self, spec: ToySpec):
        self.spec = spec
        self.n_agents = spec.n_agents
        self.horizon = spec.horizon
        self.gamma = spec.gamma
        self._macros = []
        for i in range(self.n_agents):
            ms = []
            for m, d in enumerate(spec.durations[i]):
                ms.append(MacroActionDef(
                    m, f"macro-{m}",
                    controller=lambda hist, m=m: m,
                    termination=lambda hist, d=d: len(hist) >= d,
                ))
            self._macros.append(ms)
        self.reset(0)

    def reset(self, seed=None):
        self._rng = np.random.default_rng(seed)
        self.s = int(self._rng.choice(self.spec.n_states, p=self.spec.initial_state))
        self.z = [int(self._rng.choice(self.spec.n_obs(i), p=self.spec.initial_obs[i][self.s]))
                  for i in range(self.n_agents)]
        self._running = [0] * self.n_agents
        self._elapsed = [0] * self.n_agents
        self._t = 0

    def macro_actions(self, agent):
        return self._macros[agent]

    def n_primitive_actions(self, agent):
        return self.spec.n_macros(agent)

    def macro_observation(self, agent):
        out = np.zeros(self.spec.n_obs(agent), dtype=np.float32)
        out[self.z[agent]] = 1.0
        return out

    def low_level_observation(self, agent):
        return self._t

    def start_macro(self, agent, macro_id):
        self._running[agent] = macro_id
        self._elapsed[agent] = 0

    def step(self, actions):
        idx = (self.s,) + tuple(int(a) for a in actions)
        r = float(self.spec.reward[idx])
        self.s = int(self._rng.choice(self.spec.n_states, p=self.spec.transition[idx]))
        for i, a in enumerate(actions):
            self._elapsed[i] += 1
            if self._elapsed[i] == self.spec.durations[i][a] and self._t + 1 < self.horizon:
                p = self.spec.observation[i][a, self.s]
                self.z[i] = int(self._rng.choice(self.spec.n_obs(i), p=p))
        self._t += 1
        return r, False

    def state_vector(self):
        out = np.zeros(self.spec.n_states, dtype=np.float32)
        out[self.s] = 1.0
        return out


class TabularPolicy:
    """Softmax tables over full macro-observation-action histories."""

    def __init__(self, table: TrajectoryTable, params):
        self.histories = table.histories
        self.pis = [np.exp(_log_softmax(theta)) for theta in params]

    def reset(self):
        self._hist = None

    def select(self, deciding, macro_obs, prev_macros, epsilon, rng):
        n = len(macro_obs)
        if self._hist is None:
            self._hist = [(int(np.argmax(macro_obs[i])),) for i in range(n)]
            self._started = [False] * n
        out = {}
        for i in deciding:
            if self._started[i]:
                self._hist[i] = self._hist[i] + (int(prev_macros[i]), int(np.argmax(macro_obs[i])))
            self._started[i] = True
            p = self.pis[i][self.histories[i][self._hist[i]]]
            p = (1 - epsilon) * p + epsilon / p.shape[0]
            out[i] = int(rng.choice(p.shape[0], p=p))
        return out
