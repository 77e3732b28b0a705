"""Rollout policies driven by actor networks."""

from __future__ import annotations

import numpy as np

from ..core import mixed_distribution, sample_index, select_macro


def local_input(z, prev_macro, n_macros: int) -> np.ndarray:
    """[macro-observation, one-hot of the previous macro (zeros before the first)]."""
    z = np.asarray(z, dtype=np.float32).ravel()
    out = np.zeros(z.shape[0] + n_macros, dtype=np.float32)
    out[: z.shape[0]] = z
    if prev_macro is not None:
        out[z.shape[0] + int(prev_macro)] = 1.0
    return out


def joint_input(zs, prev_macros, n_macros) -> np.ndarray:
    return np.concatenate([local_input(z, m, k) for z, m, k in zip(zs, prev_macros, n_macros)])


class DecentralizedPolicy:
    """Each agent advances its own actor only at its own decision points."""

    def __init__(self, actors, n_macros):
        self.actors = actors
        self.n_macros = list(n_macros)
        self.reset()

    def reset(self):
        self.h = [a.initial_state() for a in self.actors]
        self.last_probs = [None] * len(self.actors)

    def select(self, deciding, macro_obs, prev_macros, epsilon, rng):
        out = {}
        for i in deciding:
            x = local_input(macro_obs[i], prev_macros[i], self.n_macros[i])
            out[i], self.h[i], self.last_probs[i] = select_macro(self.actors[i], self.h[i], x, epsilon, rng)
        return out


class CentralizedPolicy:
    """One joint actor over the joint history with a softmax head per agent.

    The actor advances at every joint decision point; only the agents whose
    macro terminated sample from their head (exploration mixed per head).
    """

    def __init__(self, actor, n_macros):
        self.actor = actor
        self.n_macros = list(n_macros)
        self.bounds = np.concatenate([[0], np.cumsum(self.n_macros)])
        self.reset()

    def reset(self):
        self.h = self.actor.initial_state()
        self.last_probs = None

    def select(self, deciding, macro_obs, prev_macros, epsilon, rng):
        x = joint_input(macro_obs, prev_macros, self.n_macros)
        probs, self.h = self.actor.step(x, self.h)
        self.last_probs = probs
        out = {}
        for i in deciding:
            p = mixed_distribution(probs[self.bounds[i]:self.bounds[i + 1]], epsilon)
            out[i] = sample_index(p, rng)
        return out
