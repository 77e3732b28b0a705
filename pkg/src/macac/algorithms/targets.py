"""TD targets over squeezed rows and the policy-gradient logit gradient."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..buffers import SqueezedTransition


def n_step_targets(rc, tau, done, v_boot, gamma: float, n_step: int) -> np.ndarray:
    """Targets for a sequence of squeezed rows.

    ``v_boot[k]`` is the target critic's value at the history following row k.
    Row k accumulates up to ``max(n_step, 1)`` rewards starting at k, each
    discounted by the durations of the rows before it, then bootstraps from
    ``v_boot`` at the last row reached unless that row is terminal.
    """
    if n_step < 0:
        raise ValueError(f"n-step horizon must be >= 0, got {n_step}")
    rc = np.asarray(rc, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    done = np.asarray(done, dtype=bool)
    v_boot = np.asarray(v_boot, dtype=np.float64)
    K = rc.shape[0]
    n = max(n_step, 1)
    rows = np.arange(K)
    y = np.zeros(K)
    disc = np.ones(K)
    last = rows.copy()
    active = np.ones(K, dtype=bool)
    for j in range(n):
        idx = rows + j
        take = active & (idx < K)
        if not take.any():
            break
        src = idx[take]
        y[take] += disc[take] * rc[src]
        disc[take] *= gamma ** tau[src]
        last[take] = src
        active = take & ~done[np.minimum(idx, K - 1)]
    return y + np.where(done[last], 0.0, disc * v_boot[last])


def td_targets(transitions: Sequence[SqueezedTransition], v_next, gamma: float, n_step: int = 0):
    """Targets for squeezed transitions given the target critic at each ``h'``."""
    return n_step_targets(
        [tr.rc for tr in transitions],
        [tr.tau for tr in transitions],
        [tr.done for tr in transitions],
        v_next, gamma, n_step,
    )


def score_logit_grad(probs, macros, advantages):
    """d/dlogits of -sum_k A_k log softmax(logits_k)[m_k]; rows are (K, M)."""
    probs = np.asarray(probs, dtype=np.float64)
    g = probs * np.asarray(advantages, dtype=np.float64)[:, None]
    g[np.arange(len(macros)), macros] -= advantages
    return g


def actor_loss(probs, macros, advantages):
    """Mean over rows of -log pi(m|h) * A, with its gradient w.r.t. the logits.

    The advantages are constants: no gradient flows into the critic.
    """
    probs = np.asarray(probs, dtype=np.float64)
    macros = np.asarray(macros, dtype=np.int64)
    advantages = np.asarray(advantages, dtype=np.float64)
    if not (probs.shape[0] == macros.shape[0] == advantages.shape[0]):
        raise ValueError("probs, macros and advantages must have the same number of rows")
    K = probs.shape[0]
    if K == 0:
        return 0.0, np.zeros_like(probs)
    logp = np.log(probs[np.arange(K), macros])
    loss = float(-(logp * advantages).mean())
    return loss, score_logit_grad(probs, macros, advantages) / K
