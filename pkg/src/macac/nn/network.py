"""FC -> FC -> GRU -> FC -> head, with hand-written backpropagation through time.

Shapes follow a time-major convention: inputs are (T, B, in_dim).
Weight matrices are stored as (fan_in, fan_out) so layers compute ``x @ W + b``.
The GRU uses gate order (reset, update, candidate):

    r = sigmoid(x W_ir + b_ir + h W_hr + b_hr)
    z = sigmoid(x W_iz + b_iz + h W_hz + b_hz)
    n = tanh(x W_in + b_in + r * (h W_hn + b_hn))
    h' = (1 - z) * n + z * h
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

LEAKY_SLOPE = 0.01
DECENTRALIZED_SIZES = (32, 32, 32, 32)
CENTRALIZED_SIZES = (32, 32, 64, 32)

PARAM_NAMES = (
    "fc1.W", "fc1.b", "fc2.W", "fc2.b",
    "gru.W_ih", "gru.W_hh", "gru.b_ih", "gru.b_hh",
    "fc3.W", "fc3.b", "head.W", "head.b",
)


def _lrelu(a):
    return np.where(a > 0, a, LEAKY_SLOPE * a)


def _lrelu_grad(a):
    return np.where(a > 0, 1.0, LEAKY_SLOPE).astype(a.dtype)


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def param_count(in_dim: int, out_dim: int, sizes=DECENTRALIZED_SIZES) -> int:
    f1, f2, g, f3 = sizes
    return (
        in_dim * f1 + f1
        + f1 * f2 + f2
        + 3 * (f2 * g + g * g + 2 * g)
        + g * f3 + f3
        + f3 * out_dim + out_dim
    )


@dataclass
class ForwardCache:
    x: np.ndarray
    a1: np.ndarray
    h1: np.ndarray
    a2: np.ndarray
    h2: np.ndarray
    h0: np.ndarray
    hs: np.ndarray  # (T+1, B, G) hidden states, hs[0] = h0
    r: np.ndarray
    z: np.ndarray
    n: np.ndarray
    gh_n: np.ndarray
    a3: np.ndarray
    h3: np.ndarray
    logits: np.ndarray
    out: np.ndarray


class RecurrentNet:
    """Actor (``head="softmax"``) or critic (``head="value"``) network.

    ``head_splits`` partitions the softmax head into independent groups, one
    per agent for a factored joint policy.
    """

    def __init__(self, in_dim: int, out_dim: int, head: str = "softmax",
                 sizes=DECENTRALIZED_SIZES, seed=0, head_splits=None, dtype=np.float32):
        if head not in ("softmax", "value"):
            raise ValueError(f"unknown head kind {head!r}")
        if head == "value" and out_dim != 1:
            raise ValueError("a value head has exactly one output")
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.head = head
        self.sizes = tuple(int(s) for s in sizes)
        if head_splits is None:
            head_splits = (out_dim,) if head == "softmax" else (1,)
        if sum(head_splits) != out_dim:
            raise ValueError(f"head splits {head_splits} do not sum to {out_dim}")
        self.head_splits = tuple(int(s) for s in head_splits)
        self.dtype = np.dtype(dtype)
        self.params = self._init_params(np.random.default_rng(seed))

    @property
    def hidden_dim(self) -> int:
        return self.sizes[2]

    def _init_params(self, rng):
        f1, f2, g, f3 = self.sizes

        def mat(fan_in, fan_out):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(self.dtype)

        def zeros(k):
            return np.zeros(k, dtype=self.dtype)

        return {
            "fc1.W": mat(self.in_dim, f1), "fc1.b": zeros(f1),
            "fc2.W": mat(f1, f2), "fc2.b": zeros(f2),
            "gru.W_ih": mat(f2, 3 * g), "gru.W_hh": mat(g, 3 * g),
            "gru.b_ih": zeros(3 * g), "gru.b_hh": zeros(3 * g),
            "fc3.W": mat(g, f3), "fc3.b": zeros(f3),
            "head.W": mat(f3, self.out_dim), "head.b": zeros(self.out_dim),
        }

    # -- utilities ------------------------------------------------------
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "RecurrentNet":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "RecurrentNet":
        net = copy.copy(self)
        net.dtype = np.dtype(dtype)
        net.params = {k: v.astype(dtype) for k, v in self.params.items()}
        return net

    def load_params(self, params: dict) -> None:
        for k in PARAM_NAMES:
            if params[k].shape != self.params[k].shape:
                raise ValueError(f"shape mismatch for {k}: {params[k].shape} vs {self.params[k].shape}")
            self.params[k] = np.array(params[k], dtype=self.dtype)

    def architecture(self) -> dict:
        return {
            "in_dim": self.in_dim, "out_dim": self.out_dim, "head": self.head,
            "sizes": list(self.sizes), "head_splits": list(self.head_splits),
        }

    def initial_state(self, batch: int | None = None) -> np.ndarray:
        shape = (self.hidden_dim,) if batch is None else (batch, self.hidden_dim)
        return np.zeros(shape, dtype=self.dtype)

    def _head_output(self, logits):
        if self.head == "value":
            return logits[..., 0]
        out = np.empty_like(logits)
        start = 0
        for k in self.head_splits:
            seg = logits[..., start:start + k]
            e = np.exp(seg - seg.max(axis=-1, keepdims=True))
            out[..., start:start + k] = e / e.sum(axis=-1, keepdims=True)
            start += k
        return out

    # -- forward --------------------------------------------------------
    def forward(self, x, h0=None):
        """Run a (T, B, in) sequence; return (outputs, final hidden state, cache).

        Outputs are (T, B, out) probabilities for a softmax head and (T, B)
        values for a value head.
        """
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 3 or x.shape[2] != self.in_dim:
            raise ValueError(f"expected input of shape (T, B, {self.in_dim}), got {x.shape}")
        T, B, _ = x.shape
        p = self.params
        G = self.hidden_dim
        if h0 is None:
            h0 = self.initial_state(B)
        h0 = np.asarray(h0, dtype=self.dtype).reshape(B, G)

        a1 = x @ p["fc1.W"] + p["fc1.b"]
        h1 = _lrelu(a1)
        a2 = h1 @ p["fc2.W"] + p["fc2.b"]
        h2 = _lrelu(a2)
        gi = h2 @ p["gru.W_ih"] + p["gru.b_ih"]

        hs = np.empty((T + 1, B, G), dtype=self.dtype)
        hs[0] = h0
        r = np.empty((T, B, G), dtype=self.dtype)
        z = np.empty_like(r)
        n = np.empty_like(r)
        gh_n = np.empty_like(r)
        W_hh, b_hh = p["gru.W_hh"], p["gru.b_hh"]
        for t in range(T):
            gh = hs[t] @ W_hh + b_hh
            r[t] = _sigmoid(gi[t, :, :G] + gh[:, :G])
            z[t] = _sigmoid(gi[t, :, G:2 * G] + gh[:, G:2 * G])
            gh_n[t] = gh[:, 2 * G:]
            n[t] = np.tanh(gi[t, :, 2 * G:] + r[t] * gh_n[t])
            hs[t + 1] = (1 - z[t]) * n[t] + z[t] * hs[t]

        a3 = hs[1:] @ p["fc3.W"] + p["fc3.b"]
        h3 = _lrelu(a3)
        logits = h3 @ p["head.W"] + p["head.b"]
        out = self._head_output(logits)
        cache = ForwardCache(x, a1, h1, a2, h2, h0, hs, r, z, n, gh_n, a3, h3, logits, out)
        return out, hs[T], cache

    def step(self, x, h):
        """Single recurrent update for one input vector; returns (output, new hidden)."""
        p = self.params
        G = self.hidden_dim
        x = np.asarray(x, dtype=self.dtype)
        h1 = _lrelu(x @ p["fc1.W"] + p["fc1.b"])
        h2 = _lrelu(h1 @ p["fc2.W"] + p["fc2.b"])
        gi = h2 @ p["gru.W_ih"] + p["gru.b_ih"]
        gh = h @ p["gru.W_hh"] + p["gru.b_hh"]
        r = _sigmoid(gi[..., :G] + gh[..., :G])
        z = _sigmoid(gi[..., G:2 * G] + gh[..., G:2 * G])
        n = np.tanh(gi[..., 2 * G:] + r * gh[..., 2 * G:])
        h_new = (1 - z) * n + z * h
        h3 = _lrelu(h_new @ p["fc3.W"] + p["fc3.b"])
        logits = h3 @ p["head.W"] + p["head.b"]
        return self._head_output(logits), h_new

    # -- backward -------------------------------------------------------
    def backward(self, cache: ForwardCache, grad, mask=None, wrt: str = "output"):
        """Gradients of a loss w.r.t. every parameter.

        ``grad`` holds dL/d(output) per step: (T, B, out) for a softmax head,
        (T, B) for a value head. With ``wrt="logits"`` it is taken as the
        gradient w.r.t. the pre-softmax logits instead. ``mask`` (T, B)
        multiplies the per-step gradients.
        """
        p = self.params
        G = self.hidden_dim
        T, B = cache.x.shape[:2]
        grad = np.asarray(grad, dtype=self.dtype)
        if self.head == "value":
            if grad.shape != (T, B):
                raise ValueError(f"value gradient must have shape {(T, B)}, got {grad.shape}")
            dlogits = grad[..., None]
        else:
            if grad.shape != (T, B, self.out_dim):
                raise ValueError(f"policy gradient must have shape {(T, B, self.out_dim)}, got {grad.shape}")
            if wrt == "logits":
                dlogits = grad
            elif wrt == "output":
                dlogits = np.empty_like(grad)
                start = 0
                for k in self.head_splits:
                    sl = slice(start, start + k)
                    pr, g = cache.out[..., sl], grad[..., sl]
                    dlogits[..., sl] = pr * (g - (pr * g).sum(axis=-1, keepdims=True))
                    start += k
            else:
                raise ValueError(f"unknown gradient target {wrt!r}")
        if mask is not None:
            mask = np.asarray(mask, dtype=self.dtype)
            if mask.shape != (T, B):
                raise ValueError(f"mask must have shape {(T, B)}, got {mask.shape}")
            dlogits = dlogits * mask[..., None]

        g = {}
        g["head.W"] = np.einsum("tbi,tbo->io", cache.h3, dlogits)
        g["head.b"] = dlogits.sum(axis=(0, 1))
        da3 = (dlogits @ p["head.W"].T) * _lrelu_grad(cache.a3)
        g["fc3.W"] = np.einsum("tbi,tbo->io", cache.hs[1:], da3)
        g["fc3.b"] = da3.sum(axis=(0, 1))
        dH = da3 @ p["fc3.W"].T

        W_hh = p["gru.W_hh"]
        dgi = np.empty((T, B, 3 * G), dtype=self.dtype)
        dW_hh = np.zeros_like(W_hh)
        db_hh = np.zeros(3 * G, dtype=self.dtype)
        dh_carry = np.zeros((B, G), dtype=self.dtype)
        for t in range(T - 1, -1, -1):
            dh = dH[t] + dh_carry
            r, z, n, h_prev = cache.r[t], cache.z[t], cache.n[t], cache.hs[t]
            dn_pre = dh * (1 - z) * (1 - n * n)
            dz_pre = dh * (h_prev - n) * z * (1 - z)
            dr_pre = dn_pre * cache.gh_n[t] * r * (1 - r)
            dgh = np.concatenate([dr_pre, dz_pre, dn_pre * r], axis=1)
            dgi[t] = np.concatenate([dr_pre, dz_pre, dn_pre], axis=1)
            dW_hh += h_prev.T @ dgh
            db_hh += dgh.sum(axis=0)
            dh_carry = dh * z + dgh @ W_hh.T
        g["gru.W_hh"] = dW_hh
        g["gru.b_hh"] = db_hh
        g["gru.W_ih"] = np.einsum("tbi,tbo->io", cache.h2, dgi)
        g["gru.b_ih"] = dgi.sum(axis=(0, 1))

        da2 = (dgi @ p["gru.W_ih"].T) * _lrelu_grad(cache.a2)
        g["fc2.W"] = np.einsum("tbi,tbo->io", cache.h1, da2)
        g["fc2.b"] = da2.sum(axis=(0, 1))
        da1 = (da2 @ p["fc2.W"].T) * _lrelu_grad(cache.a1)
        g["fc1.W"] = np.einsum("tbi,tbo->io", cache.x, da1)
        g["fc1.b"] = da1.sum(axis=(0, 1))
        return {k: g[k].astype(self.dtype, copy=False) for k in PARAM_NAMES}


def target_sync(net: RecurrentNet) -> RecurrentNet:
    """Frozen deep copy used as the target critic."""
    return net.copy()
