"""Central finite-difference gradient checking on the 64-bit path."""

from __future__ import annotations

import numpy as np

from .network import LEAKY_SLOPE, PARAM_NAMES, RecurrentNet


def relative_error(a, b, floor: float = 1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def _loss(net, x, w, mask):
    out, _, _ = net.forward(x)
    if net.head == "value":
        return float(np.sum(w * out * mask))
    return float(np.sum(w * out * mask[..., None]))


def _preacts(net, x):
    _, _, c = net.forward(x)
    return np.concatenate([c.a1.ravel(), c.a2.ravel(), c.a3.ravel()])


def check_gradients(net: RecurrentNet, seq_len: int, batch: int = 2, seed=0, h: float = 1e-3):
    """Compare analytic gradients with central differences of a random linear loss.

    Returns (analytic, numeric, max relative error). Entries whose difference
    stencil crosses a LeakyReLU kink are re-evaluated with a smaller step.
    """
    rng = np.random.default_rng(seed)
    net64 = net.astype(np.float64)
    x = rng.normal(size=(seq_len, batch, net.in_dim))
    mask = (rng.random((seq_len, batch)) < 0.8).astype(np.float64)
    if net.head == "value":
        w = rng.normal(size=(seq_len, batch))
    else:
        w = rng.normal(size=(seq_len, batch, net.out_dim))

    _, _, cache = net64.forward(x)
    analytic = net64.backward(cache, w, mask=mask)
    base_signs = np.sign(_preacts(net64, x))

    numeric = {}
    for name in PARAM_NAMES:
        param = net64.params[name]
        num = np.zeros_like(param)
        for idx in np.ndindex(param.shape):
            old = param[idx]
            step = h
            while True:
                param[idx] = old + step
                fp = _loss(net64, x, w, mask)
                crossed = np.any(np.sign(_preacts(net64, x)) != base_signs)
                param[idx] = old - step
                fm = _loss(net64, x, w, mask)
                crossed = crossed or np.any(np.sign(_preacts(net64, x)) != base_signs)
                if not crossed or step < h * 1e-4:
                    break
                step /= 10.0
            param[idx] = old
            num[idx] = (fp - fm) / (2 * step)
        numeric[name] = num

    err = max(float(relative_error(analytic[k], numeric[k]).max()) for k in PARAM_NAMES)
    return analytic, numeric, err


__all__ = ["check_gradients", "relative_error", "LEAKY_SLOPE"]
