"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np

SOFTMAX = 0
SIGMOID = 1


def _rows(logits, target, factor, coord, T, kind):
    """Per-row loss and per-row dL/dtheta."""
    if kind == SIGMOID:
        z = logits[:, 0]
        u = T * z
        e = np.exp(-np.abs(u))
        q = np.where(u >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        r = q - target[:, 0]
        return factor * r * r, T * z * 2.0 * factor * r * q * (1.0 - q)
    u = T * (logits - logits.max(axis=1, keepdims=True))
    p = np.exp(u)
    p /= p.sum(axis=1, keepdims=True)
    active = (coord[:, None] < 0) | (np.arange(logits.shape[1])[None, :] == coord[:, None])
    r = np.where(active, p - target, 0.0)
    g = 2.0 * factor[:, None] * r
    du = p * (g - (g * p).sum(axis=1, keepdims=True))
    return factor * (r * r).sum(axis=1), T * (du * logits).sum(axis=1)


def temperature_epoch(logits, target, factor, coord, order, theta, lr, batch_size, kind):
    n = order.shape[0]
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        _, d = _rows(logits[idx], target[idx], factor[idx], coord[idx], np.exp(theta), kind)
        theta -= lr * d.sum() / idx.size
    return theta


def temperature_loss(logits, target, factor, coord, theta, kind):
    loss, d = _rows(logits, target, factor, coord, np.exp(theta), kind)
    n = logits.shape[0]
    return loss.sum() / n, d.sum() / n


def bin_sums(conf, correct, edges):
    B = edges.shape[0] - 1
    idx = np.searchsorted(edges, conf, side="right") - 1
    idx = np.clip(idx, 0, B - 1)
    counts = np.bincount(idx, minlength=B).astype(np.int64)
    sc = np.bincount(idx, weights=conf, minlength=B)
    sa = np.bincount(idx, weights=correct, minlength=B)
    return counts, sc, sa
