"""Independent reference implementations used to freeze expected values.

Nothing here imports the package's computational code: every oracle is a
direct, slow transcription of the defining formula (explicit loops,
dictionaries, brute-force search) so that agreement with the package is
evidence rather than tautology.
"""

from __future__ import annotations

import math

import numpy as np


def forward_loops(layers, x):
    """Dense forward pass by nested loops.  ``layers`` is a list of
    ``(weight rows, bias, activation)`` with plain Python floats."""
    h = [float(v) for v in x]
    for weight, bias, act in layers:
        out = []
        for i in range(len(bias)):
            s = float(bias[i])
            for j in range(len(h)):
                s += float(weight[i][j]) * h[j]
            if act == "relu":
                s = s if s > 0 else 0.0
            elif act == "tanh":
                s = math.tanh(s)
            out.append(s)
        h = out
    return h


def softmax_list(z):
    m = max(z)
    e = [math.exp(v - m) for v in z]
    s = sum(e)
    return [v / s for v in e]


def ece_loops(conf, correct, B):
    """Equal-width ECE and over-confident ECE by explicit bin membership."""
    n = len(conf)
    bins = [[] for _ in range(B)]
    for c, a in zip(conf, correct):
        b = min(int(math.floor(c * B)), B - 1)
        # guard against floor rounding right at an edge
        while b > 0 and c < b / B:
            b -= 1
        while b < B - 1 and c >= (b + 1) / B:
            b += 1
        bins[b].append((c, a))
    total = over = 0.0
    for members in bins:
        if not members:
            continue
        mc = sum(c for c, _ in members) / len(members)
        ma = sum(a for _, a in members) / len(members)
        total += len(members) / n * abs(mc - ma)
        over += len(members) / n * max(0.0, mc - ma)
    return total, over


def true_calibration_dict(points_f, label_table, mu):
    """``c(x)_k`` by grouping points on exact forecast values with a dict."""
    m, K = len(points_f), len(points_f[0])
    c = [[0.0] * K for _ in range(m)]
    for k in range(K):
        groups = {}
        for i in range(m):
            groups.setdefault(points_f[i][k], []).append(i)
        for members in groups.values():
            mass = sum(mu[i] for i in members)
            val = sum(mu[i] * label_table[i][k] for i in members) / mass if mass > 0 else None
            for i in members:
                c[i][k] = val if val is not None else label_table[i][k]
    return c


def brier_terms_loops(f, label_table, mu):
    """``(classification error, calibration error, sharpness)`` by loops,
    with the classification error taken over the label distribution."""
    m, K = len(f), len(f[0])
    c = true_calibration_dict(f, label_table, mu)
    cls = cal = sharp = 0.0
    for i in range(m):
        for y in range(K):
            py = label_table[i][y]
            if py == 0:
                continue
            cls += mu[i] * py * sum((f[i][k] - (1.0 if k == y else 0.0)) ** 2 for k in range(K))
        cal += mu[i] * sum((f[i][k] - c[i][k]) ** 2 for k in range(K))
        sharp += mu[i] * sum(c[i][k] ** 2 for k in range(K))
    return cls, cal, sharp


def bound_terms_loops(p, q, label_table, f, g, U):
    """Theorem-style bound terms ``(lhs, rhs)`` by direct enumeration."""
    m, K = len(f), len(f[0])
    lam = (1.0 + U) ** 4
    c = true_calibration_dict(f, label_table, q)
    lhs = sum(q[i] * sum((f[i][k] - c[i][k]) ** 2 for k in range(K)) for i in range(m))
    weighted = 0.0
    for i in range(m):
        for y in range(K):
            err = sum((f[i][k] - (1.0 if k == y else 0.0)) ** 2 for k in range(K))
            weighted += p[i] * label_table[i][y] * err * (1.0 / g[i] - 0.5)
    def disc(h):
        return 0.5 * sum(p[i] * (h[i] - 1.0) ** 2 + q[i] * h[i] ** 2 for i in range(m))
    bayes = [p[i] / (p[i] + q[i]) if p[i] + q[i] > 0 else 1.0 for i in range(m)]
    rhs = weighted + lam * disc(g) - lam * disc(bayes)
    return lhs, rhs


def temperature_grid(logits, onehot, factor, coord, kind="softmax", lo=0.01, hi=100.0, step=1e-3):
    """Brute-force minimizer of the weighted squared error over a T grid.

    ``coord`` is ``None`` (all coordinates) or a per-row index array.
    ``kind="sigmoid"`` treats ``logits`` as a vector of scalar logits and
    ``onehot`` as the binary targets.
    """
    grid = np.arange(lo, hi + step / 2, step)
    z = np.asarray(logits, dtype=np.float64)
    t = np.asarray(onehot, dtype=np.float64)
    w = np.asarray(factor, dtype=np.float64)
    best_T, best = None, np.inf
    for chunk in np.array_split(grid, max(1, len(grid) // 2000)):
        if kind == "sigmoid":
            a = chunk[:, None] * z[None, :]
            prob = np.where(a >= 0, 1.0 / (1.0 + np.exp(-np.abs(a))), np.exp(-np.abs(a)) / (1.0 + np.exp(-np.abs(a))))
            loss = ((prob - t[None, :]) ** 2 * w[None, :]).mean(axis=1)
        else:
            a = chunk[:, None, None] * z[None, :, :]
            a = a - a.max(axis=2, keepdims=True)
            e = np.exp(a)
            prob = e / e.sum(axis=2, keepdims=True)
            sq = (prob - t[None]) ** 2
            if coord is None:
                per = sq.sum(axis=2)
            else:
                per = sq[:, np.arange(len(z)), coord]
            loss = (per * w[None, :]).mean(axis=1)
        j = int(np.argmin(loss))
        if loss[j] < best:
            best, best_T = float(loss[j]), float(chunk[j])
    return best_T, best


def rank_by_sort(weights, top_k):
    """Top-k examples by mean weight via a plain Python sort."""
    W = [list(map(float, row)) for row in np.asarray(weights)]
    n = len(W[0])
    cols = [[W[r][i] for r in range(len(W))] for i in range(n)]
    means = [sum(col) / len(col) for col in cols]
    order = sorted(range(n), key=lambda i: (-means[i], i))[:top_k]
    out = []
    for rank, i in enumerate(order, 1):
        s = sorted(cols[i])
        mid = len(s) // 2
        med = s[mid] if len(s) % 2 else 0.5 * (s[mid - 1] + s[mid])
        out.append((rank, i, med, s[0], s[-1]))
    return out
