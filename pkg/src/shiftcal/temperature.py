"""One-parameter temperature fitting shared by the forecaster and the
source-discriminator.

The temperature multiplies the logits (``softmax(T * z)``), and is
optimized as ``T = exp(theta)`` so SGD never leaves ``T > 0``.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .errors import DivergedError, InvalidInputError
from .numerics import SgdConfig

SOFTMAX = kernels.SOFTMAX
SIGMOID = kernels.SIGMOID


def _prepare(logits, target, factor, coord):
    z = np.ascontiguousarray(logits, dtype=np.float64)
    if z.ndim == 1:
        z = z[:, None]
    t = np.ascontiguousarray(target, dtype=np.float64).reshape(z.shape)
    n = z.shape[0]
    f = np.ones(n) if factor is None else np.ascontiguousarray(factor, dtype=np.float64)
    c = np.full(n, -1, dtype=np.int64) if coord is None else np.ascontiguousarray(coord, dtype=np.int64)
    if f.shape != (n,) or c.shape != (n,):
        raise InvalidInputError("factor and coord need one entry per row")
    return z, t, f, c


def temperature_objective(logits, target, factor=None, coord=None, T=1.0, kind=SOFTMAX):
    """Mean of ``factor_i * ||link(T z_i) - t_i||^2`` over active coordinates."""
    if not T > 0:
        raise InvalidInputError("temperature must be positive")
    z, t, f, c = _prepare(logits, target, factor, coord)
    return float(kernels.temperature_loss(z, t, f, c, math.log(T), kind)[0])


def fit_log_temperature(logits, target, factor=None, coord=None, kind=SOFTMAX,
                        config: SgdConfig = None):
    """SGD on ``theta = log T`` starting from ``T = 1``.

    The best full-data iterate seen at an epoch boundary is returned (the
    start counts), so the fitted loss never exceeds the loss at ``T = 1``.
    Returns ``(T, trace)``.
    """
    config = config or SgdConfig(lr=0.5, epochs=1000, batch_size=128)
    z, t, f, c = _prepare(logits, target, factor, coord)
    if z.shape[0] == 0:
        raise InvalidInputError("cannot fit a temperature on an empty batch")
    rng = np.random.default_rng(config.seed)
    theta = 0.0
    best_loss = float(kernels.temperature_loss(z, t, f, c, theta, kind)[0])
    best_theta = theta
    trace = []
    for epoch in range(config.epochs):
        order = rng.permutation(z.shape[0])
        theta = kernels.temperature_epoch(
            z, t, f, c, order, theta, config.lr, config.batch_size, kind
        )
        if not math.isfinite(theta) or abs(theta) > 700:
            raise DivergedError(f"temperature diverged in epoch {epoch}", epoch)
        loss = float(kernels.temperature_loss(z, t, f, c, theta, kind)[0])
        if not math.isfinite(loss):
            raise DivergedError(f"temperature loss not finite in epoch {epoch}", epoch)
        trace.append(loss)
        if loss < best_loss:
            best_loss, best_theta = loss, theta
    return math.exp(best_theta), trace
