"""Small dense networks trained by minibatch SGD with hand-written backprop.

Everything here works on float64 numpy arrays, row-major batches
(``X`` has shape ``(n, in_dim)``).  Nets are plain containers; the
functions below never mutate a net except :func:`apply_gradient`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergedError, InvalidInputError, ShapeError

ACTIVATIONS = ("relu", "tanh", "identity")
LOSSES = ("squared", "softmax_squared", "sigmoid_squared", "softmax_xent")


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"layer weight {self.weight.shape} and bias {self.bias.shape} disagree"
            )

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class DenseNet:
    layers: list[Layer] = field(default_factory=list)

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("a DenseNet needs at least one layer")
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.out_dim != b.in_dim:
                raise ShapeError(
                    f"layer {i} outputs {a.out_dim} values but layer {i + 1} "
                    f"expects {b.in_dim}"
                )

    @classmethod
    def init(cls, sizes, activations, rng) -> "DenseNet":
        """Glorot-uniform weights and zero biases.

        ``sizes`` lists layer widths including the input, so ``[2, 8, 3]``
        builds two layers.  ``activations`` has one entry per layer.
        """
        if len(activations) != len(sizes) - 1:
            raise ShapeError("need one activation per layer")
        layers = []
        for n_in, n_out, act in zip(sizes[:-1], sizes[1:], activations):
            a = math.sqrt(6.0 / (n_in + n_out))
            layers.append(
                Layer(rng.uniform(-a, a, size=(n_out, n_in)), np.zeros(n_out), act)
            )
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def n_params(self) -> int:
        return sum(l.weight.size + l.bias.size for l in self.layers)

    def copy(self) -> "DenseNet":
        return DenseNet(
            [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )

    def get_flat(self) -> np.ndarray:
        return np.concatenate(
            [np.concatenate([l.weight.ravel(), l.bias]) for l in self.layers]
        )

    def set_flat(self, theta) -> None:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ShapeError(f"expected {self.n_params} parameters, got {theta.shape}")
        pos = 0
        for l in self.layers:
            k = l.weight.size
            l.weight[...] = theta[pos : pos + k].reshape(l.weight.shape)
            pos += k
            l.bias[...] = theta[pos : pos + l.bias.size]
            pos += l.bias.size

    def is_finite(self) -> bool:
        return all(
            np.isfinite(l.weight).all() and np.isfinite(l.bias).all()
            for l in self.layers
        )

    def to_dict(self) -> dict:
        return {
            "layers": [
                {
                    "in": l.in_dim,
                    "out": l.out_dim,
                    "activation": l.activation,
                    "weight": l.weight.ravel().tolist(),
                    "bias": l.bias.tolist(),
                }
                for l in self.layers
            ]
        }

    @classmethod
    def from_dict(cls, d) -> "DenseNet":
        layers = []
        for spec in d["layers"]:
            w = np.asarray(spec["weight"], dtype=np.float64)
            if w.size != spec["out"] * spec["in"]:
                raise ShapeError("serialized weight has the wrong number of entries")
            layers.append(
                Layer(w.reshape(spec["out"], spec["in"]), spec["bias"], spec["activation"])
            )
        return cls(layers)


@dataclass
class SgdConfig:
    lr: float = 0.1
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    dropout: float = 0.0

    def __post_init__(self):
        if not self.lr > 0:
            raise InvalidInputError("learning rate must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidInputError("epochs must be >= 0 and batch size >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidInputError("dropout rate must lie in [0, 1)")

    def replace(self, **kw) -> "SgdConfig":
        d = dict(self.__dict__)
        d.update(kw)
        return SgdConfig(**d)


# -- elementwise pieces -----------------------------------------------------


def softmax(logits):
    """Row-wise softmax with max subtraction; accepts a vector or a matrix."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(z).all():
        raise InvalidInputError("softmax input contains non-finite values")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def _activate(a, kind):
    if kind == "relu":
        return np.maximum(a, 0.0)
    if kind == "tanh":
        return np.tanh(a)
    return a


def _activation_grad(pre, post, kind):
    if kind == "relu":
        return (pre > 0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - post * post
    return np.ones_like(pre)


# -- forward / backward -----------------------------------------------------


def _as_batch(net, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != net.in_dim:
        raise ShapeError(f"input has shape {x.shape}, net expects {net.in_dim} features")
    return X, single


def forward(net: DenseNet, x):
    """Apply ``net`` to one vector or a batch of row vectors."""
    X, single = _as_batch(net, x)
    h = X
    for l in net.layers:
        h = _activate(h @ l.weight.T + l.bias, l.activation)
    return h[0] if single else h


def apply_pipeline(nets, X):
    """Compose a sequence of nets left to right (``nets[0]`` sees ``X``)."""
    h = np.asarray(X, dtype=np.float64)
    for net in nets:
        h = forward(net, h)
    return h


def forward_cached(net: DenseNet, X, dropout=0.0, rng=None):
    """Forward pass keeping what :func:`backward` needs.

    Inverted dropout is applied to the output of every hidden layer
    (never the last one) when ``dropout > 0``.
    """
    X, _ = _as_batch(net, X)
    cache = []
    h = X
    last = len(net.layers) - 1
    for i, l in enumerate(net.layers):
        pre = h @ l.weight.T + l.bias
        post = _activate(pre, l.activation)
        mask = None
        if dropout > 0 and i < last:
            keep = 1.0 - dropout
            mask = (rng.random(post.shape) < keep) / keep
            post = post * mask
        cache.append((h, pre, post, mask))
        h = post
    return h, cache


def backward(net: DenseNet, cache, grad_out):
    """Backpropagate ``grad_out`` (dL/d output) through a cached pass.

    Returns ``(grads, grad_input)`` where ``grads`` is a list of
    ``(dW, db)`` pairs, one per layer.
    """
    grads = [None] * len(net.layers)
    g = grad_out
    for i in range(len(net.layers) - 1, -1, -1):
        l = net.layers[i]
        h_in, pre, post, mask = cache[i]
        if mask is not None:
            g = g * mask
            post = post / np.where(mask > 0, mask, 1.0)
        g = g * _activation_grad(pre, post, l.activation)
        grads[i] = (g.T @ h_in, g.sum(axis=0))
        g = g @ l.weight
    return grads, g


def loss_and_grad(output, targets, weights, kind):
    """Mean weighted loss over the batch and its gradient w.r.t. ``output``."""
    if kind not in LOSSES:
        raise InvalidInputError(f"unknown loss {kind!r}")
    if not np.isfinite(output).all():
        raise DivergedError("network output is not finite")
    n = output.shape[0]
    t = np.asarray(targets, dtype=np.float64).reshape(output.shape)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise ShapeError(f"expected {n} per-example weights, got {w.shape}")
    if (w < 0).any() or not np.isfinite(w).all():
        raise InvalidInputError("per-example weights must be finite and nonnegative")
    # overflow surfaces as a non-finite loss, reported below as divergence
    with np.errstate(over="ignore", invalid="ignore"):
        if kind == "squared":
            r = output - t
            loss = np.dot(w, (r * r).sum(axis=1)) / n
            grad = 2.0 * w[:, None] * r / n
        elif kind == "softmax_squared":
            p = softmax(output)
            r = p - t
            loss = np.dot(w, (r * r).sum(axis=1)) / n
            gp = 2.0 * w[:, None] * r / n
            grad = p * (gp - (gp * p).sum(axis=1, keepdims=True))
        elif kind == "sigmoid_squared":
            p = sigmoid(output)
            r = p - t
            loss = np.dot(w, (r * r).sum(axis=1)) / n
            grad = 2.0 * w[:, None] * r * p * (1.0 - p) / n
        else:
            z = output - output.max(axis=1, keepdims=True)
            logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
            loss = -np.dot(w, (t * logp).sum(axis=1)) / n
            grad = w[:, None] * (np.exp(logp) * t.sum(axis=1, keepdims=True) - t) / n
    if not math.isfinite(loss):
        raise DivergedError("loss is not finite")
    return float(loss), grad


def loss_value(net, inputs, targets, weights=None, loss="softmax_squared"):
    return loss_and_grad(forward(net, inputs), targets, weights, loss)[0]


def backprop_grad(net, inputs, targets, weights=None, loss="softmax_squared"):
    """Gradient of the mean weighted loss with respect to every parameter."""
    out, cache = forward_cached(net, inputs)
    if out.shape[0] != np.asarray(targets).shape[0]:
        raise ShapeError("inputs and targets have different lengths")
    _, g = loss_and_grad(out, targets, weights, loss)
    grads, _ = backward(net, cache, g)
    return grads


def flatten_grads(grads) -> np.ndarray:
    return np.concatenate([np.concatenate([dW.ravel(), db]) for dW, db in grads])


def apply_gradient(net, grads, lr) -> None:
    for l, (dW, db) in zip(net.layers, grads):
        l.weight -= lr * dW
        l.bias -= lr * db


def finite_difference_grad(net, inputs, targets, weights=None, loss="softmax_squared", step=1e-5):
    """Central-difference gradient over the flat parameter vector."""
    probe = net.copy()
    theta = probe.get_flat()
    out = np.empty_like(theta)
    for j in range(theta.size):
        orig = theta[j]
        theta[j] = orig + step
        probe.set_flat(theta)
        up = loss_value(probe, inputs, targets, weights, loss)
        theta[j] = orig - step
        probe.set_flat(theta)
        down = loss_value(probe, inputs, targets, weights, loss)
        theta[j] = orig
        out[j] = (up - down) / (2 * step)
    return out


def gradient_check(net, inputs, targets, weights=None, loss="softmax_squared", step=1e-5):
    """Largest elementwise relative gap between backprop and finite differences."""
    analytic = flatten_grads(backprop_grad(net, inputs, targets, weights, loss))
    numeric = finite_difference_grad(net, inputs, targets, weights, loss, step)
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-7)
    return float(np.max(np.abs(analytic - numeric) / denom))


def iterate_minibatches(n, batch_size, rng):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def sgd_train(net, inputs, targets, loss, config: SgdConfig, weights=None):
    """Minibatch SGD on a copy of ``net``.

    Returns ``(trained_net, trace)`` where ``trace[e]`` is the full-data
    loss after epoch ``e`` (dropout off).  Raises :class:`DivergedError`
    naming the epoch if the loss stops being finite.
    """
    X = np.asarray(inputs, dtype=np.float64)
    T = np.asarray(targets, dtype=np.float64)
    if T.ndim == 1:
        T = T[:, None]
    if X.shape[0] != T.shape[0]:
        raise ShapeError("inputs and targets have different lengths")
    w = None if weights is None else np.asarray(weights, dtype=np.float64)
    net = net.copy()
    rng = np.random.default_rng(config.seed)
    trace = []
    for epoch in range(config.epochs):
        for idx in iterate_minibatches(X.shape[0], config.batch_size, rng):
            out, cache = forward_cached(net, X[idx], config.dropout, rng)
            try:
                _, g = loss_and_grad(out, T[idx], None if w is None else w[idx], loss)
            except DivergedError as exc:
                raise DivergedError(f"training diverged in epoch {epoch}", epoch) from exc
            grads, _ = backward(net, cache, g)
            apply_gradient(net, grads, config.lr)
        if not net.is_finite():
            raise DivergedError(f"parameters became non-finite in epoch {epoch}", epoch)
        try:
            trace.append(loss_value(net, X, T, w, loss))
        except DivergedError as exc:
            raise DivergedError(f"training diverged in epoch {epoch}", epoch) from exc
    return net, trace
