"""Source-discriminator training, temperature calibration, clamping, and
the conversion from discriminator output to importance weight.

The discriminator estimates ``g(x) = r(s=1 | x)`` for the balanced
source/target mixture ``r``; the weight estimate is ``1/g - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, ShapeError
from .numerics import DenseNet, SgdConfig, apply_pipeline, forward, sgd_train, sigmoid
from .temperature import SIGMOID, fit_log_temperature

DEFAULT_U = 99.0


@dataclass
class DiscriminationSet:
    inputs: np.ndarray
    s: np.ndarray  # 1 = source, 0 = target

    def __len__(self):
        return self.inputs.shape[0]


def build_discrimination_set(source, target, seed) -> DiscriminationSet:
    """Balanced, shuffled mixture of the two pools.

    The larger pool is subsampled without replacement to the size of the
    smaller one, so ``r(s=1) = r(s=0) = 1/2`` holds in the sample.
    """
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.ndim != 2 or target.ndim != 2 or source.shape[1] != target.shape[1]:
        raise ShapeError("source and target features must share a dimension")
    if len(source) == 0 or len(target) == 0:
        raise InvalidInputError("both pools must be nonempty")
    rng = np.random.default_rng(seed)
    m = min(len(source), len(target))
    if len(source) > m:
        source = source[np.sort(rng.choice(len(source), m, replace=False))]
    if len(target) > m:
        target = target[np.sort(rng.choice(len(target), m, replace=False))]
    X = np.concatenate([source, target])
    s = np.concatenate([np.ones(m), np.zeros(m)])
    perm = rng.permutation(2 * m)
    return DiscriminationSet(X[perm], s[perm])


def make_head(dim, hidden, seed) -> DenseNet:
    """Scalar-logit head; ``hidden=0`` gives plain logistic regression."""
    rng = np.random.default_rng((seed, 17))
    if hidden:
        return DenseNet.init([dim, hidden, 1], ["relu", "identity"], rng)
    return DenseNet.init([dim, 1], ["identity"], rng)


def train_discriminator(dset: DiscriminationSet, config: SgdConfig, hidden=None, init=None):
    """Fit a sigmoid-output head by minimizing ``mean (g(x) - s)^2``.

    ``hidden`` defaults to the input width.  Returns ``(head, trace)``.
    """
    dim = dset.inputs.shape[1]
    if init is None:
        init = make_head(dim, dim if hidden is None else hidden, config.seed)
    return sgd_train(init, dset.inputs, dset.s, "sigmoid_squared", config)


def calibrate_discriminator(head: DenseNet, val: DiscriminationSet, config: SgdConfig = None) -> float:
    """Temperature ``T_g`` minimizing ``mean (sigmoid(T_g z) - s)^2`` on ``val``."""
    z = forward(head, val.inputs)[:, 0]
    T, _ = fit_log_temperature(z, val.s, kind=SIGMOID, config=config)
    return T


@dataclass
class SourceDiscriminator:
    features: list  # DenseNets applied before the head (phi, or phi then psi)
    head: DenseNet
    temperature: float = 1.0
    U: float = DEFAULT_U

    def __post_init__(self):
        if not self.temperature > 0:
            raise InvalidInputError("T_g must be positive")
        if not self.U > 0:
            raise InvalidInputError("U must be positive")

    def logit(self, X):
        return forward(self.head, apply_pipeline(self.features, X))[:, 0]

    def raw(self, X):
        """Temperature-scaled output before clamping."""
        return sigmoid(self.temperature * self.logit(X))

    def predict_g(self, X):
        return clamp_g(self.raw(X), self.U)

    def weights(self, X):
        return weight_from_g(self.predict_g(X))

    def to_dict(self):
        return {
            "features": [f.to_dict() for f in self.features],
            "head": self.head.to_dict(),
            "temperature": self.temperature,
            "U": self.U,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            [DenseNet.from_dict(f) for f in d["features"]],
            DenseNet.from_dict(d["head"]),
            float(d["temperature"]),
            float(d["U"]),
        )


def g_floor(U) -> float:
    """Smallest double ``g >= 1/(1+U)`` whose implied weight ``1/g - 1`` is at most ``U``.

    ``1/(1+U)`` itself is rounded, and for some ``U`` the weight computed
    from it lands one ulp above ``U``; stepping up restores the bound.
    """
    lo = 1.0 / (1.0 + U)
    while 1.0 / lo - 1.0 > U:
        lo = float(np.nextafter(lo, 2.0))
    return lo


def clamp_g(g, U):
    return np.clip(np.asarray(g, dtype=np.float64), g_floor(U), 1.0)


def predict_g(disc: SourceDiscriminator, X):
    return disc.predict_g(X)


def weight_from_g(g):
    """``1/g - 1``, the importance weight implied by a discriminator value."""
    g = np.asarray(g, dtype=np.float64)
    if (g <= 0).any() or (g > 1).any() or not np.isfinite(g).all():
        raise InvalidInputError("discriminator values must lie in (0, 1]")
    return 1.0 / g - 1.0


def fit_source_discriminator(features, src_train, tgt_train, src_val, tgt_val,
                             train_config: SgdConfig, temp_config: SgdConfig = None,
                             U=DEFAULT_U, hidden=None, seed=0, head=None):
    """Train a head on the feature pipeline, then calibrate its temperature.

    ``src_*``/``tgt_*`` are raw covariate matrices; the balanced training
    set comes from the ``*_train`` pools and the calibration set from the
    ``*_val`` pools.  Passing ``head`` skips training (used after feature
    learning, where the head is retrained separately).
    """
    ft = lambda X: apply_pipeline(features, X)
    if head is None:
        dset = build_discrimination_set(ft(src_train), ft(tgt_train), seed)
        head, _ = train_discriminator(dset, train_config, hidden)
    val = build_discrimination_set(ft(src_val), ft(tgt_val), seed + 1)
    T = calibrate_discriminator(head, val, temp_config)
    return SourceDiscriminator(list(features), head, T, U)
