"""Temperature scaling of a forecaster, plain and importance weighted, and
the four calibration pipelines (Temp, IW+Temp, FL+Temp, FL+IW+Temp).

The weighted objective is the bound's weighted classification error,
``mean (w_hat + 1/2) * ||softmax(T z) - y||^2`` where ``w_hat = 1/g - 1``
comes from a clamped source-discriminator; plain temperature scaling is
the same objective with ``w_hat = 1``.  In recalibration mode only the
predicted coordinate enters the squared error.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .discriminator import (
    DEFAULT_U,
    SourceDiscriminator,
    fit_source_discriminator,
)
from .errors import ConfigError, InvalidInputError
from .featlearn import AdversarialConfig, PsiArtifacts, retrain_discriminator, train_indistinguishable
from .metrics import DEFAULT_BINS, EceReport, confidence_and_correctness, ece
from .numerics import DenseNet, SgdConfig, apply_pipeline, forward, sgd_train, softmax
from .scenarios import Dataset
from .temperature import SOFTMAX, fit_log_temperature, temperature_objective

METHODS = ("Temp", "IW+Temp", "FL+Temp", "FL+IW+Temp")
MODES = ("recalibration", "full")


@dataclass
class Forecaster:
    features: list  # DenseNets producing the representation fed to ``head``
    head: DenseNet
    temperature: float = 1.0
    mode: str = "recalibration"

    def __post_init__(self):
        if not self.temperature > 0:
            raise InvalidInputError("T_f must be positive")
        if self.mode not in MODES:
            raise InvalidInputError(f"mode must be one of {MODES}")

    def logits(self, X):
        return forward(self.head, apply_pipeline(self.features, X))

    def predict(self, X):
        return softmax(self.temperature * self.logits(X))

    def predict_label(self, X):
        return self.logits(X).argmax(axis=1)

    def to_dict(self):
        return {
            "features": [f.to_dict() for f in self.features],
            "head": self.head.to_dict(),
            "temperature": self.temperature,
            "mode": self.mode,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            [DenseNet.from_dict(f) for f in d["features"]],
            DenseNet.from_dict(d["head"]),
            float(d["temperature"]),
            d.get("mode", "recalibration"),
        )


@dataclass
class CalibrationBatch:
    logits: np.ndarray
    onehot: np.ndarray
    weights: Optional[np.ndarray] = None  # w_hat; None means all ones

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        self.onehot = np.asarray(self.onehot, dtype=np.float64)
        if self.logits.shape != self.onehot.shape:
            raise InvalidInputError("logits and one-hot labels must have the same shape")
        if np.abs(self.onehot.sum(axis=1) - 1).max(initial=0) > 0:
            raise InvalidInputError("one-hot rows must sum to 1")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=np.float64)
            if self.weights.shape != (len(self.logits),):
                raise InvalidInputError("need one weight per example")
            if (self.weights < 0).any() or not np.isfinite(self.weights).all():
                raise InvalidInputError("weights must be finite and nonnegative")

    def factor(self):
        """``w_hat + 1/2``, i.e. ``1/g - 1/2``; never below 1/2."""
        w = np.ones(len(self.logits)) if self.weights is None else self.weights
        f = w + 0.5
        assert (f >= 0.5).all()
        return f

    def coord(self, mode):
        if mode == "full":
            return None
        if mode == "recalibration":
            return self.logits.argmax(axis=1)
        raise InvalidInputError(f"mode must be one of {MODES}")


def weighted_brier(batch: CalibrationBatch, T, mode="recalibration") -> float:
    return temperature_objective(batch.logits, batch.onehot, batch.factor(), batch.coord(mode), T, SOFTMAX)


def fit_temperature(batch: CalibrationBatch, config: SgdConfig = None, mode="recalibration") -> float:
    if len(batch.logits) == 0:
        raise InvalidInputError("calibration batch is empty")
    T, _ = fit_log_temperature(
        batch.logits, batch.onehot, batch.factor(), batch.coord(mode), SOFTMAX, config
    )
    return T


# -- base classifier --------------------------------------------------------


def train_classifier(data: Dataset, config: SgdConfig, hidden=8, loss="softmax_squared") -> DenseNet:
    """One-hidden-layer relu network; its hidden layer is the feature map."""
    rng = np.random.default_rng((config.seed, 5))
    net = DenseNet.init([data.dim, hidden, data.n_classes], ["relu", "identity"], rng)
    net, _ = sgd_train(net, data.features, data.one_hot(), loss, config)
    return net


def split_classifier(net: DenseNet):
    """``(phi, f_bar)``: every layer but the last, and the last layer."""
    if len(net.layers) < 2:
        raise InvalidInputError("classifier needs a hidden layer to define a feature map")
    return DenseNet(net.copy().layers[:-1]), DenseNet([net.copy().layers[-1]])


# -- pipelines --------------------------------------------------------------


@dataclass
class PipelineData:
    source_train: Dataset
    source_val: Dataset
    target_train: Dataset  # unlabeled
    target_val: Dataset  # unlabeled, for the discriminator temperature
    target_eval: Optional[Dataset] = None  # labeled, evaluation only

    def check(self):
        for name in ("source_train", "source_val"):
            if not getattr(self, name).labeled:
                raise ConfigError(f"{name} must be labeled")
        if self.target_eval is not None and not self.target_eval.labeled:
            raise ConfigError("target_eval must be labeled")


@dataclass
class PipelineConfig:
    classifier: SgdConfig = field(default_factory=lambda: SgdConfig(lr=0.5, epochs=60, batch_size=32))
    classifier_hidden: int = 8
    discriminator: SgdConfig = field(default_factory=lambda: SgdConfig(lr=0.5, epochs=40, batch_size=32, dropout=0.1))
    disc_hidden: Optional[int] = None
    temperature: SgdConfig = field(default_factory=lambda: SgdConfig(lr=0.5, epochs=1000, batch_size=128))
    adversarial: AdversarialConfig = field(default_factory=AdversarialConfig)
    U: float = DEFAULT_U
    bins: int = DEFAULT_BINS
    mode: str = "recalibration"


@dataclass
class MethodResult:
    method: str
    seed: int
    forecaster: Forecaster
    discriminator: Optional[SourceDiscriminator] = None
    psi: Optional[PsiArtifacts] = None
    report: Optional[EceReport] = None
    cls_error: Optional[float] = None
    timings: dict = field(default_factory=dict)
    val_accuracy: Optional[float] = None


def stage_seed(seed, stage) -> int:
    """Independent 63-bit seed per (run seed, stage name)."""
    code = sum(ord(ch) * 131**i for i, ch in enumerate(stage)) % (2**31)
    return int(np.random.SeedSequence([int(seed), code]).generate_state(2, np.uint64)[0] >> 1)


def evaluate(forecaster: Forecaster, data: Dataset, B=DEFAULT_BINS):
    probs = forecaster.predict(data.features)
    conf, corr = confidence_and_correctness(probs, data.labels)
    return ece(conf, corr, B), 1.0 - float(corr.mean())


def _accuracy(forecaster, data):
    return float((forecaster.predict_label(data.features) == data.labels).mean())


def run_method(method, data: PipelineData, config: PipelineConfig, classifier: DenseNet,
               seed=0, weight_fn: Optional[Callable] = None) -> MethodResult:
    """Run one calibration variant on top of a trained classifier.

    ``weight_fn`` replaces the learned discriminator's weights with a
    given function of the raw covariates (e.g. the exact ``q/p`` of a
    synthetic world); it only affects the IW variants.
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {METHODS}")
    data.check()
    phi, f_bar = split_classifier(classifier)
    timings = {}
    use_fl = method.startswith("FL")
    use_iw = "IW" in method

    def sgd(cfg: SgdConfig, stage):
        return cfg.replace(seed=stage_seed(seed, stage))

    psi_art = None
    features, head = [phi], f_bar
    if use_fl:
        t0 = time.perf_counter()
        adv = AdversarialConfig(**{**config.adversarial.__dict__, "seed": stage_seed(seed, "fl")})
        src_phi = forward(phi, data.source_train.features)
        tgt_phi = forward(phi, data.target_train.features)
        psi_art = train_indistinguishable(src_phi, data.source_train.one_hot(), tgt_phi, adv, label_head=f_bar)
        features, head = [phi, psi_art.psi], psi_art.label_head
        timings["feature_learning"] = time.perf_counter() - t0

    disc = None
    w_hat = None
    if use_iw:
        t0 = time.perf_counter()
        if weight_fn is not None:
            w_hat = np.asarray(weight_fn(data.source_val.features), dtype=np.float64)
        else:
            disc_cfg = sgd(config.discriminator, "disc")
            temp_cfg = sgd(config.temperature, "disc-temp")
            pre_head = None
            if use_fl:
                pre_head = retrain_discriminator(
                    psi_art,
                    forward(phi, data.source_train.features),
                    forward(phi, data.target_train.features),
                    disc_cfg,
                    config.disc_hidden,
                )
            disc = fit_source_discriminator(
                features, data.source_train.features, data.target_train.features,
                data.source_val.features, data.target_val.features,
                disc_cfg, temp_cfg, U=config.U, hidden=config.disc_hidden,
                seed=stage_seed(seed, "disc-set"), head=pre_head,
            )
            w_hat = disc.weights(data.source_val.features)
        timings["discriminator"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    fc = Forecaster(features, head, 1.0, config.mode)
    batch = CalibrationBatch(fc.logits(data.source_val.features), data.source_val.one_hot(), w_hat)
    fc.temperature = fit_temperature(batch, sgd(config.temperature, "temp"), config.mode)
    timings["calibration"] = time.perf_counter() - t0

    result = MethodResult(method, seed, fc, disc, psi_art, timings=timings)
    result.val_accuracy = _accuracy(fc, data.source_val)
    if psi_art is not None:
        base = Forecaster([phi], f_bar)
        psi_art.degenerate = result.val_accuracy < _accuracy(base, data.source_val) - 0.10
    if data.target_eval is not None:
        result.report, result.cls_error = evaluate(fc, data.target_eval, config.bins)
    return result
