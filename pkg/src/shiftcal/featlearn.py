"""Indistinguishable feature learning on top of a fixed feature map.

An auxiliary map ``psi`` is trained so that a label head on ``psi``
features stays accurate while a discriminator head cannot tell source
features from target features.  The two players alternate: the
discriminator takes ``disc_steps`` SGD steps on the squared
discrimination loss, then ``psi`` and the label head take one step on
``label_loss - lambda_d * discrimination_loss`` with the gradient of the
second term flowing through the (frozen) discriminator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .discriminator import build_discrimination_set, make_head, train_discriminator
from .errors import DivergedError, InvalidInputError, ShapeError
from .numerics import (
    DenseNet,
    Layer,
    SgdConfig,
    apply_gradient,
    backward,
    forward,
    forward_cached,
    loss_and_grad,
    sigmoid,
)

STOP_THRESHOLD = "threshold"
STOP_CONFIDENT = "too-confident"
STOP_MAX_EPOCHS = "max-epochs"


@dataclass
class AdversarialConfig:
    lambda_d: float = 1.0
    disc_steps: int = 1
    tau: float = 0.2
    # "below": stop once the discriminator training loss drops under tau.
    # "above": stop once it rises to tau or more.
    tau_direction: str = "below"
    max_epochs: int = 30
    min_epochs: int = 1
    confident_hi: float = 0.95
    confident_lo: float = 0.05
    confident_patience: int = 5
    dropout: float = 0.2
    lr: float = 0.1
    batch_size: int = 64
    seed: int = 0
    hidden: Optional[int] = None  # psi width; defaults to the input width
    disc_hidden: Optional[int] = None
    warm_start: bool = True

    def __post_init__(self):
        if self.lambda_d < 0:
            raise InvalidInputError("lambda_d must be nonnegative")
        if not 0 < self.tau <= 0.25:
            raise InvalidInputError("tau must lie in (0, 0.25]")
        if self.tau_direction not in ("below", "above"):
            raise InvalidInputError("tau_direction must be 'below' or 'above'")
        if self.disc_steps < 1 or self.max_epochs < 0:
            raise InvalidInputError("disc_steps >= 1 and max_epochs >= 0 required")
        if not 0 <= self.dropout < 1:
            raise InvalidInputError("dropout must lie in [0, 1)")


@dataclass
class PsiArtifacts:
    psi: DenseNet
    label_head: DenseNet
    disc_head: DenseNet
    retrained_disc: Optional[DenseNet] = None
    label_trace: list = field(default_factory=list)
    disc_trace: list = field(default_factory=list)
    stop_reason: str = STOP_MAX_EPOCHS
    epochs_run: int = 0
    degenerate: bool = False

    def features(self, phi_feats):
        return forward(self.psi, phi_feats)

    def to_dict(self):
        return {
            "psi": self.psi.to_dict(),
            "label_head": self.label_head.to_dict(),
            "disc_head": self.disc_head.to_dict(),
            "retrained_disc": None if self.retrained_disc is None else self.retrained_disc.to_dict(),
            "label_trace": list(self.label_trace),
            "disc_trace": list(self.disc_trace),
            "stop_reason": self.stop_reason,
            "epochs_run": self.epochs_run,
            "degenerate": self.degenerate,
        }

    @classmethod
    def from_dict(cls, d):
        rd = d.get("retrained_disc")
        return cls(
            DenseNet.from_dict(d["psi"]),
            DenseNet.from_dict(d["label_head"]),
            DenseNet.from_dict(d["disc_head"]),
            None if rd is None else DenseNet.from_dict(rd),
            list(d.get("label_trace", [])),
            list(d.get("disc_trace", [])),
            d.get("stop_reason", STOP_MAX_EPOCHS),
            int(d.get("epochs_run", 0)),
            bool(d.get("degenerate", False)),
        )


def _init_psi(dim, width, warm, rng):
    if warm and width == dim:
        # relu(I z) = z for the nonnegative relu features of the classifier
        return DenseNet([Layer(np.eye(dim), np.zeros(dim), "relu")])
    return DenseNet.init([dim, width], ["relu"], rng)


def _disc_loss(disc, h, s):
    out = forward(disc, h)
    return loss_and_grad(out, s, None, "sigmoid_squared")[0], sigmoid(out[:, 0])


def _adversarial_epoch(Xs, Xt, Ys, src_order, tgt_order, psi, F, D, config, rng):
    """One pass over the source pool: discriminator steps, then a psi/label step."""
    b = config.batch_size
    n_src, n_tgt = len(Xs), len(Xt)
    for start in range(0, n_src, b):
        si = src_order[start : start + b]
        ti = tgt_order[np.arange(start, start + len(si)) % n_tgt]
        xs, xt, ys = Xs[si], Xt[ti], Ys[si]
        m = len(si)
        s = np.concatenate([np.ones(m), np.zeros(m)])

        # discriminator player
        h = forward(psi, np.concatenate([xs, xt]))
        for _ in range(config.disc_steps):
            out, cache = forward_cached(D, h, config.dropout, rng)
            _, g = loss_and_grad(out, s, None, "sigmoid_squared")
            grads, _ = backward(D, cache, g)
            apply_gradient(D, grads, config.lr)

        # feature/label player
        h, pcache = forward_cached(psi, np.concatenate([xs, xt]))
        out_f, fcache = forward_cached(F, h[:m])
        _, g_lab = loss_and_grad(out_f, ys, None, "softmax_squared")
        f_grads, dh_lab = backward(F, fcache, g_lab)
        dh = np.zeros_like(h)
        dh[:m] = dh_lab
        if config.lambda_d > 0:
            out_d, dcache = forward_cached(D, h)
            _, g_d = loss_and_grad(out_d, s, None, "sigmoid_squared")
            _, dh_disc = backward(D, dcache, g_d)
            dh -= config.lambda_d * dh_disc
        psi_grads, _ = backward(psi, pcache, dh)
        apply_gradient(F, f_grads, config.lr)
        apply_gradient(psi, psi_grads, config.lr)


def train_indistinguishable(src_feats, src_onehot, tgt_feats, config: AdversarialConfig,
                            label_head: Optional[DenseNet] = None) -> PsiArtifacts:
    """Adversarially train ``psi``, the label head and the discriminator head.

    ``src_feats``/``tgt_feats`` are feature-map outputs (``phi(x)``).
    ``label_head`` warm-starts the label head (normally the classifier's
    output layer); otherwise it is initialized at random.
    """
    Xs = np.asarray(src_feats, dtype=np.float64)
    Xt = np.asarray(tgt_feats, dtype=np.float64)
    Ys = np.asarray(src_onehot, dtype=np.float64)
    if Xs.ndim != 2 or Xt.ndim != 2 or Xs.shape[1] != Xt.shape[1]:
        raise ShapeError("source and target features must share a dimension")
    if len(Xs) == 0 or len(Xt) == 0:
        raise InvalidInputError("both feature pools must be nonempty")
    if Ys.shape[0] != Xs.shape[0]:
        raise ShapeError("need one label row per source example")
    dim = Xs.shape[1]
    width = config.hidden or dim
    rng = np.random.default_rng(config.seed)
    psi = _init_psi(dim, width, config.warm_start, rng)
    if label_head is not None and config.warm_start and width == dim:
        F = label_head.copy()
    else:
        F = DenseNet.init([width, Ys.shape[1]], ["identity"], rng)
    dh = config.disc_hidden if config.disc_hidden is not None else width
    D = make_head(width, dh, config.seed)

    # fixed balanced evaluation set for the traces and the stopping rules
    eval_set = build_discrimination_set(Xs, Xt, config.seed + 1)
    ev_src = eval_set.inputs[eval_set.s == 1]
    ev_tgt = eval_set.inputs[eval_set.s == 0]

    art = PsiArtifacts(psi, F, D)
    n_src, n_tgt = len(Xs), len(Xt)
    confident_run = 0
    for epoch in range(config.max_epochs):
        src_order = rng.permutation(n_src)
        tgt_order = rng.permutation(n_tgt)
        try:
            _adversarial_epoch(Xs, Xt, Ys, src_order, tgt_order, psi, F, D, config, rng)
        except DivergedError as exc:
            raise DivergedError(f"feature learning diverged in epoch {epoch}", epoch) from exc

        if not (psi.is_finite() and F.is_finite() and D.is_finite()):
            raise DivergedError(f"feature learning diverged in epoch {epoch}", epoch)
        h_src = forward(psi, ev_src)
        h_tgt = forward(psi, ev_tgt)
        d_loss, _ = _disc_loss(D, np.concatenate([h_src, h_tgt]),
                               np.concatenate([np.ones(len(h_src)), np.zeros(len(h_tgt))]))
        try:
            l_loss = loss_and_grad(forward(F, forward(psi, Xs)), Ys, None, "softmax_squared")[0]
        except DivergedError as exc:
            raise DivergedError(f"feature learning diverged in epoch {epoch}", epoch) from exc
        art.disc_trace.append(d_loss)
        art.label_trace.append(l_loss)
        art.epochs_run = epoch + 1

        src_mean = float(sigmoid(forward(D, h_src)[:, 0]).mean())
        tgt_mean = float(sigmoid(forward(D, h_tgt)[:, 0]).mean())
        if src_mean > config.confident_hi and tgt_mean < config.confident_lo:
            confident_run += 1
        else:
            confident_run = 0
        if confident_run >= config.confident_patience:
            art.stop_reason = STOP_CONFIDENT
            break
        if epoch + 1 >= config.min_epochs:
            crossed = d_loss < config.tau if config.tau_direction == "below" else d_loss >= config.tau
            if crossed:
                art.stop_reason = STOP_THRESHOLD
                break
    return art


def retrain_discriminator(art: PsiArtifacts, src_phi, tgt_phi, config: SgdConfig, hidden=None) -> DenseNet:
    """Fresh discriminator head on frozen ``psi`` features.

    ``psi`` is not touched; the new head is stored on ``art`` and returned.
    """
    dset = build_discrimination_set(art.features(src_phi), art.features(tgt_phi), config.seed)
    width = art.psi.out_dim
    head, _ = train_discriminator(dset, config, width if hidden is None else hidden)
    art.retrained_disc = head
    return head
