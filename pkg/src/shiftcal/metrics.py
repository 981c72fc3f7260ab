"""Evaluation quantities.

Binned calibration errors work on samples; the Brier decomposition and
the covariate-shift bound are evaluated exactly by enumerating an
:class:`~shiftcal.scenarios.EnumerableDomain`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .errors import BoundViolation, InvalidInputError, ShapeError
from .scenarios import Dataset, EnumerableDomain, oracle_true_calibration

DEFAULT_BINS = 15


@dataclass
class EceReport:
    edges: np.ndarray
    counts: np.ndarray
    mean_conf: np.ndarray  # NaN for empty bins
    accuracy: np.ndarray  # NaN for empty bins
    mass: np.ndarray
    ece: float
    overconfident_ece: float

    @property
    def B(self) -> int:
        return len(self.counts)

    def nonempty(self):
        return np.flatnonzero(self.counts > 0)

    def rows(self):
        """``(bin, mean_conf, accuracy, mass)`` for every nonempty bin."""
        return [
            (int(b), float(self.mean_conf[b]), float(self.accuracy[b]), float(self.mass[b]))
            for b in self.nonempty()
        ]

    def to_dict(self):
        nan_to_none = lambda a: [None if math.isnan(v) else float(v) for v in a]
        return {
            "B": self.B,
            "edges": [float(e) for e in self.edges],
            "counts": [int(c) for c in self.counts],
            "mean_conf": nan_to_none(self.mean_conf),
            "accuracy": nan_to_none(self.accuracy),
            "mass": [float(m) for m in self.mass],
            "ece": self.ece,
            "overconfident_ece": self.overconfident_ece,
        }


def bin_edges(B=DEFAULT_BINS, edges=None) -> np.ndarray:
    if edges is not None:
        e = np.asarray(edges, dtype=np.float64)
        if e.ndim != 1 or len(e) < 2 or e[0] != 0.0 or e[-1] != 1.0 or (np.diff(e) < 0).any():
            raise InvalidInputError("edges must be nondecreasing from 0 to 1")
        return e
    if B < 1:
        raise InvalidInputError("B must be at least 1")
    return np.arange(B + 1) / B


def _check_vectors(confidences, correctness):
    conf = np.ascontiguousarray(confidences, dtype=np.float64)
    corr = np.ascontiguousarray(correctness, dtype=np.float64)
    if conf.ndim != 1 or conf.shape != corr.shape:
        raise ShapeError("confidences and correctness must be equal-length vectors")
    if conf.size == 0:
        raise InvalidInputError("need at least one prediction")
    if (conf < 0).any() or (conf > 1).any() or not np.isfinite(conf).all():
        raise InvalidInputError("confidences must lie in [0, 1]")
    return conf, corr


def ece(confidences, correctness, B=DEFAULT_BINS, edges=None) -> EceReport:
    """Binned expected calibration error and its over-confident half.

    Bin ``b`` holds ``edges[b-1] <= conf < edges[b]``; the last bin also
    takes ``conf == 1``.  Empty bins have zero mass and contribute nothing.
    """
    conf, corr = _check_vectors(confidences, correctness)
    e = bin_edges(B, edges)
    counts, sc, sa = kernels.bin_sums(conf, corr, e)
    n = conf.size
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_conf = np.where(counts > 0, sc / counts, np.nan)
        acc = np.where(counts > 0, sa / counts, np.nan)
    mass = counts / n
    gap = np.where(counts > 0, mean_conf - acc, 0.0)
    total = float(np.sum(mass * np.abs(gap)))
    over = float(np.sum(mass * np.maximum(gap, 0.0)))
    return EceReport(e, counts, mean_conf, acc, mass, total, over)


def overconfident_ece(confidences, correctness, B=DEFAULT_BINS, edges=None) -> float:
    return ece(confidences, correctness, B, edges).overconfident_ece


def confidence_and_correctness(probs, labels, predicted=None):
    """``f(x)_{f(x)}`` and ``y_{f(x)}`` for the predicted label.

    ``predicted`` defaults to the argmax of ``probs`` (lowest index on ties).
    """
    probs = np.asarray(probs, dtype=np.float64)
    pred = probs.argmax(axis=1) if predicted is None else np.asarray(predicted)
    rows = np.arange(len(probs))
    return probs[rows, pred], (np.asarray(labels) == pred).astype(np.float64)


def reliability_bins(probs, data: Dataset, B=DEFAULT_BINS, predicted=None, edges=None):
    """Reliability diagram payload for forecasts ``probs`` on labeled ``data``.

    Returns ``(report, triples)`` with one ``(mean_conf, accuracy, mass)``
    triple per nonempty bin.
    """
    if not data.labeled:
        raise InvalidInputError("reliability bins need labeled evaluation data")
    conf, corr = confidence_and_correctness(probs, data.labels, predicted)
    report = ece(conf, corr, B, edges)
    return report, [(c, a, m) for _, c, a, m in report.rows()]


# -- exact quantities on finite domains --------------------------------------


def _require_domain(domain):
    if not isinstance(domain, EnumerableDomain):
        raise InvalidInputError("exact evaluation needs an enumerable domain")


def _sq_error_per_point(domain, f):
    """``E[||f(x) - y||^2 | x]`` for each point, averaging over the label table."""
    L = domain.label_table
    # ||f - e_y||^2 = ||f||^2 - 2 f_y + 1, averaged over y ~ L
    return (f * f).sum(axis=1) - 2.0 * (f * L).sum(axis=1) + 1.0


def _fourth_moment_per_point(domain, f):
    K = domain.n_classes
    out = np.zeros(domain.size)
    for y in range(K):
        d = ((f - np.eye(K)[y]) ** 2).sum(axis=1)
        out += domain.label_table[:, y] * d * d
    return out


def brier_decomposition(domain: EnumerableDomain, fvals, measure="p"):
    """Exact ``(classification_error, calibration_error, sharpness)``.

    These satisfy ``classification = calibration + 1 - sharpness``.
    """
    _require_domain(domain)
    f = np.asarray(fvals, dtype=np.float64)
    mu = domain.measure(measure)
    c = oracle_true_calibration(domain, f, measure)
    cls_err = float(mu @ _sq_error_per_point(domain, f))
    cal_err = float(mu @ ((f - c) ** 2).sum(axis=1))
    sharp = float(mu @ (c * c).sum(axis=1))
    return cls_err, cal_err, sharp


@dataclass
class BoundReport:
    lhs: float
    term_weighted_cls: float
    term_disc_error: float
    term_bayes_disc: float
    lam: float
    U: float
    chain: dict = field(default_factory=dict)

    @property
    def rhs(self) -> float:
        return self.term_weighted_cls + self.lam * self.term_disc_error + self.term_bayes_disc

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    def to_dict(self):
        d = asdict(self)
        d["rhs"] = self.rhs
        d["slack"] = self.slack
        return d


def _check_bound_inputs(domain, fvals, gvals, U):
    _require_domain(domain)
    f = np.asarray(fvals, dtype=np.float64)
    g = np.asarray(gvals, dtype=np.float64)
    if f.shape != domain.label_table.shape or g.shape != (domain.size,):
        raise ShapeError("need one forecast row and one discriminator value per point")
    lo = 1.0 / (1.0 + U)
    if (g < lo).any() or (g > 1).any():
        raise InvalidInputError(f"discriminator values must lie in [{lo}, 1]")
    if domain.U > U * (1 + 1e-12):
        raise InvalidInputError(f"oracle weights reach {domain.U}, above U = {U}")
    return f, g


def theorem1_bound(domain: EnumerableDomain, fvals, gvals, U, lam=None, check=True) -> BoundReport:
    """Evaluate every term of the covariate-shift bound by enumeration.

    ``lam`` overrides ``(1 + U)^4`` (used only to check that a broken
    constant is caught).  With ``check`` set, a violation beyond 1e-9
    raises :class:`BoundViolation`.
    """
    f, g = _check_bound_inputs(domain, fvals, gvals, U)
    lam = (1.0 + U) ** 4 if lam is None else float(lam)
    p, q = domain.p, domain.q
    c = oracle_true_calibration(domain, f, "q")
    lhs = float(q @ ((f - c) ** 2).sum(axis=1))
    sq = _sq_error_per_point(domain, f)
    weighted = float(p @ (sq * (1.0 / g - 0.5)))
    # E_r[(h - s)^2] with r = (p, s=1)/2 + (q, s=0)/2
    disc_err = float(0.5 * (p @ (g - 1.0) ** 2 + q @ g**2))
    g_star = domain.discriminator()
    bayes = float(0.5 * (p @ (g_star - 1.0) ** 2 + q @ g_star**2))
    report = BoundReport(lhs, weighted, disc_err, -lam * bayes, lam, float(U))
    if check and report.slack < -1e-9:
        raise BoundViolation(
            f"bound violated: lhs {report.lhs} > rhs {report.rhs}",
            {"f": f.tolist(), "g": g.tolist(), "U": U, "lam": lam},
        )
    return report


def bound_chain(domain: EnumerableDomain, fvals, gvals, U, check=True) -> dict:
    """Both sides of every intermediate step of the bound.

    Keys name the quantities; ``links`` lists ``(name, left, right, kind)``
    with kind ``"eq"`` (must agree to 1e-12) or ``"le"`` (left <= right).
    """
    f, g = _check_bound_inputs(domain, fvals, gvals, U)
    p, q = domain.p, domain.q
    lam = (1.0 + U) ** 4
    w = domain.weights()
    w_hat = 1.0 / g - 1.0
    sq = _sq_error_per_point(domain, f)
    sq4 = _fourth_moment_per_point(domain, f)
    c_q = oracle_true_calibration(domain, f, "q")
    g_star = domain.discriminator()
    r = 0.5 * (p + q)

    target_cal = float(q @ ((f - c_q) ** 2).sum(axis=1))
    target_cls = float(q @ sq)
    iw_cls = float(p @ (sq * w))
    iw_hat = float(p @ (sq * w_hat))
    iw_resid = float(p @ (sq * (w - w_hat)))
    e_sq = float(p @ sq)
    e_sq4 = float(p @ sq4)
    w_err = float(p @ (w - w_hat) ** 2)
    cs = math.sqrt(e_sq4 * w_err)
    amgm = 0.5 * (e_sq4 + w_err)
    relaxed = 0.5 * (e_sq + w_err)

    s = p > 0
    g_ratio = np.zeros(domain.size)
    g_ratio[s] = ((g_star[s] - g[s]) / (g_star[s] * g[s])) ** 2
    w_err_via_g = float(p @ g_ratio)
    p_gap = float(p @ (g_star - g) ** 2)
    lam_p = lam * p_gap
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(r > 0, p / r, 0.0)
    lam_r_ratio = lam * float(r @ ((g_star - g) ** 2 * ratio))
    two_lam_r = 2.0 * lam * float(r @ (g_star - g) ** 2)
    disc_hat = float(0.5 * (p @ (g - 1.0) ** 2 + q @ g**2))
    disc_star = float(0.5 * (p @ (g_star - 1.0) ** 2 + q @ g_star**2))
    two_lam_excess = 2.0 * lam * (disc_hat - disc_star)

    links = [
        ("cal<=cls_q", target_cal, target_cls, "le"),
        ("shift:reweight", target_cls, iw_cls, "eq"),
        ("shift:split", iw_cls, iw_hat + iw_resid, "eq"),
        ("resid:cauchy_schwarz", iw_resid, cs, "le"),
        ("resid:am_gm", cs, amgm, "le"),
        ("resid:fourth_moment", amgm, relaxed, "le"),
        ("resid:end_to_end", iw_resid, relaxed, "le"),
        ("weight:g_form", w_err, w_err_via_g, "eq"),
        ("weight:inverse_bound", w_err_via_g, lam_p, "le"),
        ("weight:change_measure", lam_p, lam_r_ratio, "eq"),
        ("weight:p_le_2r", lam_r_ratio, two_lam_r, "le"),
        ("weight:excess_risk", two_lam_r, two_lam_excess, "eq"),
    ]
    out = {
        "target_cal": target_cal, "target_cls": target_cls, "iw_cls": iw_cls,
        "iw_hat": iw_hat, "iw_resid": iw_resid, "e_sq": e_sq, "e_sq4": e_sq4,
        "w_err": w_err, "cauchy_schwarz": cs, "am_gm": amgm, "relaxed": relaxed,
        # ||f - y||^2 <= 2 for probability vectors, so E||f - y||^4 <= 2 E||f - y||^2
        "relaxed_factor2": e_sq + 0.5 * w_err,
        "w_err_via_g": w_err_via_g, "lam_p_gap": lam_p, "lam_r_ratio": lam_r_ratio,
        "two_lam_r_gap": two_lam_r, "two_lam_excess": two_lam_excess, "lam": lam,
        "links": links,
    }
    if check:
        bad = failed_links(links)
        if bad:
            raise BoundViolation(f"chain links out of order: {bad}", out)
    return out


INSTANCE_FAMILIES = ("uniform", "constant-source", "oracle")


def random_bound_instance(domain: EnumerableDomain, U, rng, family="uniform"):
    """Random admissible ``(f_hat, g_hat)`` for the bound.

    ``uniform``: Dirichlet(1) forecasts, ``g_hat`` uniform on ``[1/(1+U), 1]``.
    ``constant-source``: sharp Dirichlet(0.1) forecasts and ``g_hat = 1``
    (a discriminator that calls everything source, so ``w_hat = 0``); here
    the discriminator terms carry the bound, which is what exposes a wrong
    constant in front of them.
    ``oracle``: Dirichlet(1) forecasts with the Bayes discriminator.
    """
    if family == "uniform":
        f = rng.dirichlet(np.ones(domain.n_classes), size=domain.size)
        g = rng.uniform(1.0 / (1.0 + U), 1.0, size=domain.size)
    elif family == "constant-source":
        f = rng.dirichlet(np.full(domain.n_classes, 0.1), size=domain.size)
        g = np.ones(domain.size)
    elif family == "oracle":
        f = rng.dirichlet(np.ones(domain.n_classes), size=domain.size)
        g = domain.discriminator()
    else:
        raise InvalidInputError(f"family must be one of {INSTANCE_FAMILIES}")
    return f, g


def tight_instance(domain: EnumerableDomain):
    """Deterministic-label version of ``domain`` with the exact one-hot
    forecaster and the Bayes discriminator, where both sides of the bound
    vanish.  Returns ``(domain, f, g, U)``."""
    det = domain.with_deterministic_labels()
    return det, det.label_table.copy(), det.discriminator(), det.U


def link_holds(left, right, kind, eq_tol=1e-12, le_tol=1e-12) -> bool:
    scale = max(1.0, abs(left), abs(right))
    if kind == "eq":
        return abs(left - right) <= eq_tol * scale
    return left <= right + le_tol * scale


def failed_links(links, eq_tol=1e-12, le_tol=1e-12):
    return [name for name, a, b, kind in links if not link_holds(a, b, kind, eq_tol, le_tol)]


# -- importance-weight spread -------------------------------------------------


def iw_distribution_report(weights, top_k=15):
    """Rank examples by mean estimated weight across runs.

    ``weights`` has shape ``(runs, n_examples)``.  Returns a list of dicts
    with ``rank, index, mean, median, min, max`` for the ``top_k`` largest
    means (ties broken by lower example index).
    """
    W = np.asarray(weights, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] == 0:
        raise InvalidInputError("need a (runs, examples) weight matrix with at least one run")
    if W.shape[0] < 2:
        raise InvalidInputError("need at least two runs to describe a spread")
    mean = W.mean(axis=0)
    order = np.lexsort((np.arange(W.shape[1]), -mean))[:top_k]
    return [
        {
            "rank": r + 1,
            "index": int(i),
            "mean": float(mean[i]),
            "median": float(np.median(W[:, i])),
            "min": float(W[:, i].min()),
            "max": float(W[:, i].max()),
        }
        for r, i in enumerate(order)
    ]
