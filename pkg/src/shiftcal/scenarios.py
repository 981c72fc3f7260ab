"""Covariate-shift worlds, exact oracles on finite domains, and CSV datasets.

A :class:`Scenario` pairs a source sampler ``p(x)`` and a target sampler
``q(x)`` with one labeling rule ``p(y|x)`` shared by both.  Finite worlds
carry an :class:`EnumerableDomain`, on which the importance weight
``w = q/p``, the Bayes source-discriminator ``g = p/(p+q)`` and the
conditional accuracy ``c`` are computed exactly.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import InvalidInputError, ParseError, ShapeError, SupportError
from .fileio import atomic_write_text
from .numerics import softmax

WHICH = ("source", "target", "target-labeled")


@dataclass
class Dataset:
    features: np.ndarray
    labels: Optional[np.ndarray] = None
    n_classes: Optional[int] = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ShapeError("features must be a 2-D matrix")
        if not np.isfinite(self.features).all():
            raise InvalidInputError("features contain non-finite values")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.features.shape[0],):
                raise ShapeError("need exactly one label per row")
            if self.n_classes is None:
                self.n_classes = int(self.labels.max()) + 1 if self.labels.size else 0
            if self.labels.size and (
                self.labels.min() < 0 or self.labels.max() >= self.n_classes
            ):
                raise InvalidInputError(f"labels must lie in 0..{self.n_classes - 1}")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def labeled(self) -> bool:
        return self.labels is not None

    def one_hot(self) -> np.ndarray:
        if self.labels is None:
            raise InvalidInputError("dataset is unlabeled")
        return np.eye(self.n_classes)[self.labels]

    def subset(self, idx) -> "Dataset":
        return Dataset(
            self.features[idx],
            None if self.labels is None else self.labels[idx],
            self.n_classes,
        )

    def unlabeled(self) -> "Dataset":
        return Dataset(self.features, None, self.n_classes)


@dataclass
class EnumerableDomain:
    points: np.ndarray  # (m, d)
    p: np.ndarray  # (m,)
    q: np.ndarray  # (m,)
    label_table: np.ndarray  # (m, K)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.p = np.asarray(self.p, dtype=np.float64)
        self.q = np.asarray(self.q, dtype=np.float64)
        self.label_table = np.asarray(self.label_table, dtype=np.float64)
        m = self.points.shape[0]
        if self.p.shape != (m,) or self.q.shape != (m,) or self.label_table.shape[0] != m:
            raise ShapeError("point, p, q and label tables must have one row per point")
        for name, t in (("p", self.p), ("q", self.q)):
            if (t < 0).any() or abs(t.sum() - 1.0) > 1e-12:
                raise InvalidInputError(f"{name} must be a probability vector")
        if ((self.q > 0) & (self.p == 0)).any():
            raise SupportError("support of q must lie inside the support of p")
        rows = self.label_table.sum(axis=1)
        if (self.label_table < 0).any() or np.abs(rows - 1.0).max() > 1e-12:
            raise InvalidInputError("label table rows must be probability vectors")

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def n_classes(self) -> int:
        return self.label_table.shape[1]

    @property
    def support(self) -> np.ndarray:
        return self.p > 0

    def weights(self) -> np.ndarray:
        """``q/p`` on the source support and 0 elsewhere."""
        w = np.zeros(self.size)
        s = self.support
        w[s] = self.q[s] / self.p[s]
        return w

    def discriminator(self) -> np.ndarray:
        """``p/(p+q)`` on the mixture support and 1 elsewhere."""
        tot = self.p + self.q
        g = np.ones(self.size)
        s = tot > 0
        g[s] = self.p[s] / tot[s]
        return g

    @property
    def U(self) -> float:
        return float(self.weights()[self.support].max())

    def measure(self, which) -> np.ndarray:
        if which == "p":
            return self.p
        if which == "q":
            return self.q
        raise InvalidInputError(f"measure must be 'p' or 'q', not {which!r}")

    def with_deterministic_labels(self) -> "EnumerableDomain":
        """Same domain with each label row replaced by its argmax one-hot."""
        lab = np.eye(self.n_classes)[self.label_table.argmax(axis=1)]
        return EnumerableDomain(self.points, self.p, self.q, lab)


def oracle_weight(domain: EnumerableDomain, i: int) -> float:
    if domain.p[i] <= 0:
        raise SupportError(f"point {i} lies outside the source support")
    return float(domain.q[i] / domain.p[i])


def oracle_discriminator(domain: EnumerableDomain, i: int) -> float:
    tot = domain.p[i] + domain.q[i]
    if tot <= 0:
        raise SupportError(f"point {i} lies outside the mixture support")
    return float(domain.p[i] / tot)


def oracle_true_calibration(domain: EnumerableDomain, fvals, measure="q") -> np.ndarray:
    """Exact ``c(x)_k = E[y_k | f(x)_k]`` under ``measure``.

    Points are grouped per coordinate by exactly equal forecast values and
    the group sums are correctly rounded (``math.fsum``), so the result does
    not depend on summation order.  A singleton group returns the point's
    own label probability (no rounding from dividing by its mass); a group
    with zero total mass has no conditional expectation and also keeps its
    own label probabilities (it carries no weight anywhere).
    """
    f = np.asarray(fvals, dtype=np.float64)
    if f.shape != domain.label_table.shape:
        raise ShapeError(f"forecasts must have shape {domain.label_table.shape}")
    mu = domain.measure(measure)
    c = np.array(domain.label_table, dtype=np.float64)
    for k in range(f.shape[1]):
        _, group = np.unique(f[:, k], return_inverse=True)
        group = group.ravel()
        order = np.argsort(group, kind="stable")
        bounds = np.flatnonzero(np.diff(group[order])) + 1
        weighted = mu * domain.label_table[:, k]
        for members in np.split(order, bounds):
            if len(members) == 1:
                continue  # singleton groups are exact: keep the point's own row
            mass = math.fsum(mu[members])
            if mass > 0:
                c[members, k] = math.fsum(weighted[members]) / mass
    return c


@dataclass
class Scenario:
    name: str
    dim: int
    n_classes: int
    kind: str  # "continuous" or "enumerable"
    draw_source: Callable  # (rng, n) -> (X, label_probs)
    draw_target: Callable
    label_probs: Optional[Callable] = None  # X -> (n, K)
    domain: Optional[EnumerableDomain] = None
    weight_fn: Optional[Callable] = None  # exact w(x) when known
    U: Optional[float] = None
    description: str = ""


def _draw_labels(rng, probs):
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    return np.minimum((u[:, None] >= cdf).sum(axis=1), probs.shape[1] - 1)


def sample(scenario: Scenario, n: int, seed, which="source") -> Dataset:
    """Draw ``n`` i.i.d. rows.  ``which`` is one of ``source``,
    ``target`` (unlabeled) or ``target-labeled`` (for evaluation only)."""
    if n < 1:
        raise InvalidInputError("n must be at least 1")
    if which not in WHICH:
        raise InvalidInputError(f"which must be one of {WHICH}")
    rng = np.random.default_rng(seed)
    draw = scenario.draw_source if which == "source" else scenario.draw_target
    X, probs = draw(rng, n)
    labels = _draw_labels(rng, probs)
    if which == "target":
        return Dataset(X, None, scenario.n_classes)
    return Dataset(X, labels, scenario.n_classes)


def sample_indices(domain: EnumerableDomain, n, seed, measure="p") -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.choice(domain.size, size=n, p=domain.measure(measure))


# -- built-in worlds --------------------------------------------------------


def linear_label_rule(dim, n_classes, seed, scale=1.0):
    """Softmax of a fixed random linear map of ``x``."""
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n_classes, dim)) * scale
    b = rng.normal(size=n_classes) * scale * 0.5

    def rule(X):
        return softmax(np.asarray(X) @ A.T + b)

    return rule


BOX_LO = 0.3
BOX_FLOOR = 0.05
SHARP_INSIDE = 1.0
SHARP_OUTSIDE = 8.0


def box_label_rule(X):
    """Three classes split by angle around the box centre.

    Labels are crisp (sharpness 8) outside ``[0.3, 1]^2`` and fuzzy
    (sharpness 1) inside it, so a classifier calibrated on the source
    mixture is over-confident where the target concentrates.
    """
    X = np.asarray(X, dtype=np.float64)
    angles = np.array([0.0, 2 * math.pi / 3, 4 * math.pi / 3]) + 0.3
    A = 4.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    sharp = np.where((X >= BOX_LO).all(axis=1), SHARP_INSIDE, SHARP_OUTSIDE)
    return softmax(sharp[:, None] * ((X - 0.5) @ A.T))


def box_shift_weight(X):
    """Exact ``q(x)/p(x)`` of the box-shift world (p uniform on the unit square)."""
    X = np.asarray(X, dtype=np.float64)
    inside = (X >= BOX_LO).all(axis=-1)
    high = (1 - BOX_FLOOR) / (1 - BOX_LO) ** 2 + BOX_FLOOR
    return np.where(inside, high, BOX_FLOOR)


def _uniform_box(rng, n, lo=0.0):
    return lo + (1.0 - lo) * rng.random((n, 2))


def _box_target(rng, n):
    X = _uniform_box(rng, n, BOX_LO)
    floor = rng.random(n) < BOX_FLOOR
    X[floor] = _uniform_box(rng, int(floor.sum()))
    return X


def box_shift(label_rule=box_label_rule) -> Scenario:
    def src(rng, n):
        X = _uniform_box(rng, n)
        return X, label_rule(X)

    def tgt(rng, n):
        X = _box_target(rng, n)
        return X, label_rule(X)

    return Scenario(
        "box-shift", 2, 3, "continuous", src, tgt, label_rule,
        weight_fn=box_shift_weight, U=float(box_shift_weight(np.ones(2))),
        description="p uniform on [0,1]^2, q mostly on [0.3,1]^2 with a 5% floor",
    )


def no_shift(label_rule=box_label_rule) -> Scenario:
    def draw(rng, n):
        X = _uniform_box(rng, n)
        return X, label_rule(X)

    return Scenario(
        "no-shift", 2, 3, "continuous", draw, draw, label_rule,
        weight_fn=lambda X: np.ones(np.asarray(X).shape[0]), U=1.0,
        description="p = q uniform on [0,1]^2 with the box-shift labels",
    )


def gauss_shift(shift=(1.5, 0.5), seed=7) -> Scenario:
    rule = linear_label_rule(2, 3, seed, scale=2.0)
    mu = np.asarray(shift, dtype=np.float64)

    def src(rng, n):
        X = rng.normal(size=(n, 2))
        return X, rule(X)

    def tgt(rng, n):
        X = rng.normal(size=(n, 2)) + mu
        return X, rule(X)

    def weight(X):
        X = np.asarray(X, dtype=np.float64)
        return np.exp(X @ mu - 0.5 * mu @ mu)

    return Scenario(
        "gauss-shift", 2, 3, "continuous", src, tgt, rule, weight_fn=weight,
        description="N(0, I) to N(mu, I); unbounded importance weights",
    )


def grid_domain(side=8, n_classes=3, seed=3, concentration=2.0) -> EnumerableDomain:
    """``side x side`` grid on the unit square with random p, q and labels."""
    rng = np.random.default_rng(seed)
    g = (np.arange(side) + 0.5) / side
    pts = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    m = pts.shape[0]
    p = rng.dirichlet(np.full(m, concentration))
    q = rng.dirichlet(np.full(m, concentration))
    A = rng.normal(size=(n_classes, 2)) * 3.0
    b = rng.normal(size=n_classes)
    labels = softmax(pts @ A.T + b)
    return EnumerableDomain(pts, p, q, labels)


def enumerable_scenario(domain: EnumerableDomain, name="enumerable") -> Scenario:
    def drawer(measure):
        def draw(rng, n):
            idx = rng.choice(domain.size, size=n, p=domain.measure(measure))
            return domain.points[idx], domain.label_table[idx]

        return draw

    lookup = {tuple(pt): i for i, pt in enumerate(domain.points)}
    w = domain.weights()

    def index_of(X):
        return np.array([lookup[tuple(x)] for x in np.asarray(X)])

    return Scenario(
        name, domain.points.shape[1], domain.n_classes, "enumerable",
        drawer("p"), drawer("q"),
        label_probs=lambda X: domain.label_table[index_of(X)],
        domain=domain,
        weight_fn=lambda X: w[index_of(X)],
        U=domain.U,
    )


def box_shift_grid(cells_per_side=10) -> EnumerableDomain:
    """Discretize box-shift into equal cells, with exact cell masses."""
    r = cells_per_side
    edges = np.linspace(0.0, 1.0, r + 1)
    mids = (edges[:-1] + edges[1:]) / 2
    pts = np.stack(np.meshgrid(mids, mids, indexing="ij"), axis=-1).reshape(-1, 2)
    lo, hi = edges[:-1], edges[1:]
    overlap = np.clip(hi - np.maximum(lo, BOX_LO), 0.0, None)  # per-axis length inside
    ox = np.repeat(overlap, r)
    oy = np.tile(overlap, r)
    cell = 1.0 / (r * r)
    q = BOX_FLOOR * cell + (1 - BOX_FLOOR) * ox * oy / (1 - BOX_LO) ** 2
    p = np.full(r * r, cell)
    q = q / q.sum()
    return EnumerableDomain(pts, p, q, box_label_rule(pts))


BUILTIN = {
    "box-shift": box_shift,
    "no-shift": no_shift,
    "gauss-shift": gauss_shift,
    "grid-K3": lambda: enumerable_scenario(grid_domain(), "grid-K3"),
    "box-shift-grid": lambda: enumerable_scenario(box_shift_grid(), "box-shift-grid"),
}


def get_scenario(name: str) -> Scenario:
    try:
        return BUILTIN[name]()
    except KeyError:
        raise InvalidInputError(
            f"unknown scenario {name!r}; choose from {sorted(BUILTIN)}"
        ) from None


# -- CSV --------------------------------------------------------------------


def save_csv(dataset: Dataset, path) -> None:
    """Write ``f0,...,f{d-1},label`` rows; floats keep 17 significant digits."""
    d = dataset.dim
    buf = io.StringIO()
    buf.write(",".join([f"f{j}" for j in range(d)] + ["label"]) + "\n")
    for i, row in enumerate(dataset.features):
        cells = [format(float(v), ".17g") for v in row]
        cells.append("" if dataset.labels is None else str(int(dataset.labels[i])))
        buf.write(",".join(cells) + "\n")
    atomic_write_text(path, buf.getvalue())


def load_csv(path, n_classes=None) -> Dataset:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("file is empty", 1)
    header = rows[0]
    d = len(header) - 1
    if d < 1 or header != [f"f{j}" for j in range(d)] + ["label"]:
        raise ParseError("header must read f0,f1,...,f{d-1},label", 1)
    feats = np.empty((len(rows) - 1, d))
    labels = []
    for i, row in enumerate(rows[1:]):
        line = i + 2
        if len(row) != d + 1:
            raise ParseError(f"expected {d + 1} cells, found {len(row)}", line)
        try:
            feats[i] = [float(c) for c in row[:d]]
        except ValueError:
            raise ParseError("non-numeric feature cell", line) from None
        if not np.isfinite(feats[i]).all():
            raise ParseError("non-finite feature cell", line)
        cell = row[d].strip()
        if cell == "":
            labels.append(None)
            continue
        try:
            lab = int(cell)
        except ValueError:
            raise ParseError(f"label {cell!r} is not an integer", line) from None
        if lab < 0 or (n_classes is not None and lab >= n_classes):
            raise ParseError(f"label {lab} out of range", line)
        labels.append(lab)
    present = [l is not None for l in labels]
    if any(present) and not all(present):
        raise ParseError("some rows are labeled and others are not", present.index(False) + 2)
    if labels and all(present):
        return Dataset(feats, np.array(labels, dtype=np.int64), n_classes)
    return Dataset(feats, None, n_classes)
