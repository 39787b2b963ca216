"""Multi-view tabular data: loading, alignment, splits, feature pre-selection
and synthetic benchmarks.

All randomness goes through :func:`make_rng`, a Philox (counter-based)
generator seeded directly with the caller's seed, so splits and synthetic
data are reproducible across platforms and never touch global RNG state.
"""

from __future__ import annotations

import csv
import math
import os
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox-4x64 generator keyed by ``seed``.

    ``stream > 0`` jumps the counter ahead ``stream`` times (2**128 draws
    each), giving independent sequences for different uses of one seed.
    """
    bitgen = np.random.Philox(int(seed))
    if stream:
        bitgen = bitgen.jumped(int(stream))
    return np.random.Generator(bitgen)


@dataclass(frozen=True, eq=False)
class OmicsView:
    name: str
    samples: tuple[str, ...]
    features: tuple[str, ...]
    values: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DataError(f"view {self.name!r}: values must be 2-d")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "features", tuple(self.features))
        if values.shape != (len(self.samples), len(self.features)):
            raise DataError(
                f"view {self.name!r}: values shape {values.shape} does not match "
                f"{len(self.samples)} samples x {len(self.features)} features")
        if len(set(self.samples)) != len(self.samples):
            raise DataError(f"view {self.name!r}: duplicate sample id")
        if not np.all(np.isfinite(values)):
            raise DataError(f"view {self.name!r}: non-finite value")
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (len(self.samples),):
                raise DataError(f"view {self.name!r}: labels length mismatch")
            object.__setattr__(self, "labels", labels)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def take(self, indices) -> "OmicsView":
        idx = np.asarray(indices, dtype=np.int64)
        labels = None if self.labels is None else self.labels[idx]
        return OmicsView(self.name, [self.samples[i] for i in idx], self.features,
                         self.values[idx], labels)

    def select_features(self, columns) -> "OmicsView":
        cols = np.asarray(columns, dtype=np.int64)
        return OmicsView(self.name, self.samples, [self.features[j] for j in cols],
                         self.values[:, cols], self.labels)

    def equals(self, other: "OmicsView") -> bool:
        same_labels = (self.labels is None and other.labels is None) or (
            self.labels is not None and other.labels is not None
            and np.array_equal(self.labels, other.labels))
        return (self.name == other.name and self.samples == other.samples
                and self.features == other.features
                and np.array_equal(self.values, other.values) and same_labels)


@dataclass(frozen=True, eq=False)
class MultiViewDataset:
    views: tuple[OmicsView, ...]
    labels: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self):
        views = tuple(self.views)
        if not views:
            raise DataError("dataset needs at least one view")
        object.__setattr__(self, "views", views)
        object.__setattr__(self, "class_names", tuple(self.class_names))
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "labels", labels)
        samples = views[0].samples
        for v in views[1:]:
            if v.samples != samples:
                raise DataError(f"view {v.name!r} has a different sample ordering")
        if labels.shape != (len(samples),):
            raise DataError("labels length does not match sample count")
        n_classes = len(self.class_names)
        if n_classes < 2:
            raise DataError("dataset needs at least two classes")
        if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
            raise DataError("label outside [0, n_classes)")

    @property
    def samples(self) -> tuple[str, ...]:
        return self.views[0].samples

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def view_names(self) -> list[str]:
        return [v.name for v in self.views]

    def take(self, indices) -> "MultiViewDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return MultiViewDataset([v.take(idx) for v in self.views], self.labels[idx],
                                self.class_names)

    def equals(self, other: "MultiViewDataset") -> bool:
        return (len(self.views) == len(other.views)
                and all(a.equals(b) for a, b in zip(self.views, other.views))
                and np.array_equal(self.labels, other.labels)
                and self.class_names == other.class_names)


@dataclass(frozen=True)
class SplitPlan:
    seed: int
    train_indices: np.ndarray = field(repr=False)
    test_indices: np.ndarray = field(repr=False)
    train_fraction: float


# --------------------------------------------------------------------------
# CSV ingestion
# --------------------------------------------------------------------------

_NUMBER = re.compile(r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?|[+-]?(nan|inf|infinity)", re.I)


def _parse_number(token: str, where: str) -> float:
    token = token.strip()
    if not _NUMBER.fullmatch(token):
        raise DataError(f"{where}: non-numeric cell {token!r}")
    value = float(token)
    if not math.isfinite(value):
        raise DataError(f"{where}: non-finite cell {token!r}")
    return value


def read_feature_csv(path, name: str | None = None) -> OmicsView:
    """Read one feature CSV (``sample_id`` header column, then features)."""
    if name is None:
        name = os.path.splitext(os.path.basename(str(path)))[0]
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = rows[0]
    if not header or header[0].strip() != "sample_id" or len(header) < 2:
        raise DataError(f"{path}: header must start with 'sample_id' and name features")
    features = [h.strip() for h in header[1:]]
    samples, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
        samples.append(row[0].strip())
        values.append([_parse_number(t, f"{path}:{lineno}") for t in row[1:]])
    if len(set(samples)) != len(samples):
        raise DataError(f"{path}: duplicate sample id")
    arr = np.array(values, dtype=np.float64).reshape(len(samples), len(features))
    return OmicsView(name, samples, features, arr)


def read_label_csv(path) -> dict[str, str]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != ["sample_id", "label"]:
        raise DataError(f"{path}: header must be 'sample_id,label'")
    out: dict[str, str] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise DataError(f"{path}:{lineno}: expected 2 cells, got {len(row)}")
        sid = row[0].strip()
        if sid in out:
            raise DataError(f"{path}:{lineno}: duplicate sample id {sid!r}")
        out[sid] = row[1].strip()
    return out


def align_views(views: Sequence[OmicsView], label_map: dict[str, str],
                class_names: Sequence[str] | None = None) -> MultiViewDataset:
    """Intersect sample ids across views, sort them, attach labels.

    Class ids follow first appearance over the aligned sample order unless
    ``class_names`` fixes the mapping.
    """
    common = set(views[0].samples)
    for v in views[1:]:
        common &= set(v.samples)
    if not common:
        raise DataError("empty intersection of sample ids across views")
    order = sorted(common)
    missing = [s for s in order if s not in label_map]
    if missing:
        raise DataError(f"unlabeled sample {missing[0]!r}")
    aligned = []
    for v in views:
        pos = {s: i for i, s in enumerate(v.samples)}
        aligned.append(v.take([pos[s] for s in order]))
    if class_names is None:
        names: list[str] = []
        for s in order:
            if label_map[s] not in names:
                names.append(label_map[s])
    else:
        names = list(class_names)
    lookup = {c: i for i, c in enumerate(names)}
    try:
        labels = np.array([lookup[label_map[s]] for s in order], dtype=np.int64)
    except KeyError as exc:
        raise DataError(f"label {exc.args[0]!r} not among known classes") from None
    return MultiViewDataset(aligned, labels, names)


def load_views(paths: Sequence, label_path, names: Sequence[str] | None = None,
               class_names: Sequence[str] | None = None) -> MultiViewDataset:
    if not paths:
        raise DataError("no view files given")
    if names is None:
        names = [None] * len(paths)
    views = [read_feature_csv(p, n) for p, n in zip(paths, names)]
    return align_views(views, read_label_csv(label_path), class_names)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_view_csv(view: OmicsView, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", *view.features])
        for sid, row in zip(view.samples, view.values):
            w.writerow([sid, *map(_fmt, row)])


def write_label_csv(samples: Sequence[str], labels, class_names: Sequence[str], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "label"])
        for sid, lab in zip(samples, labels):
            w.writerow([sid, class_names[int(lab)]])


def save_dataset(dataset: MultiViewDataset, directory) -> tuple[list[str], str]:
    """Write one CSV per view plus ``labels.csv``; return the paths."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for v in dataset.views:
        p = os.path.join(directory, f"{v.name}.csv")
        write_view_csv(v, p)
        paths.append(p)
    label_path = os.path.join(directory, "labels.csv")
    write_label_csv(dataset.samples, dataset.labels, dataset.class_names, label_path)
    return paths, label_path


# --------------------------------------------------------------------------
# splits
# --------------------------------------------------------------------------

def _class_members(labels: np.ndarray) -> list[np.ndarray]:
    return [np.flatnonzero(labels == c) for c in np.unique(labels)]


def stratified_split(labels, seed: int, train_fraction: float = 0.7) -> SplitPlan:
    """Stratified train/test partition.

    Each class contributes ``floor(train_fraction * size + 0.5)`` members to
    the training side, drawn by a Philox permutation keyed by ``seed``.
    """
    labels = np.asarray(labels)
    if not 0.0 < train_fraction < 1.0:
        raise DataError("train_fraction must lie strictly between 0 and 1")
    rng = make_rng(seed)
    train, test = [], []
    for members in _class_members(labels):
        if members.size < 2:
            raise DataError("every class needs at least 2 members to split")
        k = int(math.floor(train_fraction * members.size + 0.5))
        perm = rng.permutation(members)
        train.append(perm[:k])
        test.append(perm[k:])
    train_idx = np.sort(np.concatenate(train))
    test_idx = np.sort(np.concatenate(test))
    if train_idx.size == 0 or test_idx.size == 0:
        raise DataError(f"train_fraction {train_fraction} leaves an empty side")
    return SplitPlan(int(seed), train_idx, test_idx, float(train_fraction))


def stratified_kfold(labels, n_folds: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Stratified k-fold assignment with the same generator as the splits.

    Each class is permuted and dealt round-robin over the folds.
    """
    labels = np.asarray(labels)
    if n_folds < 2:
        raise DataError("need at least 2 folds")
    members = _class_members(labels)
    if min(m.size for m in members) < n_folds:
        raise DataError(f"{n_folds} folds exceed the smallest class size")
    rng = make_rng(seed)
    fold_of = np.empty(labels.size, dtype=np.int64)
    offset = 0
    for m in members:
        perm = rng.permutation(m)
        fold_of[perm] = (np.arange(perm.size) + offset) % n_folds
        offset += perm.size
    return [(np.flatnonzero(fold_of != f), np.flatnonzero(fold_of == f))
            for f in range(n_folds)]


# --------------------------------------------------------------------------
# ANOVA F pre-selection
# --------------------------------------------------------------------------

def anova_f_scores(values, labels) -> np.ndarray:
    """One-way ANOVA F statistic per column.

    Columns with zero within-class and nonzero between-class spread get
    ``inf``; columns with no between-class spread get 0.
    """
    x = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    n, k = x.shape[0], classes.size
    if k < 2:
        raise DataError("ANOVA needs at least two classes")
    grand = x.mean(axis=0)
    ss_between = np.zeros(x.shape[1])
    ss_within = np.zeros(x.shape[1])
    for c in classes:
        xc = x[labels == c]
        mc = xc.mean(axis=0)
        ss_between += xc.shape[0] * (mc - grand) ** 2
        ss_within += ((xc - mc) ** 2).sum(axis=0)
    ms_between = ss_between / (k - 1)
    # exact-zero spread is judged on a scale relative to the column magnitude
    scale = np.maximum(np.abs(x).max(axis=0), np.finfo(float).tiny) ** 2 * n
    eps = 64 * np.finfo(float).eps * scale
    between_zero = ss_between <= eps
    within_zero = ss_within <= eps
    f = np.zeros(x.shape[1])
    ok = ~between_zero & ~within_zero
    if n > k:
        f[ok] = ms_between[ok] / (ss_within[ok] / (n - k))
    else:
        within_zero = np.ones_like(within_zero)
    f[~between_zero & within_zero] = np.inf
    return f


def anova_f_select(view: OmicsView, labels, k: int) -> OmicsView:
    if k <= 0:
        raise DataError("k must be positive")
    if k > view.values.shape[1]:
        raise DataError("k exceeds the number of features")
    x = view.values
    if np.all(x.max(axis=0) == x.min(axis=0)):
        raise DataError("all features are constant")
    f = anova_f_scores(x, labels)
    order = np.argsort(-f, kind="stable")
    return view.select_features(order[:k])


# --------------------------------------------------------------------------
# synthetic benchmarks
# --------------------------------------------------------------------------

def _sample_ids(n: int) -> list[str]:
    width = max(4, len(str(n - 1)))
    return [f"s{i:0{width}d}" for i in range(n)]


def _class_directions(rng: np.random.Generator, classes: int, dim: int) -> np.ndarray:
    g = rng.standard_normal((dim, max(classes, 1)))
    if dim >= classes:
        q, _ = np.linalg.qr(g)
        return q[:, :classes].T
    return (g / np.linalg.norm(g, axis=0)).T[:classes]


def synthetic_multiview(seed: int, n: int, classes: int, dims: Sequence[int],
                        informative_view_strength: Sequence[float]) -> MultiViewDataset:
    """Gaussian class blobs, one independent draw per view.

    In view ``m`` the class means sit at ``sqrt(2) * strength[m]`` along
    orthonormal random directions (when the view has enough dimensions), so
    any two class means are ``2 * strength[m]`` apart; noise is unit
    isotropic. Labels cycle ``0, 1, ..., classes-1`` over the sample order.
    """
    dims = list(dims)
    strengths = list(informative_view_strength)
    if n <= 0 or classes <= 0 or any(d <= 0 for d in dims):
        raise DataError("n, classes and dims must be positive")
    if len(dims) != len(strengths) or not dims:
        raise DataError("dims and informative_view_strength must have equal nonzero length")
    if n < 4 * classes:
        raise DataError("need n >= 4 * classes")
    rng = make_rng(seed)
    labels = np.arange(n) % classes
    ids = _sample_ids(n)
    views = []
    for m, (d, s) in enumerate(zip(dims, strengths)):
        means = math.sqrt(2.0) * float(s) * _class_directions(rng, classes, d)
        noise = rng.standard_normal((n, d))
        views.append(OmicsView(f"view{m + 1}", ids, [f"v{m + 1}_f{j + 1}" for j in range(d)],
                               noise + means[labels]))
    return MultiViewDataset(views, labels, [f"class{c}" for c in range(classes)])


def complementary_views(seed: int, n: int = 300, dim: int = 20,
                        noise: float = 0.2) -> MultiViewDataset:
    """Three views that are weak alone but jointly near-separable (binary).

    Latent signals ``u_1, u_2, u_3 ~ N(0, 1)`` set the label
    ``sign(u_1 + u_2 + u_3)``. View ``m`` observes ``u_m`` along one random
    unit direction plus isotropic noise of scale ``noise``, so any single
    view predicts the label with accuracy near ``1/2 + arcsin(1/sqrt 3)/pi``
    (about 0.70) while the three together determine it.
    """
    if n < 8 or dim < 1:
        raise DataError("need n >= 8 and dim >= 1")
    rng = make_rng(seed)
    u = rng.standard_normal((n, 3))
    total = u.sum(axis=1)
    if total[0] > 0:
        # first sample carries class 0 so class ids survive a CSV round trip
        u, total = -u, -total
    labels = (total > 0).astype(np.int64)
    ids = _sample_ids(n)
    views = []
    for m in range(3):
        direction = rng.standard_normal(dim)
        direction /= np.linalg.norm(direction)
        x = u[:, m:m + 1] * direction[None, :] + noise * rng.standard_normal((n, dim))
        views.append(OmicsView(f"view{m + 1}", ids, [f"v{m + 1}_f{j + 1}" for j in range(dim)], x))
    return MultiViewDataset(views, labels, ["class0", "class1"])


def planted_biomarker(seed: int, n: int = 120, n_views: int = 2, dim: int = 10,
                      planted: int = 0, shift: float = 3.0) -> MultiViewDataset:
    """Binary dataset whose label lives in one original feature of view 1.

    Feature ``planted`` of the first view is ``+-shift`` by class plus unit
    noise; every other feature in every view is unit noise.
    """
    if not 0 <= planted < dim:
        raise DataError("planted feature index out of range")
    rng = make_rng(seed)
    labels = np.arange(n) % 2
    ids = _sample_ids(n)
    views = []
    for m in range(n_views):
        x = rng.standard_normal((n, dim))
        if m == 0:
            x[:, planted] += shift * (2 * labels - 1)
        views.append(OmicsView(f"view{m + 1}", ids, [f"v{m + 1}_f{j + 1}" for j in range(dim)], x))
    return MultiViewDataset(views, labels, ["class0", "class1"])
