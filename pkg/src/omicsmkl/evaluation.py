"""Classification metrics, cross-validated hyperparameter search and the
multi-seed experiment protocol."""

from __future__ import annotations

import itertools
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import rankdata

from .data import MultiViewDataset, make_rng, stratified_kfold, stratified_split
from .methods import BINARY_ONLY, DEEP_METHODS, METHODS, MethodOptions, fit_method

BINARY_METRICS = ("ACC", "AUC", "F1")
MULTICLASS_METRICS = ("ACC", "F1_weighted", "F1_macro")


class MetricError(ValueError):
    pass


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total

    @property
    def f1(self) -> float:
        """Harmonic mean of precision and recall; 0 when undefined."""
        if self.tp + self.fp == 0 or self.tp + self.fn == 0:
            warnings.warn("F1 undefined (no predicted or no true positives); using 0",
                          RuntimeWarning, stacklevel=2)
            return 0.0
        precision = self.tp / (self.tp + self.fp)
        recall = self.tp / (self.tp + self.fn)
        if precision + recall == 0:
            return 0.0
        return 2 * precision * recall / (precision + recall)


def _positive(labels) -> np.ndarray:
    """Positive class is label 1 (for 0/1 and +-1 encodings)."""
    return np.asarray(labels) == 1


def confusion_counts(truth, predictions, positive=1) -> ConfusionCounts:
    t = np.asarray(truth) == positive
    p = np.asarray(predictions) == positive
    if t.shape != p.shape:
        raise MetricError("truth and predictions differ in length")
    return ConfusionCounts(int(np.sum(t & p)), int(np.sum(~t & ~p)),
                           int(np.sum(~t & p)), int(np.sum(t & ~p)))


def auc_score(truth, scores) -> float:
    """Mann-Whitney AUC with midranks for ties."""
    pos = _positive(truth)
    s = np.asarray(scores, dtype=np.float64)
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC undefined: truth contains a single class")
    ranks = rankdata(s)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def binary_metrics(truth, predictions, scores=None) -> dict[str, float]:
    truth = np.asarray(truth)
    predictions = np.asarray(predictions)
    if truth.shape != predictions.shape or truth.size == 0:
        raise MetricError("truth and predictions must be equal-length and non-empty")
    c = confusion_counts(truth, predictions)
    out = {"ACC": c.accuracy, "F1": c.f1}
    if scores is not None:
        out["AUC"] = auc_score(truth, scores)
    return {k: out[k] for k in BINARY_METRICS if k in out}


def per_class_f1(truth, predictions, n_classes: int) -> np.ndarray:
    f1 = np.zeros(n_classes)
    truth = np.asarray(truth)
    for c in range(n_classes):
        if not np.any(truth == c):
            warnings.warn(f"class {c} absent from truth; its F1 counts as 0",
                          RuntimeWarning, stacklevel=2)
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            f1[c] = confusion_counts(truth, predictions, positive=c).f1
    return f1


def multiclass_metrics(truth, predictions, n_classes: int | None = None) -> dict[str, float]:
    """Accuracy, support-weighted F1 and macro F1 over one-vs-all class F1s."""
    truth = np.asarray(truth, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if truth.size == 0:
        raise MetricError("empty input")
    if truth.shape != predictions.shape:
        raise MetricError("truth and predictions differ in length")
    if n_classes is None:
        n_classes = int(max(truth.max(), predictions.max())) + 1
    f1 = per_class_f1(truth, predictions, n_classes)
    support = np.bincount(truth, minlength=n_classes) / truth.size
    return {"ACC": float(np.mean(truth == predictions)),
            "F1_weighted": float(support @ f1),
            "F1_macro": float(f1.mean())}


# --------------------------------------------------------------------------
# search
# --------------------------------------------------------------------------

def _native(v):
    if isinstance(v, np.generic):
        return v.item()
    return v


@dataclass
class SearchSpace:
    """Named parameter grids (lists) or, for random search, ranges.

    A range is a dict ``{"low": a, "high": b, "log": bool, "int": bool}``
    sampled uniformly (log-uniformly when ``log``).
    """

    params: dict
    kind: str = "grid"
    folds: int = 5
    seed: int = 0
    n_draws: int = 20

    def __post_init__(self):
        if not self.params:
            raise ValueError("search space is empty")
        if self.folds < 2:
            raise ValueError("need at least 2 folds")
        if self.kind not in ("grid", "random"):
            raise ValueError(f"unknown search kind {self.kind!r}")
        for name, v in self.params.items():
            if isinstance(v, dict):
                if self.kind == "grid":
                    raise ValueError(f"grid search needs a list for {name!r}")
            elif not list(v):
                raise ValueError(f"parameter {name!r} has no values")

    def points(self) -> list[dict]:
        names = list(self.params)
        if self.kind == "grid":
            return [dict(zip(names, map(_native, combo)))
                    for combo in itertools.product(*(list(self.params[n]) for n in names))]
        rng = make_rng(self.seed)
        out = []
        for _ in range(self.n_draws):
            point = {}
            for n in names:
                v = self.params[n]
                if isinstance(v, dict):
                    lo, hi = float(v["low"]), float(v["high"])
                    if v.get("int"):
                        x = int(rng.integers(int(lo), int(hi) + 1))
                    elif v.get("log"):
                        x = float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
                    else:
                        x = float(rng.uniform(lo, hi))
                else:
                    values = list(v)
                    x = _native(values[int(rng.integers(len(values)))])
                point[n] = x
            out.append(point)
        return out

    def to_dict(self) -> dict:
        return {"params": self.params, "kind": self.kind, "folds": self.folds,
                "seed": self.seed, "n_draws": self.n_draws}


def default_space(method: str) -> SearchSpace:
    if method in DEEP_METHODS:
        return SearchSpace({"kpca_sigma": [0.0005, 0.0007, 0.001],
                            "n_components": {"low": 2, "high": 20, "int": True},
                            "epochs": list(range(100, 201, 10)),
                            "dropout": [0.3, 0.5]}, kind="random")
    return SearchSpace({"C": [1, 5, 10, 15, 20, 25],
                        "sigma": [float(s) for s in np.geomspace(5e-5, 5e-3, 5)]})


@dataclass
class CvResult:
    best_params: dict
    best_score: float
    points: list[dict]


def cross_validate(fit_predict: Callable, labels, space: SearchSpace,
                   fold_seed: int | None = None) -> CvResult:
    """Stratified k-fold search maximising mean fold accuracy.

    ``fit_predict(params, train_idx, val_idx)`` returns predicted class ids
    for ``val_idx``. A point whose fit raises is recorded as failed and
    skipped; ties go to the first-listed point.
    """
    labels = np.asarray(labels)
    folds = stratified_kfold(labels, space.folds, space.seed if fold_seed is None else fold_seed)
    results = []
    best, best_score = None, -np.inf
    for params in space.points():
        scores, error = [], None
        for tr, va in folds:
            try:
                pred = np.asarray(fit_predict(params, tr, va))
            except Exception as exc:  # recorded, search continues
                error = f"{type(exc).__name__}: {exc}"
                break
            scores.append(float(np.mean(pred == labels[va])))
        entry = {"params": params, "fold_scores": scores, "failed": error}
        if error is None:
            entry["mean"] = float(np.mean(scores))
            if entry["mean"] > best_score:
                best, best_score = params, entry["mean"]
        results.append(entry)
    if best is None:
        raise RuntimeError("every parameter point failed during cross-validation")
    return CvResult(dict(best), float(best_score), results)


# --------------------------------------------------------------------------
# experiment
# --------------------------------------------------------------------------

@dataclass
class MetricReport:
    method: str
    metric_names: tuple
    per_seed: list[dict]
    failures: list[dict] = field(default_factory=list)

    def values(self, metric: str) -> np.ndarray:
        return np.array([r["metrics"][metric] for r in self.per_seed])

    @property
    def mean(self) -> dict[str, float]:
        return {m: float(self.values(m).mean()) for m in self.metric_names} if self.per_seed else {}

    @property
    def sd(self) -> dict[str, float]:
        """Population standard deviation (denominator n)."""
        return {m: float(self.values(m).std(ddof=0)) for m in self.metric_names} if self.per_seed else {}

    def to_dict(self) -> dict:
        return {"method": self.method, "metrics": list(self.metric_names),
                "per_seed": self.per_seed, "mean": self.mean, "sd": self.sd,
                "failures": self.failures}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        head = f"{'Method':<24}" + "".join(f"{m:>18}" for m in self.metric_names)
        mean, sd = self.mean, self.sd
        row = f"{self.method:<24}" + "".join(
            f"{f'{mean[m]:.3f} ± {sd[m]:.3f}':>18}" for m in self.metric_names)
        return head + "\n" + row + "\n"


def evaluate_model(model, dataset: MultiViewDataset) -> dict[str, float]:
    values = model.values_for(dataset)
    pred = model.predict(values)
    if dataset.n_classes == 2:
        return binary_metrics(dataset.labels, pred, model.decision_scores(values))
    return multiclass_metrics(dataset.labels, pred, dataset.n_classes)


def split_fit_predict(dataset: MultiViewDataset, method: str, options: MethodOptions):
    def fit_predict(params, tr, va):
        model = fit_method(dataset.take(tr), method, params, options)
        part = dataset.take(va)
        return model.predict(model.values_for(part))
    return fit_predict


def run_seed(dataset: MultiViewDataset, method: str, space: SearchSpace, seed: int,
             train_fraction: float, options: MethodOptions) -> dict:
    split = stratified_split(dataset.labels, seed, train_fraction)
    train_ds = dataset.take(split.train_indices)
    test_ds = dataset.take(split.test_indices)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        cv = cross_validate(split_fit_predict(train_ds, method, options), train_ds.labels,
                            space, fold_seed=seed)
        model = fit_method(train_ds, method, cv.best_params, options)
        metrics = evaluate_model(model, test_ds)
    out = {"seed": int(seed), "metrics": metrics, "best_params": cv.best_params,
           "cv_score": cv.best_score}
    if model.fusion is not None:
        out["weights"] = model.fusion.weights.tolist()
    return out


def run_experiment(dataset: MultiViewDataset, method: str, space: SearchSpace | None = None,
                   seeds=(0, 1, 2, 3, 4), train_fraction: float = 0.7,
                   options: MethodOptions | None = None, threads: int = 1) -> MetricReport:
    """Split, tune, refit and score once per seed; aggregate mean and sd."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if method in BINARY_ONLY and dataset.n_classes != 2:
        raise ValueError(f"{method} is binary-only; use svm_naive or statis_umkl_svm")
    space = space or default_space(method)
    options = options or MethodOptions()
    names = BINARY_METRICS if dataset.n_classes == 2 else MULTICLASS_METRICS

    def one(seed):
        try:
            return run_seed(dataset, method, space, seed, train_fraction, options), None
        except Exception as exc:
            return None, {"seed": int(seed), "error": f"{type(exc).__name__}: {exc}"}

    seeds = list(seeds)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(s) for s in seeds]
    per_seed = [r for r, _ in results if r is not None]
    failures = [f for _, f in results if f is not None]
    for f in failures:
        warnings.warn(f"seed {f['seed']} failed and is excluded: {f['error']}",
                      RuntimeWarning, stacklevel=2)
    return MetricReport(method, names, per_seed, failures)
