"""End-to-end classifiers built from the kernel, fusion, SVM, KPCA and deep
modules, plus their JSON model-file representation.

Binary SVM scores are decision values for class index 1; multiclass SVMs
are one-vs-rest. Deep models score with softmax probabilities.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .data import DataError, MultiViewDataset, anova_f_scores
from .deep import DeepMklConfig, DeepMklModel, build, predict_proba, train
from .fusion import FusedKernel, MklConfig, fuse
from .kernels import KernelSpec, Standardizer, compute_cross_gram, compute_gram
from .kpca import KpcaFit, kpca_fit, kpca_project
from .svm import MulticlassSvm, SvmModel, decision_values, fit_binary, fit_multiclass

FORMAT_VERSION = 1

SVM_METHODS = {
    "svm_concat": None,
    "svm_naive": "naive",
    "statis_umkl_svm": "statis",
    "simplemkl_svm": "simplemkl",
    "semkl_svm": "semkl",
}
DEEP_METHODS = ("deep_mkl", "cross_modal_deep_mkl")
METHODS = tuple(SVM_METHODS) + DEEP_METHODS
BINARY_ONLY = ("simplemkl_svm", "semkl_svm")


class ModelFileError(ValueError):
    pass


@dataclass
class MethodOptions:
    """Settings that are not tuned by cross-validation."""

    kernel: dict = field(default_factory=lambda: {"kind": "rbf"})
    normalize: bool = True
    standardize: bool = False
    anova_k: int | list | None = None
    svm_tol: float = 1e-3
    mkl: dict = field(default_factory=dict)
    deep: dict = field(default_factory=dict)

    def kernel_spec(self, sigma=None) -> KernelSpec:
        spec = dict(self.kernel)
        if spec.get("kind", "rbf") == "rbf":
            if sigma is not None:
                spec["sigma"] = float(sigma)
        else:
            spec.pop("sigma", None)
        return KernelSpec(**spec)

    def anova_for(self, m: int):
        k = self.anova_k
        return k[m] if isinstance(k, (list, tuple)) else k


@dataclass
class ViewTransform:
    """Feature selection and optional scaling applied to one view."""

    name: str
    features: list[str]
    columns: np.ndarray
    standardizer: Standardizer | None = None

    def select(self, values) -> np.ndarray:
        """Pick the kept columns out of a matrix laid out like the training view."""
        return np.asarray(values, dtype=np.float64)[:, self.columns]

    def scale(self, selected) -> np.ndarray:
        x = np.asarray(selected, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != len(self.features):
            raise DataError(f"view {self.name!r} expects {len(self.features)} features")
        return x if self.standardizer is None else self.standardizer.transform(x)


def _fit_transforms(dataset: MultiViewDataset, options: MethodOptions) -> list[ViewTransform]:
    out = []
    for m, view in enumerate(dataset.views):
        k = options.anova_for(m)
        if k is None or k >= view.values.shape[1]:
            cols = np.arange(view.values.shape[1])
        else:
            f = anova_f_scores(view.values, dataset.labels)
            cols = np.argsort(-f, kind="stable")[:int(k)]
        st = Standardizer.fit(view.values[:, cols]) if options.standardize else None
        out.append(ViewTransform(view.name, [view.features[j] for j in cols], cols, st))
    return out


@dataclass(eq=False)
class FittedModel:
    method: str
    params: dict
    options: MethodOptions
    class_names: list[str]
    view_names: list[str]
    transforms: list[ViewTransform]
    train_ids: list[str]
    train_values: list[np.ndarray] = field(repr=False)
    specs: list[KernelSpec] = field(default_factory=list)
    fusion: FusedKernel | None = None
    svm: SvmModel | MulticlassSvm | None = None
    kpca: list[KpcaFit] = field(default_factory=list)
    network: object = None
    trace: object = None

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def embed(self, views_values) -> list[np.ndarray]:
        """KPCA scores of new samples (deep methods)."""
        xs = [t.scale(v) for t, v in zip(self.transforms, views_values)]
        return [kpca_project(fit, compute_cross_gram(x, xt, fit.spec)).scores
                for fit, x, xt in zip(self.kpca, xs, self.train_values)]

    def scores(self, views_values) -> np.ndarray:
        """Per-class scores, shape (n, n_classes).

        ``views_values`` holds one matrix per view restricted to the model's
        selected features, in order (see :meth:`values_for`).
        """
        if len(views_values) != len(self.transforms):
            raise DataError(f"expected {len(self.transforms)} views, got {len(views_values)}")
        if self.method in DEEP_METHODS:
            return predict_proba(self.network, self.embed(views_values))
        xs = [t.scale(v) for t, v in zip(self.transforms, views_values)]
        if self.method == "svm_concat":
            kx = compute_cross_gram(np.hstack(xs), self.train_values[0], self.specs[0]).values
        else:
            kx = self.fusion.combine([compute_cross_gram(x, xt, s).values for x, xt, s in
                                      zip(xs, self.train_values, self.specs)])
        if isinstance(self.svm, MulticlassSvm):
            return self.svm.decision_matrix(kx)
        f = decision_values(self.svm, kx)
        return np.column_stack([-f, f])

    def decision_scores(self, views_values) -> np.ndarray:
        """Scalar score for class 1 in binary tasks (AUC input)."""
        s = self.scores(views_values)
        return s[:, 1]

    def predict(self, views_values) -> np.ndarray:
        s = self.scores(views_values)
        if self.n_classes == 2 and self.method not in DEEP_METHODS:
            return (s[:, 1] >= 0).astype(np.int64)
        return np.argmax(s, axis=1)

    def values_for(self, dataset: MultiViewDataset) -> list[np.ndarray]:
        """Pull this model's views out of ``dataset`` by name and feature name."""
        by_name = {v.name: v for v in dataset.views}
        out = []
        for vn, t in zip(self.view_names, self.transforms):
            if vn not in by_name:
                raise DataError(f"missing view {vn!r}")
            view = by_name[vn]
            pos = {f: j for j, f in enumerate(view.features)}
            missing = [f for f in t.features if f not in pos]
            if missing:
                raise DataError(f"view {vn!r} lacks feature {missing[0]!r}")
            out.append(view.values[:, [pos[f] for f in t.features]])
        return out

    # -- persistence ---------------------------------------------------------

    def to_dict(self) -> dict:
        d = {
            "format_version": FORMAT_VERSION,
            "method": self.method,
            "params": self.params,
            "options": {"kernel": self.options.kernel, "normalize": self.options.normalize,
                        "standardize": self.options.standardize,
                        "anova_k": self.options.anova_k, "svm_tol": self.options.svm_tol,
                        "mkl": self.options.mkl, "deep": self.options.deep},
            "class_names": self.class_names,
            "view_names": self.view_names,
            "train_ids": self.train_ids,
            "views": [{
                "name": t.name, "features": t.features, "columns": t.columns.tolist(),
                "standardizer": None if t.standardizer is None else {
                    "mean": t.standardizer.mean.tolist(), "scale": t.standardizer.scale.tolist()},
            } for t in self.transforms],
            "train_values": [x.tolist() for x in self.train_values],
            "kernel_specs": [s.to_dict() for s in self.specs],
        }
        if self.fusion is not None:
            d["fusion"] = {"method": self.fusion.method, "weights": self.fusion.weights.tolist(),
                           "scales": self.fusion.scales.tolist(),
                           "input_refs": self.fusion.input_refs, "converged": self.fusion.converged}
        if self.svm is not None:
            d["svm"] = self.svm.to_dict()
        if self.kpca:
            d["kpca"] = [{"dual_coeffs": f.dual_coeffs.tolist(),
                          "eigenvalues": f.eigenvalues.tolist()} for f in self.kpca]
        if self.network is not None:
            d["network"] = self.network.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FittedModel":
        if not isinstance(d, dict):
            raise ModelFileError("model file must hold a JSON object")
        if d.get("format_version") != FORMAT_VERSION:
            raise ModelFileError(f"unsupported model format version {d.get('format_version')!r}")
        opts = MethodOptions(**d["options"])
        transforms = []
        for v in d["views"]:
            st = v["standardizer"]
            transforms.append(ViewTransform(
                v["name"], list(v["features"]), np.asarray(v["columns"], dtype=np.int64),
                None if st is None else Standardizer(st["mean"], st["scale"])))
        train_values = [np.asarray(x, dtype=np.float64) for x in d["train_values"]]
        specs = [KernelSpec.from_dict(s) for s in d["kernel_specs"]]
        model = cls(d["method"], d["params"], opts, list(d["class_names"]), list(d["view_names"]),
                    transforms, list(d["train_ids"]), train_values, specs)
        if "fusion" in d:
            f = d["fusion"]
            weights = np.asarray(f["weights"], dtype=np.float64)
            model.fusion = FusedKernel(weights, None, f["method"], f["input_refs"],
                                       np.asarray(f["scales"], dtype=np.float64),
                                       converged=f.get("converged", True))
        if "svm" in d:
            s = d["svm"]
            model.svm = MulticlassSvm.from_dict(s) if "models" in s else SvmModel.from_dict(s)
        if "kpca" in d:
            for spec, x, k, name in zip(specs, train_values, d["kpca"], model.view_names):
                gram = compute_gram(x, spec, name)
                model.kpca.append(KpcaFit(np.asarray(k["dual_coeffs"], dtype=np.float64),
                                          np.asarray(k["eigenvalues"], dtype=np.float64),
                                          gram, spec, name))
            model.network = DeepMklModel.from_dict(d["network"])
        return model

    def save(self, path) -> None:
        atomic_write_text(path, json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "FittedModel":
        with open(path, encoding="utf-8") as fh:
            try:
                return cls.from_dict(json.load(fh))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ModelFileError(f"{path}: not a valid model file ({exc})") from None


def atomic_write_text(path, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _binary_y(labels) -> np.ndarray:
    return np.where(np.asarray(labels) == 1, 1.0, -1.0)


def fit_method(dataset: MultiViewDataset, method: str, params: dict,
               options: MethodOptions | None = None) -> FittedModel:
    """Fit ``method`` on every sample of ``dataset`` with fixed ``params``.

    SVM methods read ``C`` and ``sigma``; deep methods read ``kpca_sigma``,
    ``n_components`` and optionally ``epochs``, ``dropout`` and
    ``learning_rate``.
    """
    options = options or MethodOptions()
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    n_classes = dataset.n_classes
    if method in BINARY_ONLY and n_classes != 2:
        raise ValueError(f"{method} is binary-only; use svm_naive or statis_umkl_svm")
    transforms = _fit_transforms(dataset, options)
    xs = [t.scale(t.select(v.values)) for t, v in zip(transforms, dataset.views)]
    labels = dataset.labels
    model = FittedModel(method, dict(params), options, list(dataset.class_names),
                        dataset.view_names, transforms, list(dataset.samples), xs)

    if method in DEEP_METHODS:
        spec = options.kernel_spec(params.get("kpca_sigma"))
        model.specs = [spec] * len(xs)
        d = int(params.get("n_components", 20))
        model.kpca = [kpca_fit(compute_gram(x, spec, t.name), d) for x, t in zip(xs, transforms)]
        emb = [f.train_scores for f in model.kpca]
        cfg = dict(options.deep)
        cfg["cross_modal"] = method == "cross_modal_deep_mkl"
        for key, name in (("epochs", "epochs"), ("dropout", "dropout_rate"),
                          ("learning_rate", "learning_rate")):
            if key in params:
                cfg[name] = params[key]
        if cfg["cross_modal"] and len(cfg.get("branch_sizes", DeepMklConfig.branch_sizes)) < 4:
            sizes = list(cfg.get("branch_sizes", DeepMklConfig.branch_sizes))
            cfg["branch_sizes"] = sizes + [sizes[-1]] * (4 - len(sizes))
        net = build(DeepMklConfig(**cfg), [e.shape[1] for e in emb], n_classes)
        model.trace = train(net, emb, labels)
        model.network = net
        return model

    cost = float(params.get("C", 1.0))
    spec = options.kernel_spec(params.get("sigma"))
    if method == "svm_concat":
        xcat = np.hstack(xs)
        model.train_values = [xcat]
        model.specs = [spec]
        k = compute_gram(xcat, spec).values
    else:
        model.specs = [spec] * len(xs)
        grams = [compute_gram(x, spec, t.name) for x, t in zip(xs, transforms)]
        cfg = MklConfig(svm_tol=options.svm_tol, **options.mkl)
        model.fusion = fuse(grams, SVM_METHODS[method], _binary_y(labels) if n_classes == 2 else None,
                            cost, options.normalize, cfg)
        k = model.fusion.meta.values
    ref = {"method": method, "kernel": spec.to_dict()}
    if n_classes == 2:
        model.svm = fit_binary(k, _binary_y(labels), cost, tol=options.svm_tol,
                               kernel_ref=ref, check_psd=False)
    else:
        model.svm = fit_multiclass(k, labels, cost, n_classes, list(dataset.class_names),
                                   tol=options.svm_tol, kernel_ref=ref, check_psd=False)
    return model
