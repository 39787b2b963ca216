"""Two-step biomarker ranking.

Step one scores kernel principal components of each view by Integrated
Gradients through a trained :class:`~omicsmkl.deep.DeepMklModel`. Step two
ranks the original variables of each view by the gradient norm of the
selected components' projection functions (KPCA-IG).
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .deep import DeepMklModel, NetworkError
from .kernels import KernelError, kernel_values
from .kpca import KpcaFit


class AttributionError(ValueError):
    pass


def _as_rows(views, widths) -> list[np.ndarray]:
    out = []
    for x, w in zip(views, widths):
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.size != w:
            raise NetworkError(f"input width {x.size} does not match expected {w}")
        out.append(x)
    return out


def integrated_gradients(model: DeepMklModel, x, baseline, target: int,
                         steps: int = 50) -> list[np.ndarray]:
    """Midpoint-rule Integrated Gradients of the target-class logit.

    ``IG_i = (x_i - x'_i) / steps * sum_t dF(x' + (t - 1/2)/steps (x - x'))/dx_i``
    summed over ``t = 1..steps``. All path points go through the network
    in one eval-mode batch.
    """
    if model.training:
        raise AttributionError("Integrated Gradients needs a model in eval mode")
    if steps < 1:
        raise AttributionError("steps must be at least 1")
    if len(x) != len(model.input_dims) or len(baseline) != len(model.input_dims):
        raise NetworkError(f"expected {len(model.input_dims)} views")
    x = _as_rows(x, model.input_dims)
    base = _as_rows(baseline, model.input_dims)
    alphas = (np.arange(1, steps + 1) - 0.5) / steps
    path = [b[None, :] + alphas[:, None] * (xi - b)[None, :] for xi, b in zip(x, base)]
    model.logits(path)
    dlogits = np.zeros((steps, model.n_classes))
    dlogits[:, int(target)] = 1.0
    grads = model.backward(dlogits)
    return [(xi - b) * g.mean(axis=0) for xi, b, g in zip(x, base, grads)]


def target_logit(model: DeepMklModel, x, target: int) -> float:
    model.training = False
    rows = [np.asarray(v, dtype=np.float64).reshape(1, -1) for v in x]
    return float(model.logits(rows)[0, int(target)])


@dataclass
class ComponentRanking:
    view: str
    component_ids: list[int]
    scores: list[float]


def component_scores(model: DeepMklModel, embeddings, labels=None, steps: int = 50,
                     baseline=None, target: str = "predicted") -> list[np.ndarray]:
    """Mean ``|IG|`` per component of every view over the given samples."""
    if model.training:
        raise AttributionError("Integrated Gradients needs a model in eval mode")
    views = model._check_inputs(embeddings)
    n = views[0].shape[0]
    if n == 0:
        raise AttributionError("empty sample set")
    if baseline is None:
        baseline = [np.zeros(d) for d in model.input_dims]
    if target == "predicted":
        targets = np.argmax(model.logits(views), axis=1)
    elif target == "label":
        if labels is None:
            raise AttributionError("target='label' needs labels")
        targets = np.asarray(labels, dtype=np.int64)
    else:
        raise AttributionError(f"unknown target convention {target!r}")
    totals = [np.zeros(d) for d in model.input_dims]
    for s in range(n):
        ig = integrated_gradients(model, [v[s] for v in views], baseline, targets[s], steps)
        for t, a in zip(totals, ig):
            t += np.abs(a)
    return [t / n for t in totals]


def _top(scores: np.ndarray, k: int) -> tuple[list[int], list[float]]:
    order = np.argsort(-scores, kind="stable")[:k]
    return [int(i) + 1 for i in order], [float(scores[i]) for i in order]


def rank_components(model: DeepMklModel, embeddings, labels=None, steps: int = 50,
                    top_k: int = 3, view_names=None, baseline=None,
                    target: str = "predicted") -> list[ComponentRanking]:
    """Top ``top_k`` 1-based component ids per view by mean ``|IG|``."""
    if top_k < 1 or top_k > min(model.input_dims):
        raise AttributionError("top_k must lie between 1 and the embedding width")
    scores = component_scores(model, embeddings, labels, steps, baseline, target)
    names = view_names or [f"view{m + 1}" for m in range(len(scores))]
    return [ComponentRanking(name, *_top(s, top_k)) for name, s in zip(names, scores)]


# --------------------------------------------------------------------------
# KPCA-IG
# --------------------------------------------------------------------------

def _kernel_gradients(train_values, points, spec) -> np.ndarray:
    """``d k(x_i, x) / d x_l`` at every ``x`` in ``points``: shape (s, n, p)."""
    xi = np.asarray(train_values, dtype=np.float64)
    pts = np.asarray(points, dtype=np.float64)
    if spec.kind == "rbf":
        k = kernel_values(pts, xi, spec)
        diff = xi[None, :, :] - pts[:, None, :]
        return 2.0 * spec.sigma * diff * k[:, :, None]
    if spec.kind == "linear":
        return np.broadcast_to(xi[None, :, :], (pts.shape[0],) + xi.shape)
    if spec.kind == "polynomial":
        base = pts @ xi.T + spec.offset
        factor = spec.degree * base ** (spec.degree - 1)
        return factor[:, :, None] * xi[None, :, :]
    raise KernelError(f"kernel {spec.kind!r} is not differentiable here")


def projection_function(fit: KpcaFit, train_values, points, components) -> np.ndarray:
    """``h_j(x)``: centered projection of arbitrary points onto components."""
    kx = kernel_values(points, train_values, fit.spec)
    kt = fit.train_gram.values
    kc = kx - kt.mean(axis=0)[None, :] - kx.mean(axis=1)[:, None] + kt.mean()
    cols = np.asarray(components, dtype=np.int64) - 1
    return kc @ fit.dual_coeffs[:, cols]


def projection_gradients(fit: KpcaFit, train_values, points, components) -> np.ndarray:
    """``d h_j / d x_l`` at each point: shape (s, len(components), p).

    The centering term ``-(1/n) sum_u k(x_u, x)`` depends on ``x``; it is
    carried by using coefficients ``a_ij - mean_i(a_ij)``.
    """
    if fit.spec is None:
        raise KernelError("fit carries no kernel spec")
    cols = np.asarray(components, dtype=np.int64) - 1
    if cols.size == 0:
        raise AttributionError("no components selected")
    if cols.min() < 0 or cols.max() >= fit.d:
        raise AttributionError(f"component ids must lie in 1..{fit.d}")
    a = fit.dual_coeffs[:, cols]
    coef = a - a.mean(axis=0, keepdims=True)
    dk = _kernel_gradients(train_values, points, fit.spec)
    return np.einsum("snp,nj->sjp", dk, coef)


def kpcaig_importance(fit: KpcaFit, train_values, selected_components,
                      feature_names=None) -> list[tuple[str, float]]:
    """Feature importance ``mean_s sqrt(sum_j (dh_j/dx_l (x_s))^2)``, sorted descending."""
    x = np.asarray(train_values, dtype=np.float64)
    if x.shape[0] != fit.train_gram.n:
        raise AttributionError("train_values do not match the fit's training set")
    grads = projection_gradients(fit, x, x, selected_components)
    importance = np.sqrt((grads ** 2).sum(axis=1)).mean(axis=0)
    names = list(feature_names) if feature_names is not None else [
        f"f{l + 1}" for l in range(x.shape[1])]
    order = np.argsort(-importance, kind="stable")
    return [(names[l], float(importance[l])) for l in order]


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------

@dataclass
class AttributionConfig:
    steps: int = 50
    top_k_components: int = 3
    top_k_features: list | int = 10
    target: str = "predicted"

    def features_for(self, m: int) -> int:
        k = self.top_k_features
        return int(k[m]) if isinstance(k, (list, tuple)) else int(k)


@dataclass
class AttributionReport:
    components: list[ComponentRanking]
    features: dict[str, list[tuple[str, float]]]
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "components": [{"view": c.view, "component_ids": c.component_ids,
                            "scores": c.scores} for c in self.components],
            "features": {v: [{"feature": f, "score": s} for f, s in rows]
                         for v, rows in self.features.items()},
        }

    def write(self, directory) -> list[str]:
        os.makedirs(directory, exist_ok=True)
        paths = [os.path.join(directory, n)
                 for n in ("attribution.json", "components.csv", "features.csv")]
        with open(paths[0], "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
        with open(paths[1], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["view", "component_id", "score"])
            for c in self.components:
                for cid, s in zip(c.component_ids, c.scores):
                    w.writerow([c.view, cid, repr(s)])
        with open(paths[2], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["view", "feature", "score"])
            for v, rows in self.features.items():
                for f, s in rows:
                    w.writerow([v, f, repr(s)])
        return paths


def biomarker_report(model: DeepMklModel, fits: list[KpcaFit], train_values: list,
                     embeddings: list, config: AttributionConfig | None = None,
                     feature_names: list | None = None, view_names: list | None = None,
                     labels=None) -> AttributionReport:
    cfg = config or AttributionConfig()
    if len(fits) != len(model.input_dims) or len(train_values) != len(fits):
        raise AttributionError("fits and training matrices must match the model's views")
    names = view_names or [f.view_name or f"view{m + 1}" for m, f in enumerate(fits)]
    comps = rank_components(model, embeddings, labels, cfg.steps, cfg.top_k_components,
                            names, target=cfg.target)
    features = {}
    for m, (fit, x, ranking) in enumerate(zip(fits, train_values, comps)):
        fnames = feature_names[m] if feature_names is not None else None
        ranked = kpcaig_importance(fit, x, ranking.component_ids, fnames)
        features[ranking.view] = ranked[:cfg.features_for(m)]
    echo = {"baseline": "zeros", "steps": cfg.steps, "target": cfg.target,
            "top_k_components": cfg.top_k_components, "top_k_features": cfg.top_k_features}
    return AttributionReport(comps, features, echo)
