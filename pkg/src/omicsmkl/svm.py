"""C-SVM on precomputed kernels: SMO dual solver, binary and one-vs-rest models."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

TAU = 1e-12


class SolverError(RuntimeError):
    pass


@dataclass
class SmoResult:
    alphas: np.ndarray
    bias: float
    objective: float
    iterations: int
    converged: bool
    max_violation: float
    psd_ok: bool = True


def dual_objective(k, y, alphas) -> float:
    """``sum(a) - 1/2 sum_ij a_i a_j y_i y_j K_ij``."""
    ay = np.asarray(alphas) * np.asarray(y)
    return float(np.sum(alphas) - 0.5 * ay @ np.asarray(k) @ ay)


def _bias(grad, y, alphas, cost) -> float:
    # b = -y_i G_i on free vectors; otherwise the midpoint of the KKT interval
    score = -y * grad
    free = (alphas > 0) & (alphas < cost)
    if np.any(free):
        return float(score[free].mean())
    at_lower = alphas <= 0
    at_upper = alphas >= cost
    lo_set = (at_lower & (y > 0)) | (at_upper & (y < 0))
    hi_set = (at_upper & (y > 0)) | (at_lower & (y < 0))
    lo = score[lo_set].max() if np.any(lo_set) else -np.inf
    hi = score[hi_set].min() if np.any(hi_set) else np.inf
    if np.isfinite(lo) and np.isfinite(hi):
        return float(0.5 * (lo + hi))
    return float(lo if np.isfinite(lo) else hi)


def smo_solve(k, y, cost: float, tol: float = 1e-3, max_iter: int | None = None,
              alpha0=None, check_psd: bool = True) -> SmoResult:
    """Maximise the C-SVM dual by sequential minimal optimisation.

    Each step picks the maximal violating pair
    ``i = argmax_{I_up} -y_t G_t``, ``j = argmin_{I_low} -y_t G_t``
    and moves ``alpha_i += y_i * lam``, ``alpha_j -= y_j * lam`` with the
    largest feasible ``lam`` up to the unconstrained optimum. Stops when
    the violation ``m - M`` drops below ``tol``.

    ``alpha0`` warm-starts the solver from any feasible point.
    """
    k = np.asarray(k, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    if k.shape != (n, n):
        raise SolverError(f"kernel shape {k.shape} does not match {n} labels")
    if not np.all(np.abs(y) == 1):
        raise SolverError("labels must be +1/-1")
    if not cost > 0:
        raise SolverError("cost must be positive")
    psd_ok = True
    if check_psd and n > 0:
        eig = np.linalg.eigvalsh(0.5 * (k + k.T))
        psd_ok = bool(eig[0] >= -1e-8 * max(1.0, eig[-1]))
        if not psd_ok:
            warnings.warn(f"kernel is not PSD (min eigenvalue {eig[0]:.3e}); "
                          "SMO optimality is not guaranteed", RuntimeWarning, stacklevel=2)
    if max_iter is None:
        max_iter = max(100 * n * n, 1000)

    if alpha0 is None:
        alphas = np.zeros(n)
        grad = -np.ones(n)
    else:
        alphas = np.clip(np.asarray(alpha0, dtype=np.float64), 0.0, cost)
        grad = y * (k @ (alphas * y)) - 1.0
    diag = np.diag(k).copy()

    it = 0
    gap = np.inf
    converged = False
    while it < max_iter:
        score = -y * grad
        up = ((alphas < cost) & (y > 0)) | ((alphas > 0) & (y < 0))
        low = ((alphas < cost) & (y < 0)) | ((alphas > 0) & (y > 0))
        if not up.any() or not low.any():
            gap = 0.0
            converged = True
            break
        su = np.where(up, score, -np.inf)
        sl = np.where(low, score, np.inf)
        i = int(np.argmax(su))
        j = int(np.argmin(sl))
        gap = su[i] - sl[j]
        if gap < tol:
            converged = True
            break
        quad = diag[i] + diag[j] - 2.0 * k[i, j]
        lam = gap / max(quad, TAU)
        lam = min(lam, cost - alphas[i] if y[i] > 0 else alphas[i])
        lam = min(lam, alphas[j] if y[j] > 0 else cost - alphas[j])
        if lam <= 0:
            # degenerate step; should not happen for a valid pair
            break
        di = y[i] * lam
        dj = -y[j] * lam
        alphas[i] += di
        alphas[j] += dj
        # snap to the box so bound membership is exact
        for t in (i, j):
            if alphas[t] < 1e-14 * cost:
                alphas[t] = 0.0
            elif alphas[t] > cost * (1 - 1e-14):
                alphas[t] = cost
        grad += y * (k[:, i] * (y[i] * di) + k[:, j] * (y[j] * dj))
        it += 1

    bias = _bias(grad, y, alphas, cost)
    return SmoResult(alphas, bias, dual_objective(k, y, alphas), it, converged,
                     float(max(gap, 0.0)), psd_ok)


@dataclass
class SvmModel:
    alphas: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    bias: float
    cost: float
    kernel_ref: dict = field(default_factory=dict)
    converged: bool = True
    iterations: int = 0

    @property
    def support_indices(self) -> np.ndarray:
        return np.flatnonzero(self.alphas > 0)

    def decision_function(self, k_cross) -> np.ndarray:
        return decision_values(self, k_cross)

    def predict(self, k_cross) -> np.ndarray:
        return np.where(self.decision_function(k_cross) >= 0, 1, -1)

    def to_dict(self) -> dict:
        return {"alphas": self.alphas.tolist(), "labels": self.labels.astype(int).tolist(),
                "bias": self.bias, "cost": self.cost, "kernel_ref": self.kernel_ref,
                "converged": self.converged, "iterations": self.iterations}

    @classmethod
    def from_dict(cls, d: dict) -> "SvmModel":
        return cls(np.asarray(d["alphas"], dtype=np.float64),
                   np.asarray(d["labels"], dtype=np.float64), float(d["bias"]),
                   float(d["cost"]), d.get("kernel_ref", {}), d.get("converged", True),
                   d.get("iterations", 0))


def _kvalues(k) -> np.ndarray:
    return np.asarray(k.values if hasattr(k, "values") else k, dtype=np.float64)


def fit_binary(k_train, y, cost: float, tol: float = 1e-3, kernel_ref: dict | None = None,
               **kwargs) -> SvmModel:
    y = np.asarray(y, dtype=np.float64)
    if np.unique(y).size < 2:
        raise SolverError("training labels contain a single class")
    res = smo_solve(_kvalues(k_train), y, cost, tol=tol, **kwargs)
    if not res.converged:
        warnings.warn(f"SMO stopped after {res.iterations} iterations "
                      f"(violation {res.max_violation:.2e})", RuntimeWarning, stacklevel=2)
    ref = dict(kernel_ref or {})
    spec = getattr(k_train, "spec", None)
    if spec is not None and not ref:
        ref = spec.to_dict()
    return SvmModel(res.alphas, y, res.bias, float(cost), ref, res.converged, res.iterations)


def decision_values(model: SvmModel, k_cross) -> np.ndarray:
    """``f(x_t) = sum_i alpha_i y_i K[t, i] + b``."""
    kx = _kvalues(k_cross)
    if kx.ndim == 1:
        kx = kx[None, :]
    if kx.shape[1] != model.alphas.size:
        raise SolverError(f"cross kernel has {kx.shape[1]} columns, model has "
                          f"{model.alphas.size} training samples")
    return kx @ (model.alphas * model.labels) + model.bias


def kkt_violation(k, y, alphas, bias, cost) -> float:
    """Largest margin-condition violation over the training set."""
    k = _kvalues(k)
    margin = y * (k @ (alphas * y) + bias)
    viol = np.zeros_like(margin)
    lower = alphas <= 0
    upper = alphas >= cost
    free = ~lower & ~upper
    viol[lower] = np.maximum(0.0, 1.0 - margin[lower])
    viol[upper] = np.maximum(0.0, margin[upper] - 1.0)
    viol[free] = np.abs(margin[free] - 1.0)
    return float(viol.max(initial=0.0))


@dataclass
class MulticlassSvm:
    """One-vs-rest collection of binary SVMs sharing one training kernel."""

    models: list[SvmModel]
    class_names: list[str]

    def decision_matrix(self, k_cross) -> np.ndarray:
        return np.column_stack([decision_values(m, k_cross) for m in self.models])

    def predict(self, k_cross) -> np.ndarray:
        return np.argmax(self.decision_matrix(k_cross), axis=1)

    def to_dict(self) -> dict:
        return {"strategy": "one-vs-rest", "class_names": list(self.class_names),
                "models": [m.to_dict() for m in self.models]}

    @classmethod
    def from_dict(cls, d: dict) -> "MulticlassSvm":
        return cls([SvmModel.from_dict(m) for m in d["models"]], list(d["class_names"]))


def fit_multiclass(k_train, labels, cost: float, n_classes: int | None = None,
                   class_names=None, tol: float = 1e-3, **kwargs) -> MulticlassSvm:
    """One-vs-rest: class ``c`` against all others, predict by argmax."""
    labels = np.asarray(labels, dtype=np.int64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    if n_classes < 2:
        raise SolverError("need at least two classes")
    present = set(np.unique(labels).tolist())
    missing = [c for c in range(n_classes) if c not in present]
    if missing:
        raise SolverError(f"class {missing[0]} absent from training labels")
    if class_names is None:
        class_names = [str(c) for c in range(n_classes)]
    models = [fit_binary(k_train, np.where(labels == c, 1.0, -1.0), cost, tol=tol, **kwargs)
              for c in range(n_classes)]
    return MulticlassSvm(models, list(class_names))
