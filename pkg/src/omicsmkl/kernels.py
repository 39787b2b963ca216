"""Gram matrices, centering, Frobenius utilities and PSD checks."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

KINDS = ("rbf", "linear", "polynomial")


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    """Kernel function description.

    ``sigma`` is the inverse width of the RBF kernel,
    ``k(x, y) = exp(-sigma * ||x - y||^2)``.
    """

    kind: str = "rbf"
    sigma: float = 1.0
    degree: int = 2
    offset: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise KernelError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "rbf" and not self.sigma > 0:
            raise KernelError("rbf kernel requires sigma > 0")
        if self.kind == "polynomial":
            if int(self.degree) != self.degree or self.degree < 1:
                raise KernelError("polynomial kernel requires integer degree >= 1")
            if self.offset < 0:
                raise KernelError("polynomial kernel requires offset >= 0")

    def to_dict(self) -> dict:
        if self.kind == "rbf":
            return {"kind": "rbf", "sigma": float(self.sigma)}
        if self.kind == "linear":
            return {"kind": "linear"}
        return {"kind": "polynomial", "degree": int(self.degree), "offset": float(self.offset)}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(**d)


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    values: np.ndarray = field(repr=False)
    spec: KernelSpec | None = None
    view_name: str = ""
    centered: bool = False
    normalized: bool = False

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class CrossKernelMatrix:
    values: np.ndarray = field(repr=False)
    spec: KernelSpec | None = None
    centered: bool = False


class PsdCheck(NamedTuple):
    min_eigenvalue: float
    max_eigenvalue: float
    is_psd: bool


def _as_matrix(x, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise KernelError(f"{what} must be a 2-d matrix")
    if not np.all(np.isfinite(x)):
        raise KernelError(f"{what} contains non-finite values")
    return x


def kernel_values(a, b, spec: KernelSpec) -> np.ndarray:
    """Raw kernel evaluations ``k(a_i, b_j)`` as an ``len(a) x len(b)`` array."""
    a = _as_matrix(a, "left input")
    b = _as_matrix(b, "right input")
    if a.shape[1] != b.shape[1]:
        raise KernelError(f"feature dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if spec.kind == "rbf":
        return np.exp(-spec.sigma * cdist(a, b, "sqeuclidean"))
    dots = a @ b.T
    if spec.kind == "linear":
        return dots
    return (dots + spec.offset) ** int(spec.degree)


def compute_gram(view_values, spec: KernelSpec, view_name: str = "") -> KernelMatrix:
    x = _as_matrix(view_values, "view values")
    if spec.kind == "rbf":
        k = np.exp(-spec.sigma * squareform(pdist(x, "sqeuclidean")))
    else:
        k = kernel_values(x, x, spec)
        k = np.triu(k) + np.triu(k, 1).T
    return KernelMatrix(k, spec, view_name)


def compute_cross_gram(test_values, train_values, spec: KernelSpec) -> CrossKernelMatrix:
    return CrossKernelMatrix(kernel_values(test_values, train_values, spec), spec)


def center_gram(k: KernelMatrix) -> KernelMatrix:
    """Double centering ``(I - J) K (I - J)`` with ``J = ones / n``."""
    if k.centered:
        raise KernelError("kernel is already centered")
    kv = k.values
    col = kv.mean(axis=0)
    row = kv.mean(axis=1)
    kc = kv - col[None, :] - row[:, None] + kv.mean()
    kc = 0.5 * (kc + kc.T)
    return replace(k, values=kc, centered=True)


def center_cross_gram(k_cross: CrossKernelMatrix, k_train: KernelMatrix) -> CrossKernelMatrix:
    """Center test-vs-train kernel rows with the training Gram's statistics."""
    if k_cross.centered or k_train.centered:
        raise KernelError("center_cross_gram expects uncentered inputs")
    kx, kt = k_cross.values, k_train.values
    if kx.shape[1] != kt.shape[0]:
        raise KernelError(f"cross kernel has {kx.shape[1]} columns, training Gram has {kt.shape[0]}")
    out = kx - kt.mean(axis=0)[None, :] - kx.mean(axis=1)[:, None] + kt.mean()
    return replace(k_cross, values=out, centered=True)


def _values(k) -> np.ndarray:
    return k.values if hasattr(k, "values") else np.asarray(k, dtype=np.float64)


def frobenius_cosine(a, b) -> float:
    av, bv = _values(a), _values(b)
    if av.shape != bv.shape:
        raise KernelError("kernels differ in size")
    na, nb = np.linalg.norm(av), np.linalg.norm(bv)
    if na == 0 or nb == 0:
        raise KernelError("zero-norm kernel")
    return float(np.clip(np.vdot(av, bv) / (na * nb), -1.0, 1.0))


def frobenius_normalize(k: KernelMatrix) -> KernelMatrix:
    norm = np.linalg.norm(k.values)
    if norm == 0:
        raise KernelError("cannot normalize a zero kernel")
    return replace(k, values=k.values / norm, normalized=True)


def validate_psd(k, tolerance: float = 1e-8) -> PsdCheck:
    """Smallest/largest eigenvalue and whether ``lambda_min >= -tol * max(1, lambda_max)``."""
    kv = _values(k)
    if kv.ndim != 2 or kv.shape[0] != kv.shape[1]:
        raise KernelError("kernel must be square")
    if np.max(np.abs(kv - kv.T), initial=0.0) > 1e-9:
        raise KernelError("kernel is not symmetric")
    eig = np.linalg.eigvalsh(0.5 * (kv + kv.T))
    lo, hi = float(eig[0]), float(eig[-1])
    return PsdCheck(lo, hi, lo >= -tolerance * max(1.0, hi))


class Standardizer:
    """Per-feature z-scoring fitted on training rows."""

    def __init__(self, mean, scale):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)

    @classmethod
    def fit(cls, x) -> "Standardizer":
        x = np.asarray(x, dtype=np.float64)
        sd = x.std(axis=0)
        return cls(x.mean(axis=0), np.where(sd > 0, sd, 1.0))

    def transform(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.scale


def save_gram_csv(k, path) -> None:
    np.savetxt(path, _values(k), delimiter=",", fmt="%.17g")


def load_gram_csv(path) -> np.ndarray:
    k = np.loadtxt(path, delimiter=",", ndmin=2)
    if k.shape[0] != k.shape[1]:
        raise KernelError(f"{path}: Gram matrix must be square")
    return k
