"""Kernel PCA fit on a training Gram matrix and projection of new samples."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .kernels import (CrossKernelMatrix, KernelError, KernelMatrix, KernelSpec,
                      center_cross_gram, center_gram, compute_cross_gram, compute_gram)


@dataclass(eq=False)
class KpcaFit:
    """Dual coefficients ``alpha_j = v_j / sqrt(lambda_j)`` of the kept components.

    Eigenvalues are those of the centered training Gram, so training score
    column ``j`` has squared norm ``lambda_j``.
    """

    dual_coeffs: np.ndarray = field(repr=False)
    eigenvalues: np.ndarray
    train_gram: KernelMatrix = field(repr=False)
    spec: KernelSpec | None
    view_name: str = ""

    @property
    def d(self) -> int:
        return self.eigenvalues.size

    @property
    def train_scores(self) -> np.ndarray:
        return center_gram(self.train_gram).values @ self.dual_coeffs


@dataclass(eq=False)
class Embedding:
    scores: np.ndarray = field(repr=False)
    view_name: str = ""

    @property
    def component_ids(self) -> list[int]:
        return list(range(1, self.scores.shape[1] + 1))


def kpca_fit(k_train: KernelMatrix, d: int, eig_floor: float = 1e-12) -> KpcaFit:
    """Keep the top ``min(d, #{lambda_j > eig_floor * lambda_1})`` components.

    Each eigenvector's sign is fixed so its largest-magnitude entry is
    positive.
    """
    if d < 1:
        raise KernelError("need at least one component")
    if k_train.n < 2:
        raise KernelError("need at least two training samples")
    kc = center_gram(k_train).values
    lam, vecs = np.linalg.eigh(kc)
    lam, vecs = lam[::-1], vecs[:, ::-1]
    if not lam[0] > 0:
        raise KernelError("all kernel PCA eigenvalues are below the floor")
    keep = int(min(d, np.count_nonzero(lam > eig_floor * lam[0])))
    lam, vecs = lam[:keep].copy(), vecs[:, :keep].copy()
    pivot = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivot, np.arange(keep)])
    vecs *= signs
    return KpcaFit(vecs / np.sqrt(lam), lam, k_train, k_train.spec, k_train.view_name)


def kpca_project(fit: KpcaFit, k_cross: CrossKernelMatrix) -> Embedding:
    if k_cross.spec is not None and fit.spec is not None and k_cross.spec != fit.spec:
        raise KernelError("cross kernel was computed with a different kernel spec")
    if k_cross.values.shape[1] != fit.train_gram.n:
        raise KernelError(f"cross kernel has {k_cross.values.shape[1]} columns, "
                          f"fit has {fit.train_gram.n} training samples")
    centered = center_cross_gram(k_cross, fit.train_gram)
    return Embedding(centered.values @ fit.dual_coeffs, fit.view_name)


def fit_view(train_values, spec: KernelSpec, d: int, view_name: str = "",
             eig_floor: float = 1e-12) -> KpcaFit:
    return kpca_fit(compute_gram(train_values, spec, view_name), d, eig_floor)


def transform_view(fit: KpcaFit, train_values, values) -> np.ndarray:
    return kpca_project(fit, compute_cross_gram(values, train_values, fit.spec)).scores


def save_embedding_csv(embedding: Embedding, samples, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", *[f"pc{j}" for j in embedding.component_ids]])
        for sid, row in zip(samples, embedding.scores):
            w.writerow([sid, *map(repr, map(float, row))])
