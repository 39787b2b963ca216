"""Convex kernel combinations ``K* = sum_m beta_m K^m`` and the four ways to
pick ``beta``: uniform, STATIS consensus, SimpleMKL and SEMKL.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .kernels import KernelError, KernelMatrix, frobenius_cosine
from .svm import smo_solve

METHODS = ("naive", "statis", "simplemkl", "semkl")
ZERO_WEIGHT = 1e-8


class FusionError(ValueError):
    pass


@dataclass
class MklConfig:
    tol: float = 1e-4
    max_iter: int = 200
    backtrack: float = 0.5
    initial_step: float = 1.0
    max_backtracks: int = 30
    svm_tol: float = 1e-3


@dataclass(eq=False)
class FusedKernel:
    """Simplex weights and the meta-kernel they produce.

    ``scales`` holds the per-kernel factor applied before weighting (the
    inverse Frobenius norm when kernels were normalized, else 1); the same
    factors must be applied to cross-kernels at prediction time.
    """

    weights: np.ndarray
    meta: KernelMatrix = field(repr=False)
    method: str
    input_refs: list[str]
    scales: np.ndarray = field(repr=False, default=None)
    trace: list[dict] = field(default_factory=list, repr=False)
    converged: bool = True

    def __post_init__(self):
        if self.scales is None:
            self.scales = np.ones_like(self.weights)

    def combine(self, matrices) -> np.ndarray:
        """Apply the fitted weights to matching (cross-)kernel matrices."""
        mats = [np.asarray(getattr(m, "values", m), dtype=np.float64) for m in matrices]
        if len(mats) != self.weights.size:
            raise FusionError(f"expected {self.weights.size} kernels, got {len(mats)}")
        out = np.zeros_like(mats[0])
        for b, s, m in zip(self.weights, self.scales, mats):
            if b > 0:
                out += (b * s) * m
        return out

    def trace_rows(self) -> list[list]:
        return [[t["iteration"], t["objective"], *t["weights"]] for t in self.trace]


def _check_kernels(kernels) -> list[np.ndarray]:
    if not kernels:
        raise FusionError("no kernels to fuse")
    mats = [np.asarray(getattr(k, "values", k), dtype=np.float64) for k in kernels]
    shape = mats[0].shape
    if any(m.shape != shape for m in mats) or shape[0] != shape[1]:
        raise FusionError("kernels must be square and of equal size")
    return mats


def _names(kernels) -> list[str]:
    return [getattr(k, "view_name", "") or f"kernel{m + 1}" for m, k in enumerate(kernels)]


def _combine(mats, weights, scales) -> np.ndarray:
    out = np.zeros_like(mats[0])
    for b, s, m in zip(weights, scales, mats):
        if b > 0:
            out += (b * s) * m
    return out


def _clean_weights(beta) -> np.ndarray:
    beta = np.where(beta < ZERO_WEIGHT, 0.0, beta)
    return beta / beta.sum()


def fuse_fixed(kernels, weights=None, method: str = "naive", scales=None) -> FusedKernel:
    """Meta-kernel for given weights; uniform weights give MKL-naive."""
    mats = _check_kernels(kernels)
    m = len(mats)
    if weights is None:
        beta = np.full(m, 1.0 / m)
    else:
        beta = np.asarray(weights, dtype=np.float64)
        if beta.shape != (m,):
            raise FusionError(f"expected {m} weights")
        if np.any(beta < 0):
            raise FusionError("negative kernel weight")
        if abs(beta.sum() - 1.0) > 1e-9:
            raise FusionError("kernel weights must sum to 1")
    scales = np.ones(m) if scales is None else np.asarray(scales, dtype=np.float64)
    meta = KernelMatrix(_combine(mats, beta, scales), view_name="meta")
    return FusedKernel(beta, meta, method, _names(kernels), scales)


# --------------------------------------------------------------------------
# STATIS consensus
# --------------------------------------------------------------------------

def similarity_matrix(kernels) -> np.ndarray:
    """``C[m, m'] = cos_F(K^m, K^m')``."""
    mats = _check_kernels(kernels)
    m = len(mats)
    c = np.eye(m)
    for a in range(m):
        for b in range(a + 1, m):
            c[a, b] = c[b, a] = frobenius_cosine(mats[a], mats[b])
    return c


def statis_weights(kernels) -> np.ndarray:
    """Leading eigenvector of the cosine similarity matrix, scaled to sum 1."""
    mats = _check_kernels(kernels)
    if len(mats) < 2:
        raise FusionError("STATIS needs at least two kernels")
    try:
        _, vecs = np.linalg.eigh(similarity_matrix(mats))
    except np.linalg.LinAlgError as exc:
        raise FusionError(f"eigensolve failed: {exc}") from exc
    v = vecs[:, -1]
    if v.sum() < 0:
        v = -v
    if np.any(v < -1e-9):
        raise FusionError("leading eigenvector has mixed signs; inputs are not valid kernels")
    v = np.clip(v, 0.0, None)
    return v / v.sum()


def statis_fuse(kernels, normalize: bool = True) -> FusedKernel:
    mats = _check_kernels(kernels)
    beta = _clean_weights(statis_weights(mats))
    if normalize:
        norms = np.array([np.linalg.norm(m) for m in mats])
        if np.any(norms == 0):
            raise KernelError("cannot normalize a zero kernel")
        scales = 1.0 / norms
    else:
        scales = np.ones(len(mats))
    return fuse_fixed(kernels, beta, method="statis", scales=scales)


# --------------------------------------------------------------------------
# supervised wrappers
# --------------------------------------------------------------------------

def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto ``{b >= 0, sum(b) = 1}`` (sort-and-threshold)."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _binary_labels(labels) -> np.ndarray:
    y = np.asarray(labels, dtype=np.float64)
    vals = set(np.unique(y).tolist())
    if vals != {-1.0, 1.0}:
        raise FusionError("supervised MKL is defined for binary +1/-1 labels only; "
                          "use naive or statis fusion for multiclass problems")
    return y


def quad_terms(mats, y, alphas) -> np.ndarray:
    """``gamma_m = sum_ij a_i a_j y_i y_j K^m_ij`` for each kernel."""
    ay = alphas * y
    return np.array([ay @ m @ ay for m in mats])


def mkl_objective(mats, y, alphas, beta) -> float:
    """SVM dual value ``J(beta)`` at fixed ``alphas``."""
    return float(alphas.sum() - 0.5 * quad_terms(mats, y, alphas) @ beta)


def mkl_gradient(mats, y, alphas) -> np.ndarray:
    """``dJ/dbeta_m = -1/2 gamma_m`` (valid at the SVM optimum by Danskin)."""
    return -0.5 * quad_terms(mats, y, alphas)


def _solve(mats, y, beta, cost, cfg: MklConfig, alpha0=None):
    k = _combine(mats, beta, np.ones(len(mats)))
    res = smo_solve(k, y, cost, tol=cfg.svm_tol, alpha0=alpha0, check_psd=False)
    if not res.converged:
        warnings.warn("SVM solver hit its iteration cap inside MKL", RuntimeWarning, stacklevel=3)
    return res


def simplemkl_optimize(kernels, labels, cost: float, config: MklConfig | None = None) -> FusedKernel:
    """Projected-gradient descent of the SVM dual value over the simplex.

    Each outer iteration solves the SVM at the current weights, takes the
    gradient ``-1/2 alpha^T Y K^m Y alpha``, steps along its tangent part
    (scaled to unit sup-norm) and projects back onto the simplex, halving
    the step until the objective does not increase.
    """
    cfg = config or MklConfig()
    mats = _check_kernels(kernels)
    y = _binary_labels(labels)
    if not cost > 0:
        raise FusionError("cost must be positive")
    m = len(mats)
    beta = np.full(m, 1.0 / m)
    res = _solve(mats, y, beta, cost, cfg)
    j_cur = res.objective
    trace = [{"iteration": 0, "objective": j_cur, "weights": beta.tolist()}]
    converged = False
    for it in range(1, cfg.max_iter + 1):
        g = mkl_gradient(mats, y, res.alphas)
        d = g - g.mean()
        scale = np.abs(d).max()
        if scale <= 0:
            converged = True
            break
        d /= scale
        step = cfg.initial_step
        accepted = None
        for _ in range(cfg.max_backtracks):
            trial = project_simplex(beta - step * d)
            if np.max(np.abs(trial - beta)) < cfg.tol:
                break
            trial_res = _solve(mats, y, trial, cost, cfg, alpha0=res.alphas)
            if trial_res.objective <= j_cur:
                accepted = (trial, trial_res)
                break
            step *= cfg.backtrack
        if accepted is None:
            converged = True
            break
        trial, trial_res = accepted
        delta = np.max(np.abs(trial - beta))
        beta, res, j_cur = trial, trial_res, trial_res.objective
        trace.append({"iteration": it, "objective": j_cur, "weights": beta.tolist()})
        if delta < cfg.tol:
            converged = True
            break
    if not converged:
        warnings.warn("SimpleMKL reached its iteration cap", RuntimeWarning, stacklevel=2)
    beta = _clean_weights(beta)
    fused = fuse_fixed(kernels, beta, method="simplemkl")
    fused.trace, fused.converged = trace, converged
    return fused


def semkl_optimize(kernels, labels, cost: float, config: MklConfig | None = None) -> FusedKernel:
    """Group-lasso fixed point ``beta_m <- beta_m sqrt(gamma_m) / sum_k beta_k sqrt(gamma_k)``."""
    cfg = config or MklConfig()
    mats = _check_kernels(kernels)
    y = _binary_labels(labels)
    if not cost > 0:
        raise FusionError("cost must be positive")
    m = len(mats)
    beta = np.full(m, 1.0 / m)
    res = _solve(mats, y, beta, cost, cfg)
    trace = [{"iteration": 0, "objective": res.objective, "weights": beta.tolist()}]
    converged = False
    for it in range(1, cfg.max_iter + 1):
        gamma = np.clip(quad_terms(mats, y, res.alphas), 0.0, None)
        norms = beta * np.sqrt(gamma)
        total = norms.sum()
        if total <= 0:
            raise FusionError("all kernel norms vanished (no support vectors)")
        new = norms / total
        delta = np.max(np.abs(new - beta))
        beta = new
        res = _solve(mats, y, beta, cost, cfg, alpha0=res.alphas)
        trace.append({"iteration": it, "objective": res.objective, "weights": beta.tolist()})
        if delta < cfg.tol:
            converged = True
            break
    if not converged:
        warnings.warn("SEMKL reached its iteration cap", RuntimeWarning, stacklevel=2)
    beta = _clean_weights(beta)
    fused = fuse_fixed(kernels, beta, method="semkl")
    fused.trace, fused.converged = trace, converged
    return fused


def fuse(kernels, method: str, labels=None, cost: float = 1.0, normalize: bool = True,
         config: MklConfig | None = None) -> FusedKernel:
    if method == "naive":
        return fuse_fixed(kernels)
    if method == "statis":
        return statis_fuse(kernels, normalize=normalize)
    if method == "simplemkl":
        return simplemkl_optimize(kernels, labels, cost, config)
    if method == "semkl":
        return semkl_optimize(kernels, labels, cost, config)
    raise FusionError(f"unknown fusion method {method!r}")
