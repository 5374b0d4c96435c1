"""Binary soft-margin SVM trained by SMO.

The solver follows the usual two-variable decomposition: the first index
is the maximal KKT violator, the second is picked by the second-order gain
estimate. The full Gram matrix is cached, which is fine for the few hundred
training points a face gallery produces. The inner loop is compiled with
numba because degenerate problems can need hundreds of thousands of steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.spatial.distance import cdist

from .errors import DimensionMismatch, NoConvergence, NonLinearKernel, SingleClass
from . import serialization

TAU = 1e-12


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "rbf"
    sigma: float = 1.0
    degree: int = 2

    def __post_init__(self):
        if self.kind not in ("linear", "rbf", "polynomial"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "rbf" and not self.sigma > 0:
            raise ValueError("rbf kernel needs sigma > 0")
        if self.kind == "polynomial" and (int(self.degree) != self.degree or self.degree < 1):
            raise ValueError("polynomial degree must be a positive integer")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "rbf":
            d["sigma"] = float(self.sigma)
        elif self.kind == "polynomial":
            d["degree"] = int(self.degree)
        return d


def kernel_eval(spec: KernelSpec, x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise DimensionMismatch(f"kernel arguments differ in length: {x.size} vs {y.size}")
    if spec.kind == "linear":
        return float(x @ y)
    if spec.kind == "rbf":
        diff = x - y
        return float(np.exp(-(diff @ diff) / (2.0 * spec.sigma**2)))
    return float((x @ y + 1.0) ** spec.degree)


def gram(spec: KernelSpec, A, B) -> np.ndarray:
    """Kernel matrix ``K[i, j] = K(A[i], B[j])``."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise DimensionMismatch(f"dimension {A.shape[1]} vs {B.shape[1]}")
    if spec.kind == "linear":
        return A @ B.T
    if spec.kind == "rbf":
        return np.exp(-cdist(A, B, "sqeuclidean") / (2.0 * spec.sigma**2))
    return (A @ B.T + 1.0) ** spec.degree


def default_rbf_sigma(X) -> float:
    """sigma with sigma^2 = dim * (mean per-feature variance of X)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    s2 = X.shape[1] * float(np.mean(X.var(axis=0)))
    return float(np.sqrt(s2)) if s2 > 0 else 1.0


@dataclass(frozen=True, eq=False)
class SvmModel:
    support_vectors: np.ndarray
    alphas: np.ndarray
    sv_labels: np.ndarray
    b: float
    kernel: KernelSpec
    C: float
    dual_objective: float = float("nan")
    n_iter: int = 0
    converged: bool = True
    dual_coef: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "dual_coef", self.alphas * self.sv_labels)

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]

    @property
    def n_sv(self) -> int:
        return len(self.alphas)

    def decision_function(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise DimensionMismatch(f"model expects {self.dim} features, got {X.shape[1]}")
        if self.n_sv == 0:
            return np.full(X.shape[0], self.b)
        return gram(self.kernel, X, self.support_vectors) @ self.dual_coef + self.b

    def to_bytes(self) -> bytes:
        header = {
            "kernel": self.kernel.to_dict(),
            "C": float(self.C),
            "b": float(self.b),
            "n_sv": self.n_sv,
            "dim": self.dim,
            "dual_objective": float(self.dual_objective),
            "n_iter": int(self.n_iter),
            "converged": bool(self.converged),
        }
        blocks = {"support_vectors": self.support_vectors, "dual_coef": self.dual_coef}
        return serialization.pack("svm", header, blocks)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "SvmModel":
        header, blocks = serialization.unpack(raw, "svm")
        return cls.from_parts(header, blocks)

    @classmethod
    def from_parts(cls, header: dict, blocks: dict) -> "SvmModel":
        coef = blocks["dual_coef"]
        sv = blocks["support_vectors"].reshape(header["n_sv"], header["dim"])
        labels = np.where(coef >= 0, 1.0, -1.0)
        return cls(
            support_vectors=sv,
            alphas=np.abs(coef),
            sv_labels=labels,
            b=header["b"],
            kernel=KernelSpec(**header["kernel"]),
            C=header["C"],
            dual_objective=header.get("dual_objective", float("nan")),
            n_iter=header.get("n_iter", 0),
            converged=header.get("converged", True),
        )


def decision_value(model: SvmModel, x) -> float:
    """Kernel expansion plus bias, before taking the sign."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatch("decision_value takes a single vector")
    return float(model.decision_function(x[None, :])[0])


def classify(model: SvmModel, x) -> int:
    """Sign of the decision value; an exact 0 goes to +1."""
    return 1 if decision_value(model, x) >= 0 else -1


def linear_weight(model: SvmModel) -> np.ndarray:
    if model.kernel.kind != "linear":
        raise NonLinearKernel(f"weight vector only exists for linear kernels, not {model.kernel.kind}")
    if model.n_sv == 0:
        return np.zeros(model.dim)
    return model.dual_coef @ model.support_vectors


def dual_objective(alpha, y, K) -> float:
    alpha = np.asarray(alpha, dtype=np.float64)
    ay = alpha * np.asarray(y, dtype=np.float64)
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


def _check_labels(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).ravel()
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be -1 or +1")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise SingleClass("training needs both a +1 and a -1 example")
    return y


def smo(K: np.ndarray, y: np.ndarray, C: float, tol: float = 1e-3, max_iter: int = 10**6):
    """Solve the dual on a precomputed Gram matrix.

    Returns ``(alpha, b, n_iter, converged)``.
    """
    K = np.ascontiguousarray(K, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    alpha, G, it, converged = _smo_loop(K, y, float(C), float(tol), int(max_iter))
    b = -_rho(alpha, y, G, C)
    return alpha, b, int(it), bool(converged)


@njit(cache=True)
def _smo_loop(K, y, C, tol, max_iter):
    # G is the gradient of 0.5 a'Qa - e'a with Q = yy' * K
    n = y.size
    alpha = np.zeros(n)
    G = -np.ones(n)
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        # i: maximal violator in I_up
        i = -1
        m_up = -np.inf
        for t in range(n):
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                v = -y[t] * G[t]
                if v > m_up:
                    m_up = v
                    i = t
        # j: second-order choice in I_low; also track the minimum for the stopping rule
        j = -1
        m_low = np.inf
        best = np.inf
        for t in range(n):
            if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                v = -y[t] * G[t]
                if v < m_low:
                    m_low = v
                if i >= 0 and v < m_up:
                    gain = m_up - v
                    a = K[i, i] + K[t, t] - 2.0 * K[i, t]
                    if a <= 0:
                        a = TAU
                    score = -(gain * gain) / a
                    if score < best:
                        best = score
                        j = t
        if i < 0 or j < 0 or m_up - m_low < tol:
            converged = True
            break

        ai_old, aj_old = alpha[i], alpha[j]
        quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if quad <= 0:
            quad = TAU
        if y[i] != y[j]:
            delta = (-G[i] - G[j]) / quad
            diff = ai_old - aj_old
            ai, aj = ai_old + delta, aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            delta = (G[i] - G[j]) / quad
            total = ai_old + aj_old
            ai, aj = ai_old - delta, aj_old + delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
            elif aj < 0:
                aj, ai = 0.0, total
            if total > C:
                if aj > C:
                    aj, ai = C, total - C
            elif ai < 0:
                ai, aj = 0.0, total
        alpha[i] = ai
        alpha[j] = aj
        di = y[i] * (ai - ai_old)
        dj = y[j] * (aj - aj_old)
        for t in range(n):
            G[t] += y[t] * (K[t, i] * di + K[t, j] * dj)
    return alpha, G, it, converged


def _rho(alpha, y, G, C) -> float:
    yG = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        return float(yG[free].mean())
    at_upper = alpha >= C
    at_lower = alpha <= 0
    ub_mask = (at_upper & (y < 0)) | (at_lower & (y > 0))
    lb_mask = (at_upper & (y > 0)) | (at_lower & (y < 0))
    ub = yG[ub_mask].min() if ub_mask.any() else np.inf
    lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
    if np.isinf(ub) or np.isinf(lb):
        return float(ub if np.isfinite(ub) else lb)
    return float((ub + lb) / 2)


def train(
    X,
    y,
    kernel: KernelSpec = KernelSpec(),
    C: float = 10.0,
    tol: float = 1e-3,
    max_iter: int = 10**6,
) -> SvmModel:
    """Train a binary SVM.

    Raises :class:`NoConvergence` (carrying the partial model) when the
    iteration cap is reached before the KKT gap drops below ``tol``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = _check_labels(y)
    if X.shape[0] != y.size:
        raise DimensionMismatch(f"{X.shape[0]} points but {y.size} labels")
    if not C > 0:
        raise ValueError("C must be positive")
    K = gram(kernel, X, X)
    alpha, b, n_iter, converged = smo(K, y, C, tol, max_iter)
    obj = dual_objective(alpha, y, K)
    sv = alpha > 0
    model = SvmModel(
        support_vectors=X[sv].copy(),
        alphas=alpha[sv].copy(),
        sv_labels=y[sv].copy(),
        b=b,
        kernel=kernel,
        C=float(C),
        dual_objective=obj,
        n_iter=n_iter,
        converged=converged,
    )
    if not converged:
        raise NoConvergence(
            f"SMO stopped after {n_iter} iterations; dual objective {obj:.6g}",
            model=model,
            dual_objective=obj,
        )
    return model


def train_alphas(X, y, kernel: KernelSpec = KernelSpec(), C: float = 10.0, tol: float = 1e-3):
    """Full-length dual vector and bias, for diagnostics and KKT checks."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = _check_labels(y)
    alpha, b, _, _ = smo(gram(kernel, X, X), y, C, tol)
    return alpha, b


# ---------------------------------------------------------------------------
# model selection


def _balanced_accuracy(y_true, scores) -> float:
    pred = np.where(scores >= 0, 1.0, -1.0)
    pos, neg = y_true > 0, y_true < 0
    parts = []
    if pos.any():
        parts.append(np.mean(pred[pos] > 0))
    if neg.any():
        parts.append(np.mean(pred[neg] < 0))
    return float(np.mean(parts))


def grid_search(X, y, Cs, sigmas, folds: int = 5, seed: int = 0, tol: float = 1e-3):
    """Pick ``(C, sigma)`` for an RBF SVM by stratified k-fold balanced accuracy.

    Ties go to the earliest pair in ``Cs x sigmas`` order.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = _check_labels(y)
    rng = np.random.default_rng(seed)
    fold_of = np.empty(y.size, dtype=int)
    for cls in (-1.0, 1.0):
        idx = np.flatnonzero(y == cls)
        rng.shuffle(idx)
        fold_of[idx] = np.arange(idx.size) % folds
    best, best_score = None, -np.inf
    for C in Cs:
        for sigma in sigmas:
            spec = KernelSpec("rbf", sigma=sigma)
            accs = []
            for f in range(folds):
                tr, te = fold_of != f, fold_of == f
                if not te.any() or len(np.unique(y[tr])) < 2:
                    continue
                model = train(X[tr], y[tr], spec, C, tol)
                accs.append(_balanced_accuracy(y[te], model.decision_function(X[te])))
            score = float(np.mean(accs)) if accs else -np.inf
            if score > best_score:
                best, best_score = (float(C), float(sigma)), score
    return best, best_score
