"""Canonical covariate reduction with PCA pre-reduction.

The within-class covariance of raw Gabor features is always singular
(d >> N), so features are first projected onto the leading ``N - C``
principal axes, the pooled covariance is ridge-regularized, and the
generalized eigenproblem ``beta v = lambda Sigma' v`` is solved by
Cholesky whitening.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import linalg

from . import serialization
from .errors import (
    DimensionMismatch,
    EmptyClass,
    RankDeficient,
    SingleClass,
    TargetTooLarge,
)


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Feature matrix with one class label per row."""

    features: np.ndarray
    labels: np.ndarray
    classes: tuple = field(init=False)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.labels)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise DimensionMismatch("features must be (N, d) with N labels")
        if X.shape[0] == 0:
            raise EmptyClass("dataset has no samples")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "classes", tuple(sorted(set(y.tolist()))))

    @classmethod
    def from_groups(cls, groups) -> "LabeledDataset":
        """Build from ``{label: samples}`` or a sequence of per-class sample lists."""
        if not isinstance(groups, dict):
            groups = dict(enumerate(groups))
        rows, labels = [], []
        for label, samples in groups.items():
            samples = np.asarray(samples, dtype=np.float64)
            if samples.size == 0:
                raise EmptyClass(f"class {label!r} has no samples")
            if samples.ndim == 1:
                samples = samples[:, None]
            rows.append(samples)
            labels.extend([label] * len(samples))
        if not rows:
            raise EmptyClass("no classes given")
        if len({r.shape[1] for r in rows}) != 1:
            raise DimensionMismatch("classes disagree on feature dimension")
        return cls(np.vstack(rows), np.asarray(labels))

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self):
        return self.features.shape[0]

    def groups(self):
        for c in self.classes:
            yield c, self.features[self.labels == c]


def class_stats(data: LabeledDataset):
    """Per-class means (in ``data.classes`` order) and the mean of class means."""
    means = []
    for c, g in data.groups():
        if len(g) == 0:
            raise EmptyClass(f"class {c!r} has no samples")
        means.append(g.mean(axis=0))
    means = np.array(means)
    return means, means.mean(axis=0)


def between_scatter(class_means, grand_mean) -> np.ndarray:
    """Covariance of the class means about ``grand_mean`` with a ``1/(C-1)`` factor."""
    M = np.atleast_2d(np.asarray(class_means, dtype=np.float64))
    C = M.shape[0]
    if C < 2:
        raise SingleClass("between-class scatter needs at least two classes")
    D = M - np.asarray(grand_mean, dtype=np.float64)
    beta = D.T @ D / (C - 1)
    return (beta + beta.T) / 2


def pooled_covariance(data: LabeledDataset, class_means) -> np.ndarray:
    """Within-class scatter pooled over all classes, normalized by ``N - 1``."""
    N = len(data)
    if N < 2:
        raise RankDeficient("pooled covariance needs at least two samples")
    D = data.features.copy()
    for mean, c in zip(class_means, data.classes):
        D[data.labels == c] -= mean
    sigma = D.T @ D / (N - 1)
    return (sigma + sigma.T) / 2


class ScatterPair(NamedTuple):
    beta: np.ndarray
    sigma: np.ndarray
    grand_mean: np.ndarray
    class_means: np.ndarray


def scatter_pair(data: LabeledDataset) -> ScatterPair:
    means, grand = class_stats(data)
    return ScatterPair(
        between_scatter(means, grand), pooled_covariance(data, means), grand, means
    )


def _column_signs(v: np.ndarray) -> np.ndarray:
    """Sign of the largest-magnitude entry of each column (0 counts as +)."""
    idx = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[idx, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return signs


def whitened_eigh(beta: np.ndarray, sigma: np.ndarray):
    """Solve ``beta v = lambda sigma v`` for symmetric ``beta`` and SPD ``sigma``.

    Returns eigenvalues in descending order and unit-length eigenvectors
    as columns.
    """
    L = linalg.cholesky(sigma, lower=True)
    tmp = linalg.solve_triangular(L, beta, lower=True)
    M = linalg.solve_triangular(L, tmp.T, lower=True)
    M = (M + M.T) / 2
    ev, W = linalg.eigh(M)
    order = np.argsort(ev)[::-1]
    ev, W = ev[order], W[:, order]
    V = linalg.solve_triangular(L.T, W, lower=False)
    V /= np.linalg.norm(V, axis=0)
    return ev, V


@dataclass(frozen=True, eq=False)
class CanonicalProjection:
    pca_mean: np.ndarray
    pca_basis: np.ndarray
    canon_basis: np.ndarray
    eigenvalues: np.ndarray
    eps: float = 1e-4

    @property
    def d(self) -> int:
        return self.pca_basis.shape[0]

    @property
    def r(self) -> int:
        return self.pca_basis.shape[1]

    @property
    def k(self) -> int:
        return self.canon_basis.shape[1]

    @property
    def directions(self) -> np.ndarray:
        """Canonical directions expressed in the original feature space (d x k)."""
        return self.pca_basis @ self.canon_basis

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.d:
            raise DimensionMismatch(f"expected {self.d} features, got {X.shape[1]}")
        Y = ((X - self.pca_mean) @ self.pca_basis) @ self.canon_basis
        return Y[0] if single else Y

    def header(self) -> dict:
        return {
            "d": self.d,
            "r": self.r,
            "k": self.k,
            "eps": float(self.eps),
            "eigenvalues": [float(v) for v in self.eigenvalues],
        }

    def blocks(self) -> dict:
        return {
            "pca_mean": self.pca_mean,
            "pca_basis": self.pca_basis,
            "canon_basis": self.canon_basis,
        }

    def to_bytes(self) -> bytes:
        return serialization.pack("projection", self.header(), self.blocks())

    @classmethod
    def from_parts(cls, header: dict, blocks: dict) -> "CanonicalProjection":
        d, r, k = header["d"], header["r"], header["k"]
        return cls(
            pca_mean=blocks["pca_mean"].reshape(d),
            pca_basis=blocks["pca_basis"].reshape(d, r),
            canon_basis=blocks["canon_basis"].reshape(r, k),
            eigenvalues=np.asarray(header["eigenvalues"], dtype=np.float64),
            eps=header["eps"],
        )

    @classmethod
    def from_bytes(cls, raw: bytes) -> "CanonicalProjection":
        return cls.from_parts(*serialization.unpack(raw, "projection"))


def fit(
    data: LabeledDataset,
    k: int | None = None,
    r: int | None = None,
    eps: float = 1e-4,
) -> CanonicalProjection:
    """Fit the canonical covariate projection.

    Parameters
    ----------
    data : LabeledDataset
        Training features, ``N`` samples from ``C`` classes.
    k : int, optional
        Output dimension, at most ``C - 1`` (the default).
    r : int, optional
        PCA rank; defaults to ``min(N - C, d)``. Must not exceed ``N - 1``.
    eps : float
        Ridge added to the pooled covariance, relative to its mean eigenvalue.
    """
    N, d = data.features.shape
    C = data.n_classes
    if C < 2:
        raise SingleClass("canonical covariates need at least two classes")
    if k is None:
        k = C - 1
    if k < 1 or k > C - 1:
        raise TargetTooLarge(f"k={k} must lie in [1, C-1={C - 1}]")
    if r is None:
        r = max(1, min(N - C, d))
    if r > N - 1:
        raise RankDeficient(f"PCA rank r={r} exceeds N-1={N - 1}")
    if r > d:
        raise RankDeficient(f"PCA rank r={r} exceeds feature dimension d={d}")
    if r < k:
        raise TargetTooLarge(f"k={k} exceeds PCA rank r={r}")

    mean = data.features.mean(axis=0)
    Xc = data.features - mean
    # economy SVD keeps min(N, d) >= r right singular vectors
    _, _, Vt = linalg.svd(Xc, full_matrices=False)
    basis = Vt[:r].T
    basis = basis * _column_signs(basis)

    sp = scatter_pair(LabeledDataset(Xc @ basis, data.labels))
    ev, V = whitened_eigh(sp.beta, regularize(sp.sigma, eps))
    ev, V = ev[:k], V[:, :k]
    # sign rule is applied in the original space so it does not depend on PCA conventions
    V = V * _column_signs(basis @ V)
    return CanonicalProjection(mean, basis, V, np.clip(ev, 0.0, None), eps)


def regularize(sigma: np.ndarray, eps: float) -> np.ndarray:
    """Add ``eps * trace(sigma) / r`` to the diagonal (``eps`` alone if the trace is 0)."""
    r = sigma.shape[0]
    scale = np.trace(sigma) / r
    if scale <= 0:
        scale = 1.0
    return sigma + eps * scale * np.eye(r)


def project(x, P: CanonicalProjection) -> np.ndarray:
    return P.transform(x)
