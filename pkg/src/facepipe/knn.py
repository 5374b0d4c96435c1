"""Nearest-neighbour verification baselines (Euclidean and cosine)."""

from __future__ import annotations

from collections import Counter

import numpy as np

from .errors import DimensionMismatch, UnknownSubject, ZeroVector

METRICS = ("euclidean", "cosine")


def distance(metric: str, a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.size} vs {b.size}")
    if metric == "euclidean":
        return float(np.linalg.norm(a - b))
    if metric == "cosine":
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0 or nb == 0:
            raise ZeroVector("cosine distance is undefined for a zero vector")
        return float(1.0 - (a @ b) / (na * nb))
    raise ValueError(f"unknown metric {metric!r}")


def distances(metric: str, templates: np.ndarray, probe: np.ndarray) -> np.ndarray:
    """Distance from ``probe`` to every row of ``templates``."""
    if metric == "euclidean":
        return np.linalg.norm(templates - probe, axis=1)
    if metric == "cosine":
        nt = np.linalg.norm(templates, axis=1)
        npr = np.linalg.norm(probe)
        if npr == 0 or np.any(nt == 0):
            raise ZeroVector("cosine distance is undefined for a zero vector")
        return 1.0 - (templates @ probe) / (nt * npr)
    raise ValueError(f"unknown metric {metric!r}")


class Gallery:
    """Enrolled templates; immutable after construction."""

    def __init__(self, templates):
        templates = list(templates)
        if not templates:
            raise ValueError("gallery must hold at least one template")
        self.subject_ids = tuple(str(sid) for sid, _ in templates)
        vecs = [np.asarray(v, dtype=np.float64).ravel() for _, v in templates]
        if len({v.size for v in vecs}) != 1:
            raise DimensionMismatch("gallery templates differ in dimension")
        self.vectors = np.vstack(vecs)
        self.vectors.setflags(write=False)
        self._ids = np.asarray(self.subject_ids, dtype=object)
        # integer rank of each template's subject id, for vectorized tie-breaking
        self._rank = np.searchsorted(np.asarray(self.subjects), np.asarray(self.subject_ids))

    @classmethod
    def from_arrays(cls, subject_ids, vectors) -> "Gallery":
        return cls(zip(subject_ids, np.atleast_2d(vectors)))

    def __len__(self):
        return len(self.subject_ids)

    @property
    def subjects(self) -> list[str]:
        return sorted(set(self.subject_ids))

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def nn_score(gallery: Gallery, probe, claimed_subject, metric: str = "euclidean", k: int = 1):
    """Score a claim against the gallery.

    Returns ``(score, best_match)``. ``score`` is minus the mean of the ``k``
    smallest distances to the claimed subject's templates, so larger means
    more genuine. ``best_match`` is the majority subject among the ``k``
    nearest templates overall; distance ties go to the lower subject id,
    then the lower template index.
    """
    probe = np.asarray(probe, dtype=np.float64).ravel()
    if probe.size != gallery.dim:
        raise DimensionMismatch(f"gallery dim {gallery.dim}, probe dim {probe.size}")
    claimed = str(claimed_subject)
    mask = gallery._ids == claimed
    if not mask.any():
        raise UnknownSubject(f"subject {claimed!r} is not enrolled")
    d = distances(metric, gallery.vectors, probe)
    own = np.sort(d[mask])[:k]
    score = -float(own.mean())

    # lexsort keys run from least to most significant: index, subject id, distance
    order = np.lexsort((np.arange(d.size), gallery._rank, d))[:k]
    votes = Counter(gallery.subject_ids[t] for t in order)
    top = max(votes.values())
    best = next(gallery.subject_ids[t] for t in order if votes[gallery.subject_ids[t]] == top)
    return score, best


def scorer(gallery: Gallery, metric: str = "euclidean", k: int = 1):
    """Adapt :func:`nn_score` to the ``(claimed_id, vector) -> score`` interface."""

    def score(claimed_id, x):
        return nn_score(gallery, x, claimed_id, metric, k)[0]

    return score
