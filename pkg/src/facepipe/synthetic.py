"""Synthetic stand-ins for a multiview face database.

``surrogate_features`` draws feature vectors directly. Every subject owns an
identity mean, a curved pose manifold and a curved expression manifold.
Each image samples a pose angle (near zero for frontal views, large for
left/right), an expression value and noise. As the pose angle grows the
identity blends into a generic profile face shared by all subjects and the
noise grows. Subjects also differ in how much they vary from image to image.

``write_image_dataset`` renders small grayscale faces to disk in the layout
:func:`facepipe.pipeline.ingest` expects.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .preprocess import Image, save_image

POSE_RANGES = {"F": (-0.15, 0.15), "L": (-1.0, -0.6), "R": (0.6, 1.0)}


@dataclass(frozen=True)
class SurrogateParams:
    n_subjects: int = 20
    per_view: int = 12
    dim: int = 60
    identity_scale: float = 1.0
    pose_scale: float = 4.0
    shared_pose: float = 0.6
    expression_scale: float = 8.0
    noise: float = 1.2
    pose_noise: float = 1.5  # extra relative noise at |pose| = 1
    profile_attenuation: float = 0.8  # identity weight handed to the generic profile face at |pose| = 1
    spread_jitter: float = 0.9  # log-sd of the per-subject noise multiplier


@dataclass(frozen=True, eq=False)
class SurrogateSet:
    features: np.ndarray
    subject_ids: np.ndarray
    views: np.ndarray


def surrogate_features(views=("F",), params: SurrogateParams = SurrogateParams(), seed: int = 0) -> SurrogateSet:
    """Draw ``per_view`` samples per subject for each requested view.

    The subject-level structure (identity means, pose manifolds) depends
    only on ``seed``, so the F and F+L+R sets of one seed share subjects.
    """
    p = params
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, p.identity_scale, (p.n_subjects, p.dim))
    # shared pose direction plus per-subject arc (u, v) orthogonal-ish pair
    shared = rng.normal(0.0, 1.0, p.dim)
    shared /= np.linalg.norm(shared)
    u = rng.normal(0.0, 1.0, (p.n_subjects, p.dim))
    v = rng.normal(0.0, 1.0, (p.n_subjects, p.dim))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    v /= np.linalg.norm(v, axis=1, keepdims=True)

    # a generic left / right profile face shared by every subject
    generic = rng.normal(0.0, p.identity_scale, (2, p.dim))
    spread = np.exp(rng.normal(0.0, p.spread_jitter, p.n_subjects))
    eu = rng.normal(0.0, 1.0, (p.n_subjects, p.dim))
    ev = rng.normal(0.0, 1.0, (p.n_subjects, p.dim))
    eu /= np.linalg.norm(eu, axis=1, keepdims=True)
    ev /= np.linalg.norm(ev, axis=1, keepdims=True)

    sample_rng = np.random.default_rng([seed, 1])
    rows, ids, tags = [], [], []
    for s in range(p.n_subjects):
        for view in views:
            lo, hi = POSE_RANGES[view]
            for _ in range(p.per_view):
                a = sample_rng.uniform(lo, hi)
                e = sample_rng.uniform(-1.0, 1.0)
                x = (
                    (1.0 - p.profile_attenuation * abs(a)) * means[s]
                    + p.profile_attenuation * abs(a) * generic[int(a > 0)]
                    + p.shared_pose * a * shared * np.sqrt(p.dim)
                    + p.pose_scale * (np.sin(2.0 * a) * u[s] + (1.0 - np.cos(2.0 * a)) * v[s])
                    + p.expression_scale * (np.sin(np.pi * e) * eu[s] + (1.0 - np.cos(np.pi * e)) * ev[s])
                    + sample_rng.normal(0.0, p.noise * spread[s] * (1.0 + p.pose_noise * abs(a)), p.dim)
                )
                rows.append(x)
                ids.append(f"s{s:02d}")
                tags.append(view)
    return SurrogateSet(np.array(rows), np.array(ids), np.array(tags))


def split_surrogate(data: SurrogateSet, seed: int = 0):
    """Per-subject, per-view half split (extra sample to train)."""
    rng = np.random.default_rng([seed, 2])
    train_idx, test_idx = [], []
    for sid in sorted(set(data.subject_ids.tolist())):
        for view in sorted(set(data.views.tolist())):
            idx = np.flatnonzero((data.subject_ids == sid) & (data.views == view))
            idx = idx[rng.permutation(idx.size)]
            n_train = (idx.size + 1) // 2
            train_idx.extend(sorted(idx[:n_train]))
            test_idx.extend(sorted(idx[n_train:]))
    tr, te = np.array(train_idx), np.array(test_idx)
    return (data.features[tr], data.subject_ids[tr]), (data.features[te], data.subject_ids[te])


# ---------------------------------------------------------------------------
# rendered images


def render_face(rng, identity, pose: float, size=(48, 56), noise: float = 6.0) -> Image:
    """Blob-and-stripe pattern whose layout depends on ``identity`` and shifts with ``pose``."""
    w, h = size
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    img = np.full((h, w), 90.0)
    shift = pose * w * 0.12
    for cx, cy, r, amp in identity["blobs"]:
        img += amp * np.exp(-(((xx - cx * w - shift) ** 2 + (yy - cy * h) ** 2) / (2 * (r * w) ** 2)))
    fx, fy, phase, amp = identity["stripes"]
    img += amp * np.cos(2 * np.pi * (fx * (xx - shift) + fy * yy) + phase)
    img += rng.normal(0.0, noise, img.shape)
    return Image(np.clip(np.rint(img), 0, 255).astype(np.uint8))


def random_identity(rng) -> dict:
    blobs = [
        (rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.06, 0.15), rng.uniform(-80, 80))
        for _ in range(4)
    ]
    stripes = (rng.uniform(0.03, 0.12), rng.uniform(0.03, 0.12), rng.uniform(0, 2 * np.pi), rng.uniform(10, 35))
    return {"blobs": blobs, "stripes": stripes}


def write_image_dataset(
    root,
    n_subjects: int = 4,
    per_view: int = 4,
    views=("F",),
    size=(48, 56),
    seed: int = 0,
    noise: float = 6.0,
    write_views: bool = True,
) -> Path:
    """Render ``root/<subject>/img_<view>_<n>.pgm`` files plus ``views.csv``."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    rows = []
    for s in range(n_subjects):
        ident = random_identity(rng)
        sdir = root / f"s{s:02d}"
        sdir.mkdir(parents=True, exist_ok=True)
        for view in views:
            lo, hi = POSE_RANGES[view]
            for n in range(per_view):
                img = render_face(rng, ident, rng.uniform(lo, hi), size, noise)
                name = f"img_{view}_{n:02d}.pgm"
                save_image(img, sdir / name)
                rows.append((f"s{s:02d}/{name}", view))
    if write_views:
        with open(root / "views.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["image_id", "view"])
            w.writerows(rows)
    return root
