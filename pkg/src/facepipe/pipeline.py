"""Experiment orchestration: ingest -> preprocess -> Gabor -> canonical -> classifier -> metrics."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import logging
import shutil
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evaluation, gabor, knn, serialization, subspace, svm
from .errors import (
    ConfigError,
    CorruptFile,
    EmptyDataset,
    InsufficientImages,
    MissingViewTags,
    NoConvergence,
    UnknownSubject,
)
from .preprocess import CropParams, load_image, preprocess_image, read_eye_annotations

log = logging.getLogger(__name__)

PROTOCOLS = {"F": ("F",), "F+L+R": ("F", "L", "R")}
METHODS = ("svm-rbf", "svm-linear", "nn-euclidean", "nn-cosine")
IMAGE_SUFFIXES = {".pgm", ".png"}


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    dataset_root: str = "data"
    protocol: str = "F"
    frontal_count: int = 6
    left_count: int = 6
    right_count: int = 6
    register: bool = True
    crop_width: int = 200
    crop_height: int = 220
    inter_eye: float = 80.0
    eye_row: float = 70.0
    gabor_frequencies: int = 5
    gabor_orientations: int = 8
    gabor_sigma_factor: float = 0.5
    gabor_literal_frequencies: bool = False
    rho: int = 4
    subspace_r: int = 0  # 0 -> N - C
    subspace_k: int = 0  # 0 -> C - 1
    subspace_eps: float = 1e-4
    method: str = "svm-rbf"
    svm_c: float = 10.0
    svm_sigma: float = 0.0  # 0 -> sqrt(k * mean feature variance)
    svm_tol: float = 1e-3
    svm_max_iter: int = 1_000_000
    svm_grid_c: str = ""  # comma list; empty disables grid search
    svm_grid_sigma: str = ""
    knn_k: int = 1
    seed: int = 0
    workers: int = 1
    output_dir: str = "runs"

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"protocol must be one of {sorted(PROTOCOLS)}, got {self.protocol!r}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        for view in PROTOCOLS[self.protocol]:
            if self.view_count(view) < 2:
                raise ConfigError(f"need at least 2 images per subject for view {view}")
        if self.rho < 1:
            raise ConfigError("rho must be >= 1")

    def view_count(self, view: str) -> int:
        return {"F": self.frontal_count, "L": self.left_count, "R": self.right_count}[view]

    @property
    def views(self) -> tuple[str, ...]:
        return PROTOCOLS[self.protocol]

    @property
    def bank_config(self) -> gabor.BankConfig:
        return gabor.BankConfig(
            n_frequencies=self.gabor_frequencies,
            n_orientations=self.gabor_orientations,
            sigma_factor=self.gabor_sigma_factor,
            literal_frequencies=self.gabor_literal_frequencies,
        )

    @property
    def crop_params(self) -> CropParams:
        return CropParams(self.crop_width, self.crop_height, self.inter_eye, self.eye_row)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        # output location does not change results, so it is excluded from the hash
        text = self.replace(output_dir="").to_text()
        return hashlib.sha256(text.encode()).hexdigest()[:12]

    def run_dir(self) -> Path:
        return Path(self.output_dir) / f"run-{self.digest()}"


def _coerce(name: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    return raw


def parse_config(text: str, **overrides) -> ExperimentConfig:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    defaults = ExperimentConfig.__dataclass_fields__
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in defaults:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw, defaults[key].default)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


def load_config(path, **overrides) -> ExperimentConfig:
    path = Path(path)
    cfg = parse_config(path.read_text(), **overrides)
    root = Path(cfg.dataset_root)
    if not root.is_absolute():
        cfg = cfg.replace(dataset_root=str((path.parent / root).resolve()))
    return cfg


# ---------------------------------------------------------------------------
# dataset


@dataclass(frozen=True)
class ImageEntry:
    subject_id: str
    path: Path
    view: str = "F"
    eyes: object = None

    @property
    def image_id(self) -> str:
        return self.path.name

    @property
    def key(self) -> str:
        return f"{self.subject_id}/{self.path.name}"


@dataclass(frozen=True)
class DatasetManifest:
    subjects: tuple[tuple[str, tuple[ImageEntry, ...]], ...]

    @property
    def entries(self) -> list[ImageEntry]:
        return [e for _, items in self.subjects for e in items]

    @property
    def subject_ids(self) -> list[str]:
        return [s for s, _ in self.subjects]

    def __len__(self):
        return sum(len(items) for _, items in self.subjects)


def _read_views(path: Path) -> dict[str, str]:
    views = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            row = [c.strip() for c in row]
            if not row or row[0].startswith("#") or row[0] == "image_id":
                continue
            if len(row) != 2 or row[1] not in ("F", "L", "R"):
                raise ConfigError(f"{path}: bad row {row}")
            views[row[0]] = row[1]
    return views


def ingest(root, protocol: str = "F") -> DatasetManifest:
    """Scan ``root/<subject_id>/*.{pgm,png}``.

    ``views.csv`` rows are ``<subject_id>/<filename>,<F|L|R>``; untagged images
    are frontal. ``eyes.csv`` rows are ``subject_id,filename,lx,ly,rx,ry``.
    """
    root = Path(root)
    if not root.is_dir():
        raise EmptyDataset(f"{root} is not a directory")
    views_path = root / "views.csv"
    if protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {protocol!r}")
    if len(PROTOCOLS[protocol]) > 1 and not views_path.exists():
        raise MissingViewTags(f"protocol {protocol} needs {views_path}")
    views = _read_views(views_path) if views_path.exists() else {}
    eyes_path = root / "eyes.csv"
    eyes = read_eye_annotations(eyes_path) if eyes_path.exists() else {}

    subjects = []
    for sdir in sorted(p for p in root.iterdir() if p.is_dir()):
        sid = sdir.name
        files = sorted(p for p in sdir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        items = tuple(
            ImageEntry(sid, f, views.get(f"{sid}/{f.name}", "F"), eyes.get((sid, f.name)))
            for f in files
        )
        if items:
            subjects.append((sid, items))
    if not subjects:
        raise EmptyDataset(f"no subject images under {root}")
    return DatasetManifest(tuple(subjects))


def select(manifest: DatasetManifest, config: ExperimentConfig) -> dict[str, dict[str, list[ImageEntry]]]:
    """First ``<view>_count`` images (filename order) of each view the protocol uses."""
    chosen = {}
    for sid, items in manifest.subjects:
        per_view = {}
        for view in config.views:
            tagged = [e for e in items if e.view == view]
            if len(tagged) < 2:
                raise InsufficientImages(f"subject {sid}: {len(tagged)} {view} images, need >= 2")
            per_view[view] = tagged[: config.view_count(view)]
        chosen[sid] = per_view
    return chosen


def split(manifest: DatasetManifest, config: ExperimentConfig):
    """Seeded per-subject, per-view half split; odd counts give the extra image to train."""
    rng = np.random.default_rng(config.seed)
    train, test = [], []
    for sid, per_view in select(manifest, config).items():
        for view in config.views:
            items = per_view[view]
            order = rng.permutation(len(items))
            n_train = (len(items) + 1) // 2
            train.extend(items[i] for i in sorted(order[:n_train]))
            test.extend(items[i] for i in sorted(order[n_train:]))
    return train, test


# ---------------------------------------------------------------------------
# features


def load_preprocessed(entry: ImageEntry, config: ExperimentConfig):
    img = load_image(entry.path)
    eyes = entry.eyes if config.register else None
    if config.register and eyes is None:
        raise InsufficientImages(
            f"{entry.key}: no eye annotation (set register = false for pre-cropped images)"
        )
    return preprocess_image(img, eyes, config.crop_params)


def extract_all(entries, config: ExperimentConfig, bank=None) -> np.ndarray:
    bank = bank or gabor.default_bank(config.bank_config)

    def one(entry):
        return gabor.extract_features(load_preprocessed(entry, config), bank, config.rho)

    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            rows = list(pool.map(one, entries))
    else:
        rows = [one(e) for e in entries]
    return np.vstack(rows)


# ---------------------------------------------------------------------------
# models


@dataclass
class TrainedModel:
    """Projection plus one verifier per enrolled subject."""

    method: str
    projection: subspace.CanonicalProjection
    svms: dict = field(default_factory=dict)
    gallery: knn.Gallery | None = None
    knn_k: int = 1

    @property
    def subjects(self) -> list[str]:
        if self.gallery is not None:
            return self.gallery.subjects
        return sorted(self.svms)

    def score(self, claimed: str, x_reduced) -> float:
        if self.method.startswith("svm"):
            try:
                model = self.svms[claimed]
            except KeyError:
                raise UnknownSubject(f"subject {claimed!r} is not enrolled") from None
            return svm.decision_value(model, x_reduced)
        metric = self.method.split("-", 1)[1]
        return knn.nn_score(self.gallery, x_reduced, claimed, metric, self.knn_k)[0]

    def score_raw(self, claimed: str, features) -> float:
        return self.score(claimed, self.projection.transform(features))


def _floats(csv_list: str) -> list[float]:
    return [float(v) for v in csv_list.split(",") if v.strip()]


def train_method(config: ExperimentConfig, Z: np.ndarray, ids, projection) -> TrainedModel:
    """Train the configured verifier on reduced training vectors ``Z``."""
    ids = np.asarray([str(s) for s in ids], dtype=object)
    model = TrainedModel(config.method, projection, knn_k=config.knn_k)
    if config.method.startswith("nn-"):
        model.gallery = knn.Gallery(zip(ids, Z))
        return model

    if config.method == "svm-linear":
        spec = svm.KernelSpec("linear")
    else:
        sigma = config.svm_sigma or svm.default_rbf_sigma(Z)
        spec = svm.KernelSpec("rbf", sigma=sigma)
    C = config.svm_c
    subjects = sorted(set(ids.tolist()))
    if config.svm_grid_c or config.svm_grid_sigma:
        Cs = _floats(config.svm_grid_c) or [C]
        sigmas = _floats(config.svm_grid_sigma) or [spec.sigma]
        # tune on the first subject's genuine-vs-rest task, reuse for all
        y0 = np.where(ids == subjects[0], 1.0, -1.0)
        (C, sigma), _ = svm.grid_search(Z, y0, Cs, sigmas, seed=config.seed, tol=config.svm_tol)
        if spec.kind == "rbf":
            spec = svm.KernelSpec("rbf", sigma=sigma)

    def one(sid):
        y = np.where(ids == sid, 1.0, -1.0)
        try:
            return sid, svm.train(Z, y, spec, C, config.svm_tol, config.svm_max_iter)
        except NoConvergence as exc:
            # keep the capped solution, as LIBSVM does at its iteration limit
            log.warning("subject %s: %s; using the last iterate", sid, exc)
            return sid, exc.model

    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            model.svms = dict(pool.map(one, subjects))
    else:
        model.svms = dict(one(s) for s in subjects)
    return model


def fit_and_train(config: ExperimentConfig, X_train, train_ids) -> TrainedModel:
    data = subspace.LabeledDataset(X_train, np.asarray([str(s) for s in train_ids]))
    projection = subspace.fit(
        data,
        k=config.subspace_k or None,
        r=config.subspace_r or None,
        eps=config.subspace_eps,
    )
    Z = projection.transform(data.features)
    return train_method(config, Z, data.labels, projection)


def score_probes(model: TrainedModel, X_test, test_ids) -> evaluation.ScoreSet:
    Z = model.projection.transform(X_test)
    return evaluation.build_scores(model.score, zip(test_ids, Z), model.subjects)


def evaluate_features(config: ExperimentConfig, X_train, train_ids, X_test, test_ids):
    """Everything after feature extraction. Returns ``(report, model)``."""
    model = fit_and_train(config, X_train, train_ids)
    scores = score_probes(model, X_test, test_ids)
    report = evaluation.make_report(config.method, config.protocol, scores)
    return report, model


# persistence -----------------------------------------------------------------

MODEL_KIND = "facepipe-model"


def save_model(model: TrainedModel, path) -> None:
    header = {
        "method": model.method,
        "knn_k": model.knn_k,
        "projection": model.projection.header(),
        "subjects": model.subjects,
        "svms": {},
    }
    blocks = {f"projection/{k}": v for k, v in model.projection.blocks().items()}
    for sid, m in sorted(model.svms.items()):
        h = m.to_bytes()
        sub_header, sub_blocks = serialization.unpack(h, "svm")
        header["svms"][sid] = sub_header
        blocks.update({f"svm/{sid}/{k}": v for k, v in sub_blocks.items()})
    if model.gallery is not None:
        header["gallery_ids"] = list(model.gallery.subject_ids)
        blocks["gallery/vectors"] = model.gallery.vectors
    Path(path).write_bytes(serialization.pack(MODEL_KIND, header, blocks))


def load_model(path) -> TrainedModel:
    raw = Path(path).read_bytes()
    header, blocks = serialization.unpack(raw, MODEL_KIND)
    try:
        proj = subspace.CanonicalProjection.from_parts(
            header["projection"],
            {k.split("/", 1)[1]: v for k, v in blocks.items() if k.startswith("projection/")},
        )
        svms = {}
        for sid, h in header["svms"].items():
            prefix = f"svm/{sid}/"
            svms[sid] = svm.SvmModel.from_parts(
                h, {k[len(prefix):]: v for k, v in blocks.items() if k.startswith(prefix)}
            )
        gallery = None
        if "gallery_ids" in header:
            gallery = knn.Gallery.from_arrays(header["gallery_ids"], blocks["gallery/vectors"])
    except (KeyError, ValueError) as exc:
        raise CorruptFile(f"{path}: inconsistent model file ({exc})") from exc
    return TrainedModel(header["method"], proj, svms, gallery, header.get("knn_k", 1))


# ---------------------------------------------------------------------------
# end to end


def run_experiment(config: ExperimentConfig, out_dir=None) -> evaluation.EvalReport:
    """Run the full pipeline and write the report files.

    Files go to ``out_dir`` (default: the config's run directory). They are
    staged in a temporary directory first so that a failed run leaves
    nothing behind.
    """
    out_dir = Path(out_dir) if out_dir is not None else config.run_dir()
    manifest = ingest(config.dataset_root, config.protocol)
    train, test = split(manifest, config)
    log.info("%d train / %d test images", len(train), len(test))
    bank = gabor.default_bank(config.bank_config)
    X_train = extract_all(train, config, bank)
    X_test = extract_all(test, config, bank)
    report, model = evaluate_features(
        config, X_train, [e.subject_id for e in train], X_test, [e.subject_id for e in test]
    )
    write_run(out_dir, config, report, model)
    return report


def write_run(out_dir, config: ExperimentConfig, report, model=None) -> Path:
    out_dir = Path(out_dir)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=out_dir.parent))
    try:
        evaluation.emit_report(report, stage)
        (stage / "config.txt").write_text(config.to_text())
        if model is not None:
            save_model(model, stage / "model.bin")
        out_dir.mkdir(parents=True, exist_ok=True)
        for f in sorted(stage.iterdir()):
            f.replace(out_dir / f.name)
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    return out_dir
