"""Verification metrics: FAR/FRR sweeps, equal error rate and report files.

All rates are percentages. A trial is accepted when its score is at least
the threshold, so higher scores must mean "more genuine".
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, NamedTuple

import numpy as np

from .errors import EmptyScores, NoCrossing, UnknownSubject


@dataclass(frozen=True, eq=False)
class ScoreSet:
    genuine: np.ndarray
    impostor: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.genuine, dtype=np.float64).ravel()
        i = np.asarray(self.impostor, dtype=np.float64).ravel()
        if g.size == 0 or i.size == 0:
            raise EmptyScores("both genuine and impostor scores are required")
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(i))):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "genuine", g)
        object.__setattr__(self, "impostor", i)

    def map(self, fn) -> "ScoreSet":
        return ScoreSet(fn(self.genuine), fn(self.impostor))


class CurvePoint(NamedTuple):
    threshold: float
    far: float
    frr: float


class EerPoint(NamedTuple):
    eer: float
    threshold: float
    crossed: bool = True


def sweep_thresholds(scores: ScoreSet) -> np.ndarray:
    """Midpoints between consecutive distinct pooled scores, bracketed by -inf and +inf."""
    pooled = np.unique(np.concatenate([scores.genuine, scores.impostor]))
    mids = (pooled[:-1] + pooled[1:]) / 2
    return np.concatenate([[-np.inf], mids, [np.inf]])


def far_frr_curve(scores: ScoreSet, thresholds=None) -> list[CurvePoint]:
    if thresholds is None:
        thresholds = sweep_thresholds(scores)
    t = np.asarray(thresholds, dtype=np.float64)
    if np.any(np.diff(t) < 0):
        raise ValueError("thresholds must be sorted ascending")
    imp = np.sort(scores.impostor)
    gen = np.sort(scores.genuine)
    # impostors with score >= t, genuines with score < t
    n_fa = imp.size - np.searchsorted(imp, t, side="left")
    n_fr = np.searchsorted(gen, t, side="left")
    far = 100.0 * n_fa / imp.size
    frr = 100.0 * n_fr / gen.size
    return [CurvePoint(float(a), float(b), float(c)) for a, b, c in zip(t, far, frr)]


def eer(curve: Iterable[CurvePoint]) -> EerPoint:
    """Equal error rate from a threshold-ordered curve.

    Between the last point with FAR > FRR and the first with FAR <= FRR,
    both rates are interpolated linearly along the segment joining the two
    points; the EER is their common value there. The threshold is
    interpolated the same way (the finite end is used if the other is
    infinite). If the curve never crosses, the midpoint of the closest
    approach is returned with ``crossed=False``.
    """
    pts = list(curve)
    if not pts:
        raise EmptyScores("empty curve")
    gap = [p.far - p.frr for p in pts]
    for idx, g in enumerate(gap):
        if g == 0:
            p = pts[idx]
            return EerPoint(p.far, p.threshold)
        if g < 0:
            if idx == 0:
                break
            a, b = pts[idx - 1], pts[idx]
            s = gap[idx - 1] / (gap[idx - 1] - g)
            far = a.far + s * (b.far - a.far)
            frr = a.frr + s * (b.frr - a.frr)
            return EerPoint((far + frr) / 2, _lerp(a.threshold, b.threshold, s))
    best = min(range(len(pts)), key=lambda t: abs(gap[t]))
    p = pts[best]
    return EerPoint((p.far + p.frr) / 2, p.threshold, crossed=False)


def eer_strict(curve) -> EerPoint:
    """Like :func:`eer` but raise :class:`NoCrossing` instead of flagging."""
    res = eer(curve)
    if not res.crossed:
        raise NoCrossing(f"FAR and FRR never cross; closest approach {res.eer:.4f}%")
    return res


def _lerp(a: float, b: float, s: float) -> float:
    if math.isinf(a) and math.isinf(b):
        return a if s < 0.5 else b
    if math.isinf(a):
        return b
    if math.isinf(b):
        return a
    return a + s * (b - a)


def compute_eer(scores: ScoreSet) -> EerPoint:
    return eer(far_frr_curve(scores))


def operating_point(curve, eer_value: float) -> CurvePoint:
    """Curve point closest (Euclidean, in FAR/FRR space) to ``(eer, eer)``.

    Ties go to the lower threshold.
    """
    pts = list(curve)
    return min(pts, key=lambda p: (p.far - eer_value) ** 2 + (p.frr - eer_value) ** 2)


# ---------------------------------------------------------------------------
# trial generation


def build_scores(
    score_fn: Callable[[str, np.ndarray], float],
    probes,
    enrolled: Iterable[str],
) -> ScoreSet:
    """One genuine and ``S - 1`` impostor trials per probe.

    ``probes`` yields ``(true_subject_id, vector)``; ``score_fn(claimed, x)``
    returns a score where higher means more genuine.
    """
    enrolled = sorted(set(map(str, enrolled)))
    known = set(enrolled)
    genuine, impostor = [], []
    for true_id, x in probes:
        true_id = str(true_id)
        if true_id not in known:
            raise UnknownSubject(f"probe subject {true_id!r} is not enrolled")
        for claim in enrolled:
            s = float(score_fn(claim, x))
            (genuine if claim == true_id else impostor).append(s)
    return ScoreSet(genuine, impostor)


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class EvalReport:
    method: str
    protocol: str
    frr_at_eer: float
    far_at_eer: float
    eer: float
    recognition_rate: float
    eer_threshold: float
    curve: tuple[CurvePoint, ...] = field(repr=False)
    n_genuine: int = 0
    n_impostor: int = 0

    @property
    def label(self) -> str:
        return f"{self.method} ({self.protocol})"


def make_report(method: str, protocol: str, scores: ScoreSet) -> EvalReport:
    curve = far_frr_curve(scores)
    res = eer(curve)
    op = operating_point(curve, res.eer)
    return EvalReport(
        method=method,
        protocol=protocol,
        frr_at_eer=op.frr,
        far_at_eer=op.far,
        eer=res.eer,
        recognition_rate=100.0 - res.eer,
        eer_threshold=res.threshold,
        curve=tuple(curve),
        n_genuine=scores.genuine.size,
        n_impostor=scores.impostor.size,
    )


def _pct(v: float) -> str:
    return f"{v:.4f}"


def report_stem(report: EvalReport) -> str:
    return f"{report.method}_{report.protocol}"


def emit_report(report: EvalReport, out_dir) -> list[Path]:
    """Write ROC, DET and summary CSVs; existing files are overwritten."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = report_stem(report)
    roc = out_dir / f"{stem}_roc.csv"
    det = out_dir / f"{stem}_det.csv"
    summary = out_dir / f"{stem}_summary.csv"

    with open(roc, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["far_percent", "gar_percent"])
        for p in report.curve:
            w.writerow([_pct(p.far), _pct(100.0 - p.frr)])
    with open(det, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["far_percent", "frr_percent"])
        for p in report.curve:
            w.writerow([_pct(p.far), _pct(p.frr)])
    write_summary([report], summary)
    return [roc, det, summary]


SUMMARY_HEADER = ["method", "frr_percent", "far_percent", "recognition_rate_percent", "eer_percent"]


def write_summary(reports, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for r in reports:
            w.writerow(
                [
                    r.label,
                    _pct(r.frr_at_eer),
                    _pct(r.far_at_eer),
                    # derived from the printed EER so the two columns sum to 100 exactly
                    _pct(100.0 - round(r.eer, 4)),
                    _pct(r.eer),
                ]
            )
    return path
