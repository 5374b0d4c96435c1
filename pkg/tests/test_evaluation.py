import math
import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facepipe import evaluation as ev
from facepipe.errors import EmptyScores, NoCrossing, UnknownSubject
from facepipe.evaluation import CurvePoint, ScoreSet, compute_eer, far_frr_curve, make_report

from oracles import eer_bruteforce

scores_list = st.lists(st.integers(-5, 5).map(float), min_size=1, max_size=10)


def test_threshold_extremes():
    s = ScoreSet([0.8, 0.6], [0.4, 0.2])
    lo, hi = far_frr_curve(s, [-10.0, 10.0])
    assert (lo.far, lo.frr) == (100.0, 0.0)
    assert (hi.far, hi.frr) == (0.0, 100.0)


def test_hand_counted_point():
    (p,) = far_frr_curve(ScoreSet([0.8, 0.6], [0.4, 0.2]), [0.5])
    assert (p.far, p.frr) == (0.0, 0.0)


def test_accept_includes_equality():
    (p,) = far_frr_curve(ScoreSet([1.0], [1.0]), [1.0])
    assert (p.far, p.frr) == (100.0, 0.0)


def test_eer_examples():
    assert compute_eer(ScoreSet([0.8, 0.6], [0.4, 0.2])).eer == 0.0
    assert compute_eer(ScoreSet([0.6, 0.2], [0.8, 0.4])).eer == 50.0
    same = [0.1, 0.5, 0.9]
    assert compute_eer(ScoreSet(same, same)).eer == 50.0


def test_eer_interpolates_within_segment():
    # curve (FAR, FRR): (100, 0) (50, 0) (50, 100/3) (0, 100/3) ...; crossing inside the flat FRR segment
    s = ScoreSet([1.0, 3.0, 4.0], [0.0, 2.0])
    res = compute_eer(s)
    assert res.eer == pytest.approx(100 / 3)
    assert res.eer == pytest.approx(eer_bruteforce(s.genuine, s.impostor), abs=1e-12)


def test_empty_scores():
    with pytest.raises(EmptyScores):
        ScoreSet([], [1.0])
    with pytest.raises(EmptyScores):
        ScoreSet([1.0], [])
    with pytest.raises(ValueError):
        ScoreSet([math.nan], [1.0])


def test_unsorted_thresholds_rejected():
    with pytest.raises(ValueError):
        far_frr_curve(ScoreSet([1.0], [0.0]), [1.0, 0.0])


def test_no_crossing_flagged():
    # a restricted threshold set can miss the crossing entirely
    curve = far_frr_curve(ScoreSet([1.0, 2.0], [0.0, 0.5]), [-5.0, -4.0])
    res = ev.eer(curve)
    assert not res.crossed and res.eer == 50.0
    with pytest.raises(NoCrossing):
        ev.eer_strict(curve)


@given(scores_list, scores_list)
def test_curve_monotone(g, i):
    curve = far_frr_curve(ScoreSet(g, i))
    far = [p.far for p in curve]
    frr = [p.frr for p in curve]
    assert all(a >= b for a, b in zip(far, far[1:]))
    assert all(a <= b for a, b in zip(frr, frr[1:]))
    assert all(0 <= v <= 100 for v in far + frr)


@given(scores_list, scores_list)
@settings(max_examples=200)
def test_matches_bruteforce(g, i):
    assert compute_eer(ScoreSet(g, i)).eer == pytest.approx(eer_bruteforce(g, i), abs=1e-9)


@given(
    st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=10),
    st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=10),
    st.sampled_from([np.exp, np.arctan, lambda x: 3 * x + 7, lambda x: np.cbrt(x)]),
)
def test_eer_invariant_under_monotone_transform(g, i, fn):
    s = ScoreSet(np.asarray(g) / 100, np.asarray(i) / 100)
    t = s.map(fn)
    # strictly increasing maps must not merge distinct scores
    if np.unique(np.concatenate([t.genuine, t.impostor])).size != np.unique(
        np.concatenate([s.genuine, s.impostor])
    ).size:
        return
    assert compute_eer(t).eer == pytest.approx(compute_eer(s).eer, abs=1e-9)


@given(scores_list, scores_list, st.data())
def test_duplicate_genuine_bound(g, i, data):
    k = data.draw(st.integers(0, len(g) - 1))
    before = compute_eer(ScoreSet(g, i)).eer
    after = compute_eer(ScoreSet(g + [g[k]], i)).eer
    assert abs(after - before) <= 100.0 / len(g) + 1e-9


@given(scores_list, scores_list)
def test_eer_within_curve_range(g, i):
    rep = make_report("m", "F", ScoreSet(g, i))
    assert 0.0 <= rep.eer <= 100.0
    assert rep.recognition_rate == pytest.approx(100.0 - rep.eer)
    assert ev.operating_point(rep.curve, rep.eer) in rep.curve


def test_operating_point_nearest():
    curve = [CurvePoint(0, 100, 0), CurvePoint(1, 40, 20), CurvePoint(2, 0, 100)]
    assert ev.operating_point(curve, 30.0).threshold == 1


def test_build_scores_counts():
    probes = [(s, np.zeros(1)) for s in ("A", "B") for _ in range(3)]
    s = ev.build_scores(lambda claim, x: 0.0, probes, ["A", "B"])
    assert s.genuine.size == 6 and s.impostor.size == 6
    assert compute_eer(s).eer == 50.0


def test_build_scores_perfect_scorer():
    probes = [(s, np.array([float(ord(s))])) for s in "ABC" for _ in range(2)]
    s = ev.build_scores(lambda claim, x: 1.0 if ord(claim) == x[0] else -1.0, probes, "ABC")
    assert s.genuine.size == 6 and s.impostor.size == 12
    assert compute_eer(s).eer == 0.0


def test_build_scores_unknown_probe():
    with pytest.raises(UnknownSubject):
        ev.build_scores(lambda c, x: 0.0, [("Z", np.zeros(1))], ["A"])


def test_emit_report_files(tmp_path):
    rep = make_report("svm-rbf", "F", ScoreSet([2.0], [1.0]))
    assert len(rep.curve) == 3
    paths = ev.emit_report(rep, tmp_path)
    assert [p.name for p in paths] == ["svm-rbf_F_roc.csv", "svm-rbf_F_det.csv", "svm-rbf_F_summary.csv"]
    roc = paths[0].read_text().splitlines()
    assert roc[0] == "far_percent,gar_percent" and len(roc) == 4
    assert roc[1:] == ["100.0000,100.0000", "0.0000,100.0000", "0.0000,0.0000"]
    det = paths[1].read_text().splitlines()
    assert det[0] == "far_percent,frr_percent" and len(det) == 4
    summary = paths[2].read_text().splitlines()
    assert summary == [",".join(ev.SUMMARY_HEADER), "svm-rbf (F),0.0000,0.0000,100.0000,0.0000"]


def test_emit_report_overwrites_identically(tmp_path):
    rng = np.random.default_rng(0)
    rep = make_report("nn-cosine", "F+L+R", ScoreSet(rng.normal(1, 1, 40), rng.normal(0, 1, 200)))
    first = [p.read_bytes() for p in ev.emit_report(rep, tmp_path)]
    (tmp_path / "nn-cosine_F+L+R_roc.csv").write_text("junk")
    second = [p.read_bytes() for p in ev.emit_report(rep, tmp_path)]
    assert first == second


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=30), st.lists(st.floats(-50, 50), min_size=1, max_size=30))
@settings(deadline=None)
def test_summary_columns_sum_to_hundred(g, i):
    rep = make_report("m", "F", ScoreSet(g, i))
    with tempfile.TemporaryDirectory() as d:
        row = (ev.write_summary([rep], Path(d) / "s.csv")).read_text().splitlines()[1].split(",")
    rr, e = float(row[3]), float(row[4])
    assert round(rr + e, 4) == 100.0
