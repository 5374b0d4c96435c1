import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from facepipe.errors import DimensionMismatch, UnknownSubject, ZeroVector
from facepipe.knn import Gallery, distance, nn_score, scorer

vec3 = arrays(np.float64, 3, elements=st.floats(-100, 100))


def test_examples_from_hand_distances():
    g = Gallery([("A", (0, 0)), ("B", (10, 0))])
    score, best = nn_score(g, (1, 0), "A")
    assert best == "A" and score == -1.0
    assert nn_score(g, (1, 0), "B")[0] == -9.0


def test_probe_equal_to_template():
    g = Gallery([("A", (3, 4)), ("B", (0, 0))])
    score, best = nn_score(g, (3, 4), "A")
    assert score == 0.0 and best == "A"


def test_tie_goes_to_smaller_subject_id():
    g = Gallery([("B", (1, 0)), ("A", (-1, 0))])
    assert nn_score(g, (0, 0), "B")[1] == "A"


def test_tie_within_subject_uses_template_index():
    g = Gallery([("A", (1, 0)), ("A", (-1, 0)), ("B", (5, 0))])
    assert nn_score(g, (0, 0), "A") == (-1.0, "A")


def test_unknown_subject():
    g = Gallery([("A", (0, 0))])
    with pytest.raises(UnknownSubject):
        nn_score(g, (0, 0), "Z")


def test_dimension_mismatch():
    g = Gallery([("A", (0, 0))])
    with pytest.raises(DimensionMismatch):
        nn_score(g, (0, 0, 0), "A")
    with pytest.raises(DimensionMismatch):
        Gallery([("A", (0, 0)), ("B", (0, 0, 0))])


def test_empty_gallery_rejected():
    with pytest.raises(ValueError):
        Gallery([])


def test_cosine_zero_vector():
    with pytest.raises(ZeroVector):
        distance("cosine", (0, 0), (1, 0))
    g = Gallery([("A", (1, 0))])
    with pytest.raises(ZeroVector):
        nn_score(g, (0, 0), "A", metric="cosine")


def test_cosine_examples():
    assert distance("cosine", (1, 0), (0, 1)) == pytest.approx(1.0)
    assert distance("cosine", (1, 0), (-1, 0)) == pytest.approx(2.0)
    assert distance("cosine", (1, 1), (2, 2)) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("metric", ["euclidean", "cosine"])
@given(vec3, vec3)
def test_identity_and_symmetry(metric, a, b):
    if metric == "cosine" and min(np.linalg.norm(a), np.linalg.norm(b)) < 1e-6:
        return
    assert distance(metric, a, a) == pytest.approx(0.0, abs=1e-12)
    assert distance(metric, a, b) == pytest.approx(distance(metric, b, a), abs=1e-12)


@given(vec3, vec3, vec3)
def test_triangle_inequality(a, b, c):
    assert distance("euclidean", a, c) <= distance("euclidean", a, b) + distance("euclidean", b, c) + 1e-9


@given(vec3, vec3, st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_cosine_scale_invariance(a, b, s, t):
    if np.linalg.norm(a) < 1e-3 or np.linalg.norm(b) < 1e-3:
        return
    assert distance("cosine", s * a, t * b) == pytest.approx(distance("cosine", a, b), abs=1e-12)


def loops_nn(templates, probe, claimed, metric):
    best_own = math.inf
    best = None
    for idx, (sid, v) in enumerate(templates):
        d = distance(metric, v, probe)
        if sid == claimed:
            best_own = min(best_own, d)
        key = (d, sid, idx)
        if best is None or key < best:
            best = key
    return -best_own, best[1]


@pytest.mark.parametrize("metric", ["euclidean", "cosine"])
@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_agrees_with_double_loop(metric, seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 51))
    ids = [f"s{int(i)}" for i in rng.integers(0, 6, n)]
    # small integer grid makes exact ties common
    vecs = rng.integers(-2, 3, (n, 2)).astype(float)
    if metric == "cosine":
        vecs[~vecs.any(axis=1)] = (1.0, 0.0)
    templates = list(zip(ids, vecs))
    g = Gallery(templates)
    probe = rng.integers(-2, 3, 2).astype(float)
    if metric == "cosine" and not probe.any():
        probe[0] = 1.0
    claimed = ids[int(rng.integers(n))]
    got = nn_score(g, probe, claimed, metric)
    want = loops_nn(templates, probe, claimed, metric)
    assert got[1] == want[1]
    assert got[0] == pytest.approx(want[0], abs=1e-12)


def test_k_greater_than_one_averages_own_distances():
    g = Gallery([("A", (1, 0)), ("A", (3, 0)), ("B", (2, 0)), ("B", (2.5, 0))])
    score, best = nn_score(g, (0, 0), "A", k=2)
    assert score == pytest.approx(-2.0)
    # nearest two are A(1) and B(2): one vote each, A is closer
    assert best == "A"
    score, best = nn_score(g, (2.2, 0), "B", k=3)
    assert best == "B"


def test_scorer_adapter():
    g = Gallery.from_arrays(["A", "B"], np.array([[0.0, 0.0], [10.0, 0.0]]))
    f = scorer(g, "euclidean")
    assert f("B", np.array([1.0, 0.0])) == -9.0
    assert g.subjects == ["A", "B"] and g.dim == 2 and len(g) == 2
