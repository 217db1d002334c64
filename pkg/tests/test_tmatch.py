import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import cc_oracle
from sonarp.tmatch import (DegenerateInputError, TemplateSet, cc_similarity, similarity_matrix, sliding_cc,
                           sqd_similarity, tm_classify, tm_objectness_map)

rng0 = np.random.default_rng(0)


def test_cc_identity_and_negation():
    i = rng0.random((12, 12))
    assert cc_similarity(i, i) == pytest.approx(1.0)
    assert cc_similarity(-i + 2 * i.mean(), i) == pytest.approx(-1.0)


def test_cc_vs_loop_oracle():
    rng = np.random.default_rng(1)
    for _ in range(10):
        t, i = rng.random((8, 8)), rng.random((8, 8))
        assert abs(cc_similarity(t, i) - cc_oracle(t, i)) < 1e-6


def test_cc_errors():
    with pytest.raises(DegenerateInputError):
        cc_similarity(np.ones((4, 4)), rng0.random((4, 4)))
    with pytest.raises(ValueError):
        cc_similarity(np.ones((4, 4)), np.ones((4, 5)))


@settings(max_examples=40)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 10), st.floats(-5, 5))
def test_cc_range_and_affine_invariance(seed, a, b):
    rng = np.random.default_rng(seed)
    t, i = rng.random((6, 6)), rng.random((6, 6))
    v = cc_similarity(t, i)
    assert -1 <= v <= 1
    assert cc_similarity(t, a * i + b) == pytest.approx(v, abs=1e-5)


def test_sqd():
    t = rng0.random((5, 5))
    assert sqd_similarity(t, t) == 0
    assert sqd_similarity(t, t + 1) == pytest.approx(1.0)
    u = rng0.random((5, 5))
    assert sqd_similarity(t, u) == sqd_similarity(u, t)


def make_set(rng, classes=3, per=4, size=8):
    protos = rng.random((classes, size, size))
    patches = np.concatenate([protos[c] + 0.05 * rng.random((per, size, size)) for c in range(classes)])
    return TemplateSet(patches, np.repeat(np.arange(classes), per)), protos


def test_classify_stored_template():
    ts, _ = make_set(np.random.default_rng(2))
    for metric in ("cc", "sqd"):
        assert tm_classify(ts.patches[5], ts, metric) == ts.labels[5]


def test_classify_single_class():
    ts = TemplateSet(rng0.random((3, 6, 6)), [4, 4, 4])
    assert set(tm_classify(rng0.random((10, 6, 6)), ts)) == {4}


def test_classify_vs_scan_oracle():
    rng = np.random.default_rng(3)
    ts, protos = make_set(rng)
    q = protos[rng.integers(0, 3, 20)] + 0.3 * rng.random((20, 8, 8))
    for metric, pick in (("cc", max), ("sqd", min)):
        fn = cc_oracle if metric == "cc" else sqd_similarity
        for qi, lab in zip(q, tm_classify(q, ts, metric)):
            scores = [fn(t, qi) for t in ts.patches]
            best = scores.index(pick(scores))
            assert lab == ts.labels[best]


def test_classify_ties_lowest_index():
    p = rng0.random((6, 6))
    ts = TemplateSet(np.stack([p, p]), [7, 3])
    assert tm_classify(p, ts, "cc") == 7
    assert tm_classify(p, ts, "sqd") == 7


def test_sqd_order_invariance():
    rng = np.random.default_rng(4)
    ts, protos = make_set(rng)
    q = protos[[0, 1, 2]] + 0.2 * rng.random((3, 8, 8))
    perm = rng.permutation(len(ts))
    ts2 = TemplateSet(ts.patches[perm], ts.labels[perm])
    assert tm_classify(q, ts, "sqd").tolist() == tm_classify(q, ts2, "sqd").tolist()


def test_degenerate_templates():
    ts = TemplateSet(np.stack([np.ones((4, 4)), rng0.random((4, 4))]), [0, 1])
    assert tm_classify(rng0.random((4, 4)), ts) == 1
    with pytest.raises(DegenerateInputError):
        tm_classify(rng0.random((4, 4)), TemplateSet(np.ones((1, 4, 4)), [0]))
    with pytest.raises(ValueError):
        tm_classify(rng0.random((4, 4)), TemplateSet(np.zeros((0, 4, 4)), []))


def test_more_templates_never_hurt_training_accuracy():
    rng = np.random.default_rng(5)
    patches = rng.random((30, 6, 6))
    labels = rng.integers(0, 3, 30)
    accs = []
    for n in (3, 10, 20, 30):
        ts = TemplateSet(patches[:n], labels[:n])
        accs.append(np.mean(tm_classify(patches, ts, "sqd") == labels))
    assert accs == sorted(accs)


def test_template_sampling():
    labels = np.repeat([0, 1, 2], 5)
    ts = TemplateSet.sample(rng0.random((15, 4, 4)), labels, 3, np.random.default_rng(0))
    assert np.bincount(ts.labels).tolist() == [3, 3, 3]
    with pytest.raises(ValueError):
        TemplateSet.sample(rng0.random((15, 4, 4)), labels, 6, np.random.default_rng(0))


def test_similarity_matrix_matches_pairwise():
    rng = np.random.default_rng(6)
    ts, _ = make_set(rng)
    q = rng.random((4, 8, 8))
    s = similarity_matrix(q, ts, "sqd")
    for a in range(4):
        for b in range(len(ts)):
            assert s[a, b] == pytest.approx(sqd_similarity(ts.patches[b], q[a]))


def test_sliding_cc_vs_naive():
    rng = np.random.default_rng(7)
    frame, t = rng.random((20, 24)), rng.random((2, 6, 5))
    out = sliding_cc(frame, t)
    assert out.shape == (2, 15, 20)
    for k in range(2):
        for y in range(0, 15, 3):
            for x in range(0, 20, 4):
                assert out[k, y, x] == pytest.approx(cc_oracle(t[k], frame[y:y + 6, x:x + 5]), abs=1e-8)


def test_sliding_cc_flat_window_scores_zero():
    frame = np.zeros((10, 10))
    frame[5:, 5:] = rng0.random((5, 5))
    assert sliding_cc(frame, rng0.random((4, 4)))[0, 0, 0] == 0.0
    with pytest.raises(ValueError):
        sliding_cc(np.zeros((3, 3)), np.zeros((4, 4)))


def test_tm_objectness_map():
    rng = np.random.default_rng(8)
    frame = rng.random((30, 30))
    t = frame[10:18, 4:12].copy()
    m = tm_objectness_map(frame, np.stack([t, rng.random((8, 8))]), n=None)
    assert m.values[10, 4] == pytest.approx(1.0)
    assert m.values.min() >= 0 and m.values.max() <= 1
    single = tm_objectness_map(frame, t[None], n=1).values
    np.testing.assert_allclose(single, np.clip(sliding_cc(frame, t)[0], 0, 1))
