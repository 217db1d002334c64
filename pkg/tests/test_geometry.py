import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import label_oracle, nms_oracle, pixel_iou, random_boxes
from sonarp.geometry import (BoundingBox, ObjectnessMap, iou, iou_matrix, label_windows, nms,
                             objectness_label, read_proposals, select_by_threshold, select_top_k,
                             sliding_windows, write_proposals)

B = BoundingBox


def boxes_st(max_side=30, canvas=60):
    return st.builds(lambda x, y, w, h: B(x, y, w, h),
                     st.integers(0, canvas), st.integers(0, canvas),
                     st.integers(1, max_side), st.integers(1, max_side))


def test_box_invariants():
    with pytest.raises(ValueError):
        B(0, 0, 0, 5)
    with pytest.raises(ValueError):
        B(0, 0, 5, 5, score=1.5)
    assert B(2, 3, 4, 6).area == 24


def test_iou_half_overlap_is_one_third():
    assert iou(B(0, 0, 96, 96), B(48, 0, 96, 96)) == pytest.approx(4608 / 13824)
    assert pixel_iou(B(0, 0, 96, 96), B(48, 0, 96, 96)) == pytest.approx(1 / 3)


def test_iou_trivial():
    a = B(5, 5, 10, 10)
    assert iou(a, a) == 1.0
    assert iou(a, B(15, 5, 10, 10)) == 0.0


@given(boxes_st(), boxes_st())
def test_iou_properties(a, b):
    v = iou(a, b)
    assert 0 <= v <= 1
    assert v == iou(b, a)
    assert iou_matrix([a], [b])[0, 0] == pytest.approx(v)


def test_iou_matches_pixel_count():
    rng = np.random.default_rng(0)
    bs = random_boxes(rng, 30)
    m = iou_matrix(bs, bs)
    for i in range(30):
        for j in range(30):
            assert m[i, j] == pytest.approx(pixel_iou(bs[i], bs[j], 40), abs=1e-12)


@pytest.mark.parametrize("v,expected", [(0.85, 1.0), (0.15, 0.0), (0.5, 0.5), (0.8, 1.0), (0.2, 0.0)])
def test_objectness_label_branches(v, expected):
    assert objectness_label(v, 0.2) == expected


@pytest.mark.parametrize("eps", [0.0, 0.5, -0.1])
def test_objectness_label_eps_range(eps):
    with pytest.raises(ValueError):
        objectness_label(0.3, eps)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0.01, 0.49))
def test_objectness_label_monotone(a, b, eps):
    lo, hi = sorted((a, b))
    assert objectness_label(lo, eps) <= objectness_label(hi, eps)


def test_sliding_windows_full_grid():
    wins = sliding_windows((320, 480))
    assert len(wins) == 29 * 49 == 1421
    assert (wins[0].x, wins[0].y, wins[1].x) == (0, 0, 8)
    assert wins[-1].x == 480 - 96 and wins[-1].y == 320 - 96


def test_sliding_windows_masks():
    assert sliding_windows((200, 200), np.zeros((200, 200), bool)) == []
    wins = sliding_windows((200, 300), np.ones((200, 300), bool), stride=104)
    assert [(w.x, w.y) for w in wins] == [(0, 0), (104, 0), (0, 104), (104, 104)]
    wins = sliding_windows((200, 300), np.ones((200, 300), bool), stride=300 - 96)
    assert len(wins) == 2


def test_sliding_windows_corner_rule():
    mask = np.ones((96, 104), bool)
    mask[95, 0] = False
    wins = sliding_windows((96, 104), mask)
    assert [(w.x, w.y) for w in wins] == [(8, 0)]


def test_sliding_windows_errors():
    with pytest.raises(ValueError):
        sliding_windows((90, 200))
    with pytest.raises(ValueError):
        sliding_windows((100, 100), np.ones((50, 50), bool))


def test_label_windows():
    wins = [B(0, 0, 10, 10), B(20, 20, 10, 10)]
    assert label_windows(wins, []).tolist() == [0.0, 0.0]
    assert label_windows(wins, [B(0, 0, 10, 10)]).tolist() == [1.0, 0.0]


def test_label_windows_vs_oracle():
    rng = np.random.default_rng(1)
    for _ in range(10):
        wins, gt = random_boxes(rng, 25), random_boxes(rng, 3)
        np.testing.assert_allclose(label_windows(wins, gt), label_oracle(wins, gt, 0.2), atol=1e-12)


def test_selection():
    s = [B(0, 0, 5, 5, score=v) for v in (0.3, 0.9, 0.3, 1.0)]
    assert select_by_threshold(s, 0.0) == s
    assert select_by_threshold(s, np.nextafter(1.0, 2)) == []
    assert select_by_threshold(s, 1.0) == [s[3]]
    assert select_top_k(s, 10) == [s[3], s[1], s[0], s[2]]
    assert select_top_k(s, 3)[2] is s[0]
    with pytest.raises(ValueError):
        select_top_k(s, -1)
    with pytest.raises(ValueError):
        select_by_threshold([B(0, 0, 5, 5)], 0.5)


@settings(max_examples=50)
@given(st.lists(st.integers(0, 10), min_size=1, max_size=30), st.integers(0, 30), st.integers(0, 30))
def test_top_k_nested(scores, k1, k2):
    s = [B(i, 0, 5, 5, score=v / 10) for i, v in enumerate(scores)]
    k1, k2 = sorted((k1, k2))
    assert select_top_k(s, k2)[:k1] == select_top_k(s, k1)


def test_nms_pair_example():
    a, b = B(0, 0, 96, 96, score=0.9), B(8, 0, 96, 96, score=0.8)
    assert iou(a, b) == pytest.approx(8448 / 9984)
    assert nms([b, a], 0.7) == [a]


def test_nms_keeps_disjoint_sorted():
    bs = [B(0, 0, 5, 5, score=0.2), B(10, 0, 5, 5, score=0.6), B(20, 0, 5, 5, score=0.4)]
    assert [b.score for b in nms(bs, 0.5)] == [0.6, 0.4, 0.2]


def test_nms_tie_at_threshold_survives():
    a, b = B(0, 0, 4, 4, score=0.9), B(2, 0, 4, 4, score=0.5)
    assert iou(a, b) == pytest.approx(1 / 3)
    assert len(nms([a, b], 1 / 3)) == 2


def test_nms_errors():
    with pytest.raises(ValueError):
        nms([B(0, 0, 5, 5)], 0.5)
    with pytest.raises(ValueError):
        nms([], 0.0)


def test_nms_vs_oracle():
    rng = np.random.default_rng(2)
    for _ in range(20):
        bs = random_boxes(rng, 30, scored=True)
        s_t = float(rng.choice([0.3, 0.5, 0.7]))
        assert nms(bs, s_t) == nms_oracle(bs, s_t)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_nms_properties(seed):
    rng = np.random.default_rng(seed)
    bs = random_boxes(rng, 20, scored=True)
    counts = []
    for s_t in (0.9, 0.7, 0.5, 0.3, 0.1):
        kept = nms(bs, s_t)
        m = iou_matrix(kept, kept)
        np.fill_diagonal(m, 0)
        assert np.all(m <= s_t + 1e-12)
        counts.append(len(kept))
    assert counts == sorted(counts, reverse=True)


def test_objectness_map_range():
    ObjectnessMap(np.full((3, 3), 0.5), 4, 48)
    with pytest.raises(ValueError):
        ObjectnessMap(np.full((3, 3), 1.5), 4, 48)


def test_proposal_csv_round_trip(tmp_path):
    rows = [("f1", B(1, 2, 96, 96, score=0.25)), ("f2", B(3, 4, 96, 90, label=7, score=1.0))]
    write_proposals(tmp_path / "p.csv", rows)
    text = (tmp_path / "p.csv").read_text()
    assert text.splitlines()[0] == "image_id,x,y,w,h,score,class"
    assert read_proposals(tmp_path / "p.csv") == rows
