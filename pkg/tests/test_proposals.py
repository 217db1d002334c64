import numpy as np
import pytest

from sonarp.geometry import BoundingBox, ObjectnessMap, iou_matrix, sliding_windows
from sonarp.layers import Activation, Conv2D, Dense, Flatten, MaxPool2x2, Sequential
from sonarp.netzoo import Network, build_objectness_net, build_tiny_net, to_fcn
from sonarp.proposals import (ConstantScorer, FcnScorer, PatchScorer, ProposalConfig, TemplateScorer, propose,
                              sample_map, score_windows, select, upsample_map)
from sonarp.tmatch import TemplateSet


@pytest.fixture(scope="module")
def image():
    return np.random.default_rng(0).random((160, 200)).astype(np.float32)


@pytest.fixture(scope="module")
def tiny():
    return build_objectness_net("tiny", seed=2)


def test_constant_scorer(image):
    wins = sliding_windows(image.shape)
    assert all(b.score == 0.7 for b in score_windows(image, wins, ConstantScorer(0.7)))


def test_patch_path_is_direct_inference(image, tiny):
    wins = sliding_windows(image.shape)[:7]
    got = PatchScorer(tiny, batch_size=3).score(image, wins)
    x = np.stack([image[b.y:b.y + 96, b.x:b.x + 96] for b in wins])[:, None]
    np.testing.assert_allclose(got, tiny.predict(x)[:, 0], atol=1e-6)


def aligned_windows(n=50, seed=1):
    rng = np.random.default_rng(seed)
    return [BoundingBox(int(4 * rng.integers(0, 27)), int(4 * rng.integers(0, 17)), 96, 96) for _ in range(n)]


def valid_net():
    body = Sequential([Conv2D(1, 4, 5, padding="valid", name="c1"), Activation("relu", name="r1"),
                       MaxPool2x2(name="mp1"), Conv2D(4, 4, 3, padding="valid", name="c2"),
                       Activation("relu", name="r2"), MaxPool2x2(name="mp2"), Flatten(name="flat"),
                       Dense(4 * 22 * 22, 1, name="fc"), Activation("sigmoid", name="out")], name="valid")
    return Network(body, (1, 96, 96), "objectness", "valid", {"window": 96}).initialize(5)


def test_fcn_path_exact_without_padding(image):
    net = valid_net()
    wins = aligned_windows()
    fcn = FcnScorer(to_fcn(net)).score(image, wins)
    assert np.abs(fcn - PatchScorer(net).score(image, wins)).max() < 1e-5


def test_fcn_path_close_with_padding(image, tiny):
    # zero padding at patch borders versus real context inside the frame
    wins = aligned_windows()
    delta = np.abs(FcnScorer(to_fcn(tiny)).score(image, wins) - PatchScorer(tiny).score(image, wins))
    assert delta.mean() < 0.01


def test_patch_scorer_needs_scalar_output():
    with pytest.raises(ValueError):
        PatchScorer(build_tiny_net(1, 4))
    with pytest.raises(ValueError):
        FcnScorer(build_objectness_net("tiny"))


def test_upsample_map_hits_cell_centres():
    vals = np.random.default_rng(2).random((3, 4))
    raster = upsample_map(ObjectnessMap(vals, 4, 10), (30, 30))
    for i in range(3):
        for j in range(4):
            assert raster[4 * i + 10, 4 * j + 10] == pytest.approx(vals[i, j])
    mid = raster[12, 10]
    assert mid == pytest.approx((vals[0, 0] + vals[1, 0]) / 2)
    assert raster[0, 0] == pytest.approx(vals[0, 0])


def test_sample_map_reads_centres():
    raster = np.arange(200 * 200, dtype=float).reshape(200, 200) / 40000
    wins = [BoundingBox(0, 0, 96, 96), BoundingBox(8, 16, 96, 96)]
    assert sample_map(raster, wins).tolist() == [raster[48, 48], raster[64, 56]]


def test_template_scorer_finds_copy(image):
    t = image[40:136, 64:160].copy()
    other = np.random.default_rng(3).random((96, 96))
    sc = TemplateScorer(TemplateSet(np.stack([other, t]), [0, 1]))
    wins = sliding_windows(image.shape)
    scored = score_windows(image, wins, sc)
    best = max(scored, key=lambda b: b.score)
    assert (best.x, best.y) == (64, 40) and best.score == pytest.approx(1.0)


def test_propose_and_select(image, tiny):
    sc = FcnScorer(to_fcn(tiny))
    wins = score_windows(image, sliding_windows(image.shape), sc)
    out = propose(image, None, sc, ProposalConfig(t_o=0.0, s_t=0.5, k=3))
    assert len(out) <= 3
    assert out == select(wins, ProposalConfig(t_o=0.0, s_t=0.5, k=3))
    ov = iou_matrix(out, out)
    np.fill_diagonal(ov, 0)
    assert ov.max() <= 0.5
    assert select(wins, ProposalConfig(t_o=None, s_t=None, k=None)) == wins
