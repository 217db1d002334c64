import math

import numpy as np
import pytest

from gradcheck import case_error, loss_cases
from sonarp.initializers import fans, init_weights
from sonarp.losses import binary_ce, categorical_ce, hinge, loss, mae, make_loss, mse, multitask_loss
from sonarp.optim import SGD, AdaGrad, Adam, NonFiniteGradientError, RMSProp, make_optimizer

CASES = loss_cases(np.random.default_rng(99))


@pytest.mark.parametrize("case", CASES, ids=[f"{c[0]}-{i}" for i, c in enumerate(CASES)])
def test_finite_difference(case):
    assert case_error(case) < 1e-3


def test_loss_values():
    p = np.array([[0.2, 0.8], [0.6, 0.4]])
    assert categorical_ce(p, np.array([1, 0]))[0] == pytest.approx(-(math.log(0.8) + math.log(0.6)) / 2)
    assert mse(np.array([1.0, 3.0]), np.array([0.0, 0.0]))[0] == pytest.approx(5.0)
    assert mae(np.array([1.0, -3.0]), np.array([0.0, 0.0]))[0] == pytest.approx(2.0)
    assert binary_ce(np.array([0.9]), np.array([1.0]))[0] == pytest.approx(-math.log(0.9))
    assert hinge(np.array([0.5, 2.0]), np.array([1.0, 1.0]))[0] == pytest.approx(0.25)


def test_one_hot_and_index_targets_agree():
    p = np.random.default_rng(0).dirichlet(np.ones(4), size=5)
    y = np.array([0, 3, 1, 1, 2])
    a, ga = categorical_ce(p, y)
    b, gb = categorical_ce(p, np.eye(4)[y])
    assert a == pytest.approx(b)
    np.testing.assert_allclose(ga, gb)


def test_probability_range_checked():
    with pytest.raises(ValueError):
        categorical_ce(np.array([[1.5, -0.5]]), np.array([0]))
    with pytest.raises(ValueError):
        binary_ce(np.array([1.2]), np.array([1.0]))


def test_multitask_is_linear_combination():
    rng = np.random.default_rng(1)
    obj, y_obj = rng.random((4, 1)), rng.random(4)
    cls, y_cls = rng.dirichlet(np.ones(3), 4), rng.integers(0, 3, 4)
    for gamma in (0.5, 1, 2, 3, 4):
        value, _ = multitask_loss(obj, y_obj, cls, y_cls, gamma)
        assert value == pytest.approx(mse(obj, y_obj)[0] + gamma * categorical_ce(cls, y_cls)[0])
    with pytest.raises(ValueError):
        multitask_loss(obj, y_obj, cls, y_cls, -1)


def test_unknown_loss():
    with pytest.raises(ValueError):
        loss("nope", np.ones(1), np.ones(1))
    with pytest.raises(ValueError):
        make_loss("nope")


def _run(opt, g_seq):
    p = {"w": np.array([1.0, -2.0])}
    for g in g_seq:
        opt.step(p, {"w": np.array(g)})
    return p["w"]


GRADS = [[0.5, -1.0], [0.1, 0.3], [-0.4, 0.2]]


def test_sgd_step():
    np.testing.assert_allclose(_run(SGD(0.1), GRADS), np.array([1.0, -2.0]) - 0.1 * np.sum(GRADS, axis=0))


def test_adagrad_by_hand():
    w, r = np.array([1.0, -2.0]), np.zeros(2)
    for g in map(np.array, GRADS):
        r += g * g
        w = w - 0.05 * g / (1e-8 + np.sqrt(r))
    np.testing.assert_allclose(_run(AdaGrad(0.05), GRADS), w)


def test_rmsprop_by_hand():
    w, r = np.array([1.0, -2.0]), np.zeros(2)
    for g in map(np.array, GRADS):
        r = 0.9 * r + 0.1 * g * g
        w = w - 0.01 * g / np.sqrt(1e-8 + r)
    np.testing.assert_allclose(_run(RMSProp(0.01), GRADS), w)


def test_adam_by_hand():
    w, s, r = np.array([1.0, -2.0]), np.zeros(2), np.zeros(2)
    for t, g in enumerate(map(np.array, GRADS), start=1):
        s = 0.9 * s + 0.1 * g
        r = 0.999 * r + 0.001 * g * g
        w = w - 0.01 * (s / (1 - 0.9 ** t)) / (np.sqrt(r / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(_run(Adam(0.01), GRADS), w)


def test_adam_first_step_is_lr_sign():
    w = _run(Adam(0.01), [[3.0, -0.001]])
    np.testing.assert_allclose(w, [1.0 - 0.01, -2.0 + 0.01], rtol=1e-4)


@pytest.mark.parametrize("kind", ["sgd", "adagrad", "rmsprop", "adam"])
def test_non_finite_gradient_rejected(kind):
    opt = make_optimizer(kind, 0.01)
    p = {"w": np.ones(2)}
    with pytest.raises(NonFiniteGradientError):
        opt.step(p, {"w": np.array([np.nan, 1.0])})
    np.testing.assert_array_equal(p["w"], 1.0)


def test_optimizers_minimize_quadratic():
    for kind, lr in [("sgd", 0.1), ("adagrad", 0.5), ("rmsprop", 0.05), ("adam", 0.05)]:
        opt = make_optimizer(kind, lr)
        p = {"w": np.array([3.0, -4.0])}
        for _ in range(500):
            opt.step(p, {"w": 2 * p["w"]})
        assert np.abs(p["w"]).max() < 0.1, kind


def test_unknown_optimizer():
    with pytest.raises(ValueError):
        make_optimizer("lbfgs", 0.1)


def test_fans():
    assert fans((10, 20)) == (20, 10)
    assert fans((8, 3, 5, 5)) == (75, 200)
    with pytest.raises(ValueError):
        fans((3,))


def test_glorot_bounds_and_spread():
    w = init_weights("glorot", (200, 300), np.random.default_rng(0))
    limit = math.sqrt(6 / 500)
    assert np.abs(w).max() <= limit
    assert w.std() == pytest.approx(limit / math.sqrt(3), rel=0.05)


def test_gaussian_and_uniform():
    rng = np.random.default_rng(0)
    g = init_weights("gaussian", (400, 400), rng, std=0.1)
    assert g.std() == pytest.approx(0.1, rel=0.02)
    u = init_weights("uniform", (400, 400), rng, scale=0.2)
    assert np.abs(u).max() <= 0.2


@pytest.mark.parametrize("shape", [(5, 8), (8, 5), (4, 2, 3, 3)])
def test_orthogonal(shape):
    w = init_weights("orthogonal", shape, np.random.default_rng(0), dtype=np.float64)
    m = w.reshape(shape[0], -1)
    gram = m @ m.T if m.shape[0] <= m.shape[1] else m.T @ m
    np.testing.assert_allclose(gram, np.eye(gram.shape[0]), atol=1e-10)


def test_init_errors():
    with pytest.raises(ValueError):
        init_weights("xavier", (2, 2), np.random.default_rng(0))
    with pytest.raises(ValueError):
        init_weights("glorot", (0, 2), np.random.default_rng(0))
