import numpy as np
import pytest
from sklearn.svm import SVC

from sonarp.svm import LinearSVM, l2_normalize


def blobs(rng, classes=4, per=30, dim=6, spread=0.4):
    centers = rng.normal(size=(classes, dim)) * 2
    x = np.concatenate([c + spread * rng.normal(size=(per, dim)) for c in centers])
    return x, np.repeat(np.arange(classes), per)


def test_l2_normalize():
    x = np.random.default_rng(0).normal(size=(10, 5))
    np.testing.assert_allclose(np.linalg.norm(l2_normalize(x), axis=1), 1, atol=1e-6)
    assert np.all(l2_normalize(np.zeros((1, 3))) == 0)


def test_separable_blobs():
    rng = np.random.default_rng(1)
    x, y = blobs(rng)
    svm = LinearSVM().fit(x, y)
    assert np.mean(svm.predict(x) == y) == 1.0


def test_agrees_with_reference_linear_svm():
    rng = np.random.default_rng(2)
    x, y = blobs(rng, spread=1.2)
    xt, yt = blobs(np.random.default_rng(2), spread=1.2)
    ours = LinearSVM(C=1.0, iters=2000).fit(l2_normalize(x), y).predict(l2_normalize(xt))
    ref = SVC(kernel="linear", C=1.0, decision_function_shape="ovo").fit(l2_normalize(x), y)
    theirs = ref.predict(l2_normalize(xt))
    assert np.mean(ours == theirs) >= 0.9
    assert abs(np.mean(ours == yt) - np.mean(theirs == yt)) <= 0.05


def test_identical_train_test_features():
    rng = np.random.default_rng(3)
    x, y = blobs(rng, classes=3, dim=20)
    assert np.mean(LinearSVM().fit(l2_normalize(x), y).predict(l2_normalize(x)) == y) == 1.0


def test_single_class_and_errors():
    svm = LinearSVM().fit(np.ones((3, 2)), [5, 5, 5])
    assert svm.predict(np.zeros((2, 2))).tolist() == [5, 5]
    with pytest.raises(RuntimeError):
        LinearSVM().predict(np.ones((1, 2)))
    with pytest.raises(ValueError):
        LinearSVM(C=0)


def test_labels_are_preserved():
    rng = np.random.default_rng(4)
    x, y = blobs(rng, classes=3)
    out = LinearSVM().fit(x, y * 10 + 1).predict(x)
    assert set(out) <= {1, 11, 21}
