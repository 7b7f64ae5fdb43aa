import numpy as np
import pytest
from sklearn.base import clone

from gsdnet import GsdSegmenter, SlicSuperpixels
from gsdnet.superpixel import SlicConfig, slic
from gsdnet.validation import make_rng


def toy_training_data(n=4, size=16):
    rng = make_rng(31)
    X = rng.random((n, size, size))
    y = np.zeros((n, size, size), dtype=np.int64)
    y[:, 4:12, 4:12] = 1
    for i in range(n):
        X[i] = np.clip(X[i] * 0.3 + y[i] * 0.5, 0.0, 1.0)
    return X, y


def fast_params(**kw):
    base = dict(mode="jocor", epochs=2, batch_size=4, features=4, seed=0)
    base.update(kw)
    return base


def test_get_params_round_trip():
    est = GsdSegmenter(**fast_params(learning_rate=0.01))
    params = est.get_params()
    assert params["mode"] == "jocor"
    assert params["learning_rate"] == 0.01
    est2 = GsdSegmenter(**params)
    assert est2.get_params() == params


def test_clone_preserves_params():
    est = GsdSegmenter(**fast_params(tau=0.2, tau_source="fixed"))
    c = clone(est)
    assert c.get_params() == est.get_params()


def test_fit_predict_score():
    X, y = toy_training_data()
    est = GsdSegmenter(**fast_params())
    assert est.fit(X, y) is est
    proba = est.predict_proba(X)
    assert proba.shape == (4, 16, 16, 2)
    assert np.allclose(proba.sum(axis=-1), 1.0, atol=1e-9)
    pred = est.predict(X)
    assert pred.shape == (4, 16, 16)
    assert set(np.unique(pred)) <= {0, 1}
    s = est.score(X, y)
    assert 0.0 <= s <= 1.0
    assert len(est.history_) == 2
    assert 0.0 <= est.tau_ < 1.0


def test_fit_accepts_lists():
    X, y = toy_training_data()
    est = GsdSegmenter(**fast_params(epochs=1))
    est.fit(list(X), [y[i] for i in range(4)])
    assert est.predict([X[0]]).shape == (1, 16, 16)


def test_fit_deterministic():
    X, y = toy_training_data()
    p1 = GsdSegmenter(**fast_params()).fit(X, y).predict_proba(X)
    p2 = GsdSegmenter(**fast_params()).fit(X, y).predict_proba(X)
    assert np.array_equal(p1, p2)


def test_unfitted_raises():
    with pytest.raises(ValueError, match="not fitted"):
        GsdSegmenter().predict(np.zeros((2, 16, 16)))


def test_measured_tau_needs_clean_labels():
    X, y = toy_training_data()
    est = GsdSegmenter(**fast_params(tau_source="measured"))
    with pytest.raises(ValueError, match="y_clean"):
        est.fit(X, y)
    noisy = y.copy()
    noisy[:, 0, 0] = 1 - noisy[:, 0, 0]
    est.fit(X, noisy, y_clean=y)
    assert np.isclose(est.tau_, 1 / 256)


def test_shape_mismatch_raises():
    X, y = toy_training_data()
    with pytest.raises(ValueError):
        GsdSegmenter(**fast_params()).fit(X, y[:, :8, :8])
    with pytest.raises(ValueError):
        GsdSegmenter(**fast_params()).fit(X[:2], y)


def test_slic_estimator_matches_function():
    rng = make_rng(32)
    img = rng.random((24, 24))
    est = SlicSuperpixels(n_segments=6, compactness=5.0)
    labels = est.fit_predict(img)
    want = slic(img, SlicConfig(n_segments=6, compactness=5.0))
    assert np.array_equal(labels, want)
    assert np.array_equal(est.labels_, want)


def test_slic_estimator_clone():
    est = SlicSuperpixels(n_segments=9)
    assert clone(est).get_params() == est.get_params()
