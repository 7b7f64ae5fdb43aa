import numpy as np
import pytest

from gsdnet.grids import (
    PROB_FLOOR,
    argmax_pixelwise,
    clamp_probs,
    one_hot,
    softmax_pixelwise,
    take_class_prob,
)


def test_softmax_known_values():
    # logits (0, ln 3) -> probabilities (1/4, 3/4)
    z = np.array([[[0.0, np.log(3.0)]]])
    p = softmax_pixelwise(z)
    assert np.allclose(p, [[[0.25, 0.75]]], atol=1e-12)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((5, 7, 4)) * 50
    p = softmax_pixelwise(z)
    assert np.allclose(p.sum(axis=-1), 1.0, atol=1e-12)
    assert (p > 0).all()


def test_softmax_shift_invariance():
    rng = np.random.default_rng(1)
    z = rng.standard_normal((3, 3, 3))
    p1 = softmax_pixelwise(z)
    p2 = softmax_pixelwise(z + 123.0)
    assert np.allclose(p1, p2, atol=1e-12)


def test_softmax_overflow_safe():
    z = np.array([[[1000.0, 0.0]]])
    p = softmax_pixelwise(z)
    assert np.isfinite(p).all()
    assert np.allclose(p[..., 0], 1.0)


def test_one_hot_round_trip():
    y = np.array([[0, 1], [2, 1]], dtype=np.int64)
    oh = one_hot(y, 3)
    assert oh.shape == (2, 2, 3)
    assert np.array_equal(oh.argmax(axis=-1), y)
    assert np.array_equal(oh.sum(axis=-1), np.ones((2, 2)))


def test_one_hot_rejects_out_of_range():
    y = np.array([[0, 3]], dtype=np.int64)
    with pytest.raises(ValueError):
        one_hot(y, 3)


def test_argmax_tie_prefers_lowest_id():
    p = np.array([[[0.5, 0.5], [0.3, 0.7]]])
    y = argmax_pixelwise(p)
    assert y[0, 0] == 0
    assert y[0, 1] == 1
    assert y.dtype == np.int64


def test_clamp_probs_floor():
    p = np.array([[[1.0, 0.0]]])
    q = clamp_probs(p)
    assert q.min() >= PROB_FLOOR
    # values away from the floor are untouched
    p2 = np.array([[[0.4, 0.6]]])
    assert np.array_equal(clamp_probs(p2), p2)


def test_take_class_prob():
    p = np.array([[[0.2, 0.8], [0.9, 0.1]]])
    y = np.array([[1, 0]], dtype=np.int64)
    got = take_class_prob(p, y)
    assert np.allclose(got, [[0.8, 0.9]])
