import numpy as np
import pytest

from gsdnet.superpixel import SlicConfig, default_n_segments, region_sizes, slic
from gsdnet.validation import make_rng


def components_of(labels, region_id):
    """Number of 4-connected components of one region id."""
    h, w = labels.shape
    target = labels == region_id
    seen = np.zeros((h, w), dtype=bool)
    n = 0
    for i, j in np.argwhere(target):
        if seen[i, j]:
            continue
        n += 1
        stack = [(i, j)]
        seen[i, j] = True
        while stack:
            ci, cj = stack.pop()
            for ni, nj in ((ci - 1, cj), (ci + 1, cj), (ci, cj - 1), (ci, cj + 1)):
                if 0 <= ni < h and 0 <= nj < w and target[ni, nj] and not seen[ni, nj]:
                    seen[ni, nj] = True
                    stack.append((ni, nj))
    return n


def test_uniform_image_four_blocks():
    img = np.full((64, 64), 0.5)
    labels = slic(img, SlicConfig(n_segments=4))
    ii, jj = np.mgrid[0:64, 0:64]
    want = (ii >= 32).astype(np.int64) * 2 + (jj >= 32).astype(np.int64)
    assert np.array_equal(labels, want)


def test_labels_form_a_partition():
    rng = make_rng(6)
    img = rng.random((40, 56))
    labels = slic(img, SlicConfig(n_segments=30))
    assert labels.shape == img.shape
    assert labels.dtype == np.int64
    assert labels.min() >= 0
    assert region_sizes(labels).sum() == img.size


def test_connectivity_enforced():
    rng = make_rng(7)
    img = rng.random((32, 32))
    labels = slic(img, SlicConfig(n_segments=12))
    for rid in np.unique(labels):
        assert components_of(labels, rid) == 1


def test_connectivity_optional():
    rng = make_rng(8)
    img = rng.random((32, 32))
    raw = slic(img, SlicConfig(n_segments=12, enforce_connectivity=False))
    assert raw.min() >= 0  # no unassigned pixels even without the cleanup


def test_deterministic():
    rng = make_rng(9)
    img = rng.random((48, 40))
    a = slic(img, SlicConfig(n_segments=20))
    b = slic(img, SlicConfig(n_segments=20))
    assert np.array_equal(a, b)


def test_respects_strong_edge():
    img = np.zeros((32, 32))
    img[:, 16:] = 1.0
    labels = slic(img, SlicConfig(n_segments=8, compactness=1.0))
    # no superpixel straddles the step edge
    left = np.unique(labels[:, :16])
    right = np.unique(labels[:, 16:])
    assert not set(left) & set(right)


def test_multichannel_input():
    rng = make_rng(10)
    img = rng.random((24, 24, 3))
    labels = slic(img, SlicConfig(n_segments=9))
    assert labels.shape == (24, 24)


def test_default_segment_count():
    assert default_n_segments((64, 64)) == 64
    assert default_n_segments((10, 10)) == 2  # ceil(100 / 64)


def test_rejects_too_many_segments():
    with pytest.raises(ValueError):
        slic(np.zeros((4, 4)), SlicConfig(n_segments=17))


def test_config_validation():
    with pytest.raises(ValueError):
        SlicConfig(n_segments=0)
    with pytest.raises(ValueError):
        SlicConfig(compactness=0.0)
    with pytest.raises(ValueError):
        SlicConfig(max_iters=0)
