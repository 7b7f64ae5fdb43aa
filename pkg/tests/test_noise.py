import numpy as np
import pytest

from gsdnet.geometry import boundary_mask, squared_distance_transform
from gsdnet.noise import (
    NoiseSpec,
    dilate,
    erode,
    measure_noise,
    simulate,
    trace_contours,
)
from gsdnet.validation import make_rng

from conftest import blob_mask


def square_mask(h=9, w=9, side=3):
    m = np.zeros((h, w), dtype=np.int64)
    i0 = (h - side) // 2
    j0 = (w - side) // 2
    m[i0:i0 + side, j0:j0 + side] = 1
    return m


def test_dilate_square_by_unit_disk():
    m = square_mask() == 1
    d = dilate(m, 1)
    # 3x3 block grows by the 4-neighborhood: 9 + 4*3 = 21 pixels
    assert d.sum() == 21
    assert (d & ~m).sum() == 12
    assert (m & ~d).sum() == 0


def test_erode_square_by_unit_disk():
    m = square_mask() == 1
    e = erode(m, 1)
    assert e.sum() == 1
    assert e[4, 4]


def test_dilate_zero_radius_identity():
    m = square_mask() == 1
    assert np.array_equal(dilate(m, 0), m)
    assert np.array_equal(erode(m, 0), m)


def test_erode_border_acts_as_foreground():
    m = np.ones((5, 5), dtype=bool)
    m[2, 2] = False
    e = erode(m, 1)
    # only pixels within distance 1 of the interior hole are removed
    assert not e[1, 2] and not e[2, 1]
    assert e[0, 0] and e[0, 2]


def test_dilate_erode_duality():
    rng = make_rng(11)
    for _ in range(5):
        m = rng.random((16, 16)) < 0.3
        for r in (1, 2, 3):
            assert np.array_equal(erode(m, r), ~dilate(~m, r))


def test_measure_noise_counts():
    a = square_mask()
    b = a.copy()
    b[0, 0] = 1
    b[4, 4] = 0
    rep = measure_noise(a, b)
    assert rep.changed_pixels == 2
    assert rep.realized_rate == 2 / 81
    # symmetric in its arguments
    assert measure_noise(b, a).changed_pixels == 2


def test_trace_single_pixel():
    m = np.zeros((5, 5), dtype=np.int64)
    m[2, 3] = 1
    cs = trace_contours(m)
    assert len(cs) == 1
    assert np.array_equal(cs[0], [[2, 3]])


def test_trace_2x2_block_clockwise():
    m = np.zeros((5, 5), dtype=np.int64)
    m[1:3, 1:3] = 1
    cs = trace_contours(m)
    assert len(cs) == 1
    assert np.array_equal(cs[0], [[1, 1], [1, 2], [2, 2], [2, 1]])


def test_trace_contour_properties():
    rng = make_rng(4)
    m = blob_mask(rng, 32, 32, radius=9)
    m[2:5, 25:29] = 1  # second component
    cs = trace_contours(m)
    assert len(cs) == 2
    h, w = m.shape
    for contour in cs:
        for (i, j) in contour:
            assert m[i, j] == 1
            # every contour pixel touches background or the image border
            on_edge = i in (0, h - 1) or j in (0, w - 1)
            has_bg = False
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    ni, nj = i + di, j + dj
                    if 0 <= ni < h and 0 <= nj < w and m[ni, nj] == 0:
                        has_bg = True
            assert has_bg or on_edge
        if len(contour) > 1:
            closed = np.vstack([contour, contour[:1]])
            steps = np.abs(np.diff(closed, axis=0)).max(axis=1)
            assert (steps == 1).all()


def test_simulate_de_changes_only_near_boundary():
    for seed in range(4):
        gt = square_mask(15, 15, 5)
        spec = NoiseSpec(kind="S_DE", strength=0.0, structuring_radius=2, seed=seed)
        noisy, rep = simulate(gt, spec)
        changed = gt != noisy
        assert rep.changed_pixels == changed.sum()
        if changed.any():
            d2 = squared_distance_transform(boundary_mask(gt))
            assert (d2[changed] <= spec.structuring_radius ** 2).all()


def test_simulate_de_both_directions_occur():
    gt = square_mask(15, 15, 5)
    grew = shrank = False
    for seed in range(12):
        noisy, _ = simulate(gt, NoiseSpec(kind="S_DE", strength=0.0, seed=seed))
        if noisy.sum() > gt.sum():
            grew = True
        if noisy.sum() < gt.sum():
            shrank = True
    assert grew and shrank


def test_simulate_sr_is_subset():
    rng = make_rng(21)
    gt = blob_mask(rng, 64, 64, radius=16)
    noisy, rep = simulate(gt, NoiseSpec(kind="S_R", strength=0.05, seed=3))
    assert (noisy <= gt).all()
    assert (noisy[gt == 0] == 0).all()
    assert rep.target_met
    assert abs(rep.realized_rate - 0.05) <= 0.25 * 0.05


def test_simulate_se_is_superset():
    rng = make_rng(22)
    gt = blob_mask(rng, 64, 64, radius=16)
    noisy, rep = simulate(gt, NoiseSpec(kind="S_E", strength=0.05, seed=5))
    assert (noisy[gt == 1] == 1).all()
    assert rep.target_met
    assert abs(rep.realized_rate - 0.05) <= 0.25 * 0.05


def test_simulate_walk_deterministic():
    rng = make_rng(23)
    gt = blob_mask(rng, 48, 48, radius=12)
    spec = NoiseSpec(kind="S_R", strength=0.08, seed=9)
    n1, r1 = simulate(gt, spec)
    n2, r2 = simulate(gt, spec)
    assert np.array_equal(n1, n2)
    assert r1 == r2
    n3, _ = simulate(gt, NoiseSpec(kind="S_R", strength=0.08, seed=10))
    assert not np.array_equal(n1, n3)


def test_simulate_sr_unreachable_target_flags():
    rng = make_rng(24)
    gt = blob_mask(rng, 64, 64, radius=12)  # fg fraction about 0.11
    noisy, rep = simulate(gt, NoiseSpec(kind="S_R", strength=0.5, seed=0))
    assert not rep.target_met
    assert rep.changed_pixels <= gt.sum()


def test_simulate_zero_strength_noop():
    rng = make_rng(25)
    gt = blob_mask(rng, 32, 32)
    noisy, rep = simulate(gt, NoiseSpec(kind="S_R", strength=0.0, seed=1))
    assert np.array_equal(noisy, gt)
    assert rep.changed_pixels == 0
    assert rep.target_met


def test_simulate_empty_foreground():
    gt = np.zeros((16, 16), dtype=np.int64)
    noisy, rep = simulate(gt, NoiseSpec(kind="S_E", strength=0.1, seed=0))
    assert np.array_equal(noisy, gt)
    assert not rep.target_met


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(kind="bogus", strength=0.1)
    with pytest.raises(ValueError):
        NoiseSpec(kind="S_R", strength=1.0)
    with pytest.raises(ValueError):
        NoiseSpec(kind="S_R", strength=0.1, walk_step=0)
