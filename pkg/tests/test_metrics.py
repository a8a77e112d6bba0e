import numpy as np
import pytest

from segshield.metrics import (
    MetricError,
    binarize,
    center_point,
    count_cells,
    iou,
    l2,
    linf,
    mean_iou,
    mse,
    score_grid,
)


def square(y0, x0, size, shape=(20, 20)):
    m = np.zeros(shape, np.uint8)
    m[y0 : y0 + size, x0 : x0 + size] = 1
    return m


# -- IoU -----------------------------------------------------------------------------


def test_iou_examples():
    a = square(2, 2, 5)
    assert iou(a, a) == 1.0
    assert iou(a, square(10, 10, 5)) == 0.0
    assert iou(square(0, 0, 5), square(0, 0, 10)) == 0.25


def test_iou_empty_conventions():
    z = np.zeros((4, 4))
    assert iou(z, z) == 1.0
    assert iou(z, square(0, 0, 2, (4, 4))) == 0.0


def test_iou_dim_mismatch():
    with pytest.raises(MetricError):
        iou(np.zeros((3, 3)), np.zeros((3, 4)))


def test_binarize_threshold_inclusive():
    assert binarize([0.49, 0.5, 0.9]).tolist() == [0, 1, 1]


# -- perturbation metrics -------------------------------------------------------------


def test_distance_metrics_zero_for_equal():
    x = np.random.default_rng(0).uniform(0, 255, (8, 8, 1))
    assert mse(x, x) == linf(x, x) == l2(x, x) == 0.0


def test_single_entry_difference():
    x = np.zeros((10, 10, 1))
    y = x.copy()
    y[3, 4, 0] = 10
    assert mse(x, y) == 100 / 100
    assert linf(x, y) == 10
    assert l2(x, y) == 10


def test_distance_dim_mismatch():
    with pytest.raises(MetricError):
        mse(np.zeros(3), np.zeros(4))


# -- center point --------------------------------------------------------------------


def test_center_point_square_and_pixel():
    assert center_point(square(10, 10, 3)) == (11, 11)
    m = np.zeros((10, 10))
    m[7, 5] = 1
    assert center_point(m) == (5, 7)


def test_center_point_ring_falls_back_to_nearest_ring_pixel():
    yy, xx = np.mgrid[:21, :21]
    d = np.hypot(yy - 10, xx - 10)
    ring = ((d >= 5) & (d <= 7)).astype(np.uint8)
    x, y = center_point(ring)
    assert ring[y, x] == 1
    # nearest ring pixels sit at distance 5; the first in row-major order is (10, 5)
    assert (x, y) == (10, 5)


def test_center_point_empty():
    with pytest.raises(MetricError):
        center_point(np.zeros((3, 3)))


def test_mean_iou_missing_ids_score_zero():
    a, b = square(0, 0, 4), square(10, 10, 4)
    ref = {(1, 1): a, (11, 11): b}
    assert mean_iou(ref, {(1, 1): a, (11, 11): b}) == 1.0
    assert mean_iou(ref, {(1, 1): a}) == 0.5


# -- grid scores ----------------------------------------------------------------------


def test_count_cells_examples():
    c = count_cells({4}, {4})
    assert (c.tp, c.fp, c.fn, c.tn) == (1, 0, 0, 8)
    p, r, f, undefined = count_cells({4}, {1, 4, 7}).scores()
    assert (p, r, f, undefined) == (1 / 3, 1.0, 0.5, False)
    p, r, f, undefined = count_cells({4}, set()).scores()
    assert (p, r, f, undefined) == (0.0, 0.0, 0.0, True)


def test_count_cells_out_of_range():
    with pytest.raises(MetricError):
        count_cells({4}, {9})


def test_score_grid_pools_and_spreads():
    trials = [[({0}, {0}), ({1}, {1, 2})], [({3}, set()), ({5}, {5})]]
    rep = score_grid(trials)
    assert (rep.counts.tp, rep.counts.fp, rep.counts.fn) == (3, 1, 1)
    assert rep.counts.total == 4 * 9
    assert rep.precision == 0.75 and rep.recall == 0.75
    assert rep.f1 == pytest.approx(2 * 0.75 * 0.75 / 1.5)
    (pm, ps) = rep.precision_mean_std
    assert pm == pytest.approx((2 / 3 + 1.0) / 2) and ps > 0


def test_score_grid_declared_target_count():
    with pytest.raises(MetricError):
        score_grid([[({1, 2}, {1})]])
    rep = score_grid([[({1, 2}, {1})]], targets_per_grid=2)
    assert rep.recall == 0.5
