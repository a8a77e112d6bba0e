import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from segshield.blackbox import dct2, idct2
from segshield.metrics import center_point, count_cells, iou, l2, linf, score_grid
from segshield.whitebox import sign_step, top_k_mask

masks = st.integers(1, 12).flatmap(
    lambda n: st.tuples(arrays(np.uint8, (n, n), elements=st.integers(0, 1)), arrays(np.uint8, (n, n), elements=st.integers(0, 1)))
)
pixel = st.floats(0, 255, width=32)


@given(masks)
def test_iou_symmetric_and_bounded(pair):
    a, b = pair
    v = iou(a, b)
    assert v == iou(b, a) and 0.0 <= v <= 1.0
    assert iou(a, a) == 1.0


@given(st.integers(1, 8).flatmap(lambda n: st.tuples(*[arrays(np.float32, (n,), elements=pixel)] * 3)))
def test_distance_triangle_inequality(xyz):
    x, y, z = xyz
    assert linf(x, z) <= linf(x, y) + linf(y, z) + 1e-9
    assert l2(x, z) <= l2(x, y) + l2(y, z) + 1e-9


@given(arrays(np.uint8, st.tuples(st.integers(1, 16), st.integers(1, 16)), elements=st.integers(0, 1)))
def test_center_point_lies_on_mask(mask):
    if not mask.any():
        return
    x, y = center_point(mask)
    assert mask[y, x]


trial = st.tuples(st.integers(0, 8), st.sets(st.integers(0, 8)))


@given(st.lists(st.lists(trial, min_size=1, max_size=6), min_size=1, max_size=4), st.permutations(range(9)))
def test_score_grid_invariant_under_cell_relabeling(repeats, perm):
    raw = [[({t}, p) for t, p in rep] for rep in repeats]
    moved = [[({perm[t]}, {perm[c] for c in p}) for t, p in rep] for rep in repeats]
    a, b = score_grid(raw), score_grid(moved)
    assert a.as_dict() == b.as_dict()


@given(st.sets(st.integers(0, 8)), st.sets(st.integers(0, 8)))
def test_cell_counts_partition_the_grid(truth, predicted):
    c = count_cells(truth, predicted)
    assert c.tp + c.fp + c.fn + c.tn == 9


@settings(max_examples=60)
@given(
    st.integers(1, 6).flatmap(
        lambda n: st.tuples(
            arrays(np.float32, (n, n, 1), elements=pixel),
            arrays(np.float32, (n, n, 1), elements=st.floats(-10, 10, width=32)),
        )
    ),
    st.sampled_from([0.25, 0.5, 1.0, 2.0, 5.0]),
    st.data(),
)
def test_sign_step_bounds(xg, eps, data):
    x, g = xg
    k = data.draw(st.integers(1, x.size))
    out, _ = sign_step(x, g, eps, k)
    d = np.abs(out.astype(np.float64) - x)
    assert d.max() <= eps
    assert np.count_nonzero(d) <= k
    assert out.min() >= 0 and out.max() <= 255


@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-5, 5)), st.data())
def test_top_k_keeps_largest(v, data):
    k = data.draw(st.integers(1, v.size))
    kept = top_k_mask(v, k)
    assert np.count_nonzero(kept) <= k
    chosen = np.abs(kept[kept != 0])
    dropped = np.abs(v[kept == 0])
    if chosen.size and dropped.size:
        assert chosen.min() >= dropped.max()


@settings(max_examples=40)
@given(arrays(np.float32, st.tuples(st.integers(1, 12), st.integers(1, 12), st.just(1)), elements=pixel))
def test_dct_round_trip(x):
    assert np.max(np.abs(idct2(dct2(x)) - x)) < 1e-4 * max(1.0, float(np.abs(x).max()))
