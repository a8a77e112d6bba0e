import importlib
import json
import math

import numpy as np
import pytest

from segshield.metrics import binarize, iou
from segshield.refmodel import (
    ModelError,
    ModelMismatchError,
    SceneConfig,
    TrainingDivergedError,
    encode_prompt,
    evaluate,
    generate_scene,
    heldout_prompts,
    init_model,
    load_model,
    predict,
    predict_batch,
    save_model,
    train,
)
from segshield.refmodel.automask import MaskSet, MaskEntry, auto_masks, grid_points, select_masks
from segshield.refmodel.model import sidecar_path

train_mod = importlib.import_module("segshield.refmodel.train")


# -- prompt encoding ---------------------------------------------------------------------


def test_prompt_peak_and_falloff():
    ch = encode_prompt((10, 10), 64, 64)
    assert ch[10, 10] == 1.0
    assert ch[10, 14] == pytest.approx(math.exp(-0.5), rel=1e-6)
    assert ch[10, 30] < 1e-5
    assert ch.shape == (64, 64)


def test_prompt_uses_x_as_column():
    ch = encode_prompt((3, 20), 32, 32)
    assert np.unravel_index(np.argmax(ch), ch.shape) == (20, 3)


@pytest.mark.parametrize("p", [(-1, 0), (0, 64), (64, 0)])
def test_prompt_out_of_bounds(p):
    with pytest.raises(ModelError):
        encode_prompt(p, 64, 64)


# -- scenes ------------------------------------------------------------------------------


def test_scene_determinism():
    a, b = generate_scene(123), generate_scene(123)
    assert a.image.tobytes() == b.image.tobytes()
    assert a.masks.tobytes() == b.masks.tobytes()
    assert a.shapes == b.shapes
    assert a.image.shape == (64, 64, 1) and a.image.dtype == np.float32


def test_single_disk_area_bound():
    cfg = SceneConfig(min_shapes=1, max_shapes=1, kinds=("disk",), extent=(8, 8))
    for seed in range(20):
        area = generate_scene(seed, cfg).masks[0].sum()
        assert math.pi * 7.5**2 <= area <= math.pi * 8.5**2


def test_scene_contrast_and_range():
    for seed in range(200):
        s = generate_scene(seed)
        assert 1 <= len(s.shapes) <= 3
        for shape, m in zip(s.shapes, s.masks):
            assert shape.intensity - s.background >= 40
            assert np.all(s.image[m.astype(bool), 0] == shape.intensity)
        assert np.all(s.image[s.masks.sum(0) == 0, 0] == s.background)


@pytest.mark.slow
def test_ten_thousand_scenes_never_overlap():
    for seed in range(10_000):
        s = generate_scene(seed)
        assert s.masks.sum(axis=0).max() <= 1, seed


@pytest.mark.parametrize(
    "kwargs",
    [{"extent": (4, 8)}, {"extent": (6, 20)}, {"min_contrast": 20}, {"max_shapes": 4}, {"kinds": ("star",)}],
)
def test_scene_config_validation(kwargs):
    with pytest.raises(ValueError):
        SceneConfig(**kwargs)


# -- model -------------------------------------------------------------------------------


def test_init_scale_and_shapes():
    m = init_model(5)
    assert m.params["conv1.weight"].shape == (3, 3, 2, 16)
    assert m.params["head.weight"].shape == (1, 1, 16, 1)
    for k, v in m.params.items():
        if k.endswith(".weight"):
            assert np.abs(v).max() <= 0.05
        else:
            assert not v.any()


def test_predict_range_and_purity_on_blank_image():
    m = init_model(0)
    img = np.zeros((64, 64, 1), np.float32)
    a, b = predict(m, img, (5, 5)), predict(m, img, (5, 5))
    assert a.shape == (64, 64)
    assert a.tobytes() == b.tobytes()
    assert a.min() >= 0 and a.max() <= 1


def test_predict_batch_matches_layout():
    m = init_model(0)
    imgs = np.stack([generate_scene(s).image for s in range(3)])
    out = predict_batch(m, imgs, [(1, 2), (30, 30), (60, 5)])
    assert out.shape == (3, 64, 64)


def test_predict_shape_errors():
    m = init_model(0)
    with pytest.raises(ModelError):
        predict(m, np.zeros((2, 64, 64, 1)), (1, 1))
    with pytest.raises(ModelError):
        predict(m, np.zeros((64, 64, 3)), (1, 1))


def test_untrained_baseline_is_poor():
    scores = evaluate(init_model(0), heldout_prompts(100))
    assert np.mean(scores) < 0.5


def test_training_is_deterministic_and_finite():
    a, b = train(7, steps=5), train(7, steps=5)
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()
    assert a.loss_trace == b.loss_trace and len(a.loss_trace) == 5
    assert all(np.isfinite(a.loss_trace))
    assert a.train_config["steps"] == 5


def test_training_divergence_reports_step(monkeypatch):
    real = train_mod.bce_with_logits
    calls = {"n": 0}

    def flaky(z, y):
        calls["n"] += 1
        loss, g = real(z, y)
        return (float("nan"), g) if calls["n"] == 3 else (loss, g)

    monkeypatch.setattr(train_mod, "bce_with_logits", flaky)
    with pytest.raises(TrainingDivergedError) as err:
        train(0, steps=10)
    assert err.value.step == 3


def test_bce_matches_direct_formula():
    z = np.array([-30.0, -1.0, 0.0, 2.0, 40.0])
    y = np.array([0, 1, 1, 0, 1.0])
    loss, g = train_mod.bce_with_logits(z, y)
    p = 1 / (1 + np.exp(-z))
    # log(1 - p) written as log(sigmoid(-z)) to stay finite for z = 40
    direct = np.where(y == 1, -np.log(p), -np.log(1 / (1 + np.exp(z))))
    assert loss == pytest.approx(direct.mean(), rel=1e-9)
    np.testing.assert_allclose(g, (p - y) / 5, rtol=1e-9)


# -- checkpoints -------------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    m = train(3, steps=2)
    save_model(m, tmp_path / "m.rtn")
    back = load_model(tmp_path / "m.rtn")
    for k in m.params:
        assert back.params[k].tobytes() == m.params[k].tobytes()
    assert back.seed == 3 and back.loss_trace == m.loss_trace
    meta = json.loads(sidecar_path(tmp_path / "m.rtn").read_text())
    assert meta["architecture"] == "conv3x3-16/conv3x3-16/conv3x3-16/conv1x1-1"


def test_checkpoint_architecture_mismatch(tmp_path):
    save_model(init_model(0), tmp_path / "m.rtn")
    side = sidecar_path(tmp_path / "m.rtn")
    meta = json.loads(side.read_text())
    meta["architecture"] = "conv5x5-32"
    side.write_text(json.dumps(meta))
    with pytest.raises(ModelMismatchError):
        load_model(tmp_path / "m.rtn")


def test_checkpoint_tensor_shape_mismatch(tmp_path):
    from segshield.numcore import rtn

    save_model(init_model(0), tmp_path / "m.rtn")
    tensors = rtn.load_many(tmp_path / "m.rtn")
    tensors[0] = np.zeros((3, 3, 2, 8), np.float32)
    rtn.save_many(tmp_path / "m.rtn", tensors)
    with pytest.raises(ModelMismatchError):
        load_model(tmp_path / "m.rtn")


# -- automatic masks ---------------------------------------------------------------------


def _sq(y, x, s, shape=(32, 32)):
    m = np.zeros(shape, np.uint8)
    m[y : y + s, x : x + s] = 1
    return m


def test_select_masks_dedups_identical():
    a = _sq(2, 2, 6)
    out = select_masks([((4, 4), a), ((5, 5), a.copy())], k=3)
    assert len(out) == 1 and out.shortfall and out.requested == 3


def test_select_masks_keeps_largest_first():
    big, mid, small = _sq(0, 0, 10), _sq(15, 15, 6), _sq(25, 2, 3)
    out = select_masks([((0, 0), small), ((1, 1), big), ((2, 2), mid)], k=2)
    assert [e.area for e in out] == [100, 36]
    assert out.ids == [(5, 5), (18, 18)]  # centroids 4.5 and 17.5 round up
    assert not out.shortfall
    one = select_masks([((0, 0), small), ((1, 1), big)], k=1)
    assert len(one) == 1 and one.entries[0].area == 100


def test_select_masks_drops_empty():
    out = select_masks([((0, 0), np.zeros((8, 8), np.uint8))], k=1)
    assert len(out) == 0 and out.shortfall


def test_maskset_invariants():
    m = _sq(0, 0, 2)
    with pytest.raises(ValueError):
        MaskSet([MaskEntry((0, 0), m, 4), MaskEntry((0, 0), m, 4)])
    with pytest.raises(ValueError):
        MaskSet([MaskEntry((0, 0), m, 4), MaskEntry((1, 1), m, 9)])


def test_grid_points():
    assert grid_points(16, 16, 8) == [(4, 4), (12, 4), (4, 12), (12, 12)]
    with pytest.raises(ValueError):
        grid_points(64, 64, 7)


# -- trained model -----------------------------------------------------------------------


@pytest.mark.slow
def test_trained_model_heldout_iou(trained_model):
    assert np.mean(evaluate(trained_model, heldout_prompts(100))) >= 0.85


@pytest.mark.slow
def test_prompt_inside_shape_usually_segments_it(trained_model):
    scores = []
    for seed in range(30):
        s = generate_scene(50_000 + seed)
        for m in s.masks:
            ys, xs = np.nonzero(m)
            i = len(ys) // 3  # an off-center pixel of the shape
            scores.append(iou(binarize(predict(trained_model, s.image, (xs[i], ys[i]))), m))
    assert np.mean(np.array(scores) >= 0.7) >= 0.8


@pytest.mark.slow
def test_auto_masks_find_each_shape(trained_model):
    cfg = SceneConfig(min_shapes=3, max_shapes=3)
    hits = 0
    for seed in range(40):
        s = generate_scene(60_000 + seed, cfg)
        found = auto_masks(trained_model, s.image, 8, 3)
        matched = sorted(int(np.argmax([iou(e.mask, t) for t in s.masks])) for e in found)
        hits += matched == [0, 1, 2] and all(max(iou(e.mask, t) for t in s.masks) > 0.8 for e in found)
        for e in found:
            assert e.mask[e.mask_id[1], e.mask_id[0]] == 1
        for i, a in enumerate(found.entries):
            for b in found.entries[i + 1 :]:
                assert iou(a.mask, b.mask) <= 0.9
    # stable partial masks from off-center grid prompts can displace a small object
    assert hits >= 36


@pytest.mark.slow
def test_auto_masks_k1_and_determinism(trained_model):
    img = generate_scene(70_000).image
    a = auto_masks(trained_model, img, 8, 1)
    b = auto_masks(trained_model, img, 8, 1)
    assert len(a) == 1 and a.ids == b.ids
    assert a.entries[0].mask.tobytes() == b.entries[0].mask.tobytes()
