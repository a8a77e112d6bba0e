import math

import numpy as np
import pytest

from segshield.blackbox import (
    Basis,
    Ensemble,
    ModelQuery,
    QueryError,
    dct2,
    ensemble_pgd_attack,
    idct2,
    simba_attack,
)
from segshield.metrics import binarize
from segshield.refmodel import generate_scene, heldout_prompts, init_model, predict
from segshield.whitebox import AttackObjective


def cosine_matrix(n):
    """Explicit orthonormal DCT-II matrix, built from its defining formula."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    c = np.cos(math.pi * (2 * i + 1) * k / (2 * n)) * math.sqrt(2 / n)
    c[0] /= math.sqrt(2)
    return c


# -- DCT -----------------------------------------------------------------------------


@pytest.mark.parametrize("h,w", [(1, 1), (4, 6), (8, 8), (7, 5)])
def test_dct_matches_cosine_matrix(h, w):
    x = np.random.default_rng(h * w).uniform(0, 255, (h, w))
    want = cosine_matrix(h) @ x @ cosine_matrix(w).T
    np.testing.assert_allclose(dct2(x), want, rtol=1e-10, atol=1e-9)


def test_dct_round_trip_and_parseval():
    x = np.random.default_rng(0).uniform(0, 255, (64, 64))
    c = dct2(x)
    assert np.abs(idct2(c) - x).max() < 1e-4
    assert abs((c**2).sum() - (x**2).sum()) / (x**2).sum() < 1e-3


def test_dct_of_constant_is_dc_only():
    c = dct2(np.full((64, 64), 37.0))
    assert c[0, 0] == pytest.approx(37.0 * 64)
    c[0, 0] = 0
    assert np.abs(c).max() < 1e-9


def test_dct_acts_per_channel():
    x = np.random.default_rng(1).normal(size=(8, 8, 2))
    c = dct2(x)
    np.testing.assert_allclose(c[..., 1], dct2(x[..., 1]), atol=1e-12)


# -- basis ---------------------------------------------------------------------------


def test_basis_sizes_and_orthonormality():
    b = Basis("dct", (16, 16, 1), seed=0)
    assert len(b) == 4 * 4
    vs = np.stack([b.vector(i).ravel() for i in b.indices])
    np.testing.assert_allclose(vs @ vs.T, np.eye(len(b)), atol=1e-10)
    assert len(Basis("pixel", (5, 3, 2))) == 30
    assert len(Basis("dct", (9, 9, 1))) == 9  # ceil(9/4) = 3 per side


def test_basis_order_covers_each_index_once_per_pass():
    b = Basis("dct", (12, 12, 1), seed=4)
    seq = list(b.order(passes=2))
    n = len(b)
    assert sorted(seq[:n]) == sorted(b.indices.tolist())
    assert sorted(seq[n:]) == sorted(b.indices.tolist())
    assert seq[:n] != seq[n:]
    assert list(Basis("dct", (12, 12, 1), seed=4).order(1)) == seq[:n]


def test_basis_unknown_kind():
    with pytest.raises(ValueError):
        Basis("wavelet", (4, 4, 1))


# -- SIMBA ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def toy():
    m = init_model(21)
    s = generate_scene(9)
    p = (int(s.shapes[0].cx), int(s.shapes[0].cy))
    orig = binarize(predict(m, s.image, p))
    return m, s.image, p, AttackObjective.invert(orig)


@pytest.mark.parametrize("budget", [1, 2, 3, 50, 201])
def test_simba_budget_and_monotone_loss(toy, budget):
    m, img, p, obj = toy
    q = ModelQuery(m, p)
    r = simba_attack(q, img, obj, max_queries=budget, basis="pixel", seed=1)
    assert r.queries == q.count <= budget
    losses = [t["loss"] for t in r.trace]
    assert all(b <= a for a, b in zip(losses, losses[1:]))
    assert r.queries <= 1 + 2 * len(r.trace)
    assert r.adversarial.min() >= 0 and r.adversarial.max() <= 255


def test_simba_accepts_only_improvements(toy):
    m, img, p, obj = toy
    r = simba_attack(ModelQuery(m, p), img, obj, max_queries=120, basis="dct", seed=2)
    prev = None
    for t in r.trace:
        if prev is not None and t["accepted"]:
            assert t["loss"] < prev
        if prev is not None and not t["accepted"]:
            assert t["loss"] == prev
        prev = t["loss"]


def test_simba_is_seeded(toy):
    m, img, p, obj = toy
    a = simba_attack(ModelQuery(m, p), img, obj, max_queries=60, seed=5)
    b = simba_attack(ModelQuery(m, p), img, obj, max_queries=60, seed=5)
    assert a.adversarial.tobytes() == b.adversarial.tobytes()


def test_simba_query_failure_carries_index(toy):
    m, img, p, obj = toy
    calls = {"n": 0}

    def flaky(x):
        calls["n"] += 1
        if calls["n"] == 4:
            raise RuntimeError("backend down")
        return predict(m, x, p)

    with pytest.raises(QueryError) as err:
        simba_attack(flaky, img, obj, max_queries=50)
    assert err.value.index == 3


# -- ensemble PGD --------------------------------------------------------------------


def test_ensemble_weights():
    ms = [init_model(1), init_model(2)]
    assert np.allclose(Ensemble(ms).weights, [0.5, 0.5])
    assert np.allclose(Ensemble(ms, [3, 1]).weights, [0.75, 0.25])
    with pytest.raises(ValueError):
        Ensemble(ms[:1])
    with pytest.raises(ValueError):
        Ensemble(ms, [-1, 2])


@pytest.mark.parametrize("ball", [0.0, 3.0])
def test_ensemble_pgd_respects_ball(toy, ball):
    m, img, p, obj = toy
    ens = Ensemble([init_model(1), init_model(2)])
    q = ModelQuery(m, p)
    r = ensemble_pgd_attack(q, ens, img, p, obj, eps_step=1.0, eps_ball=ball, iters=6)
    assert np.abs(r.adversarial - img).max() <= ball
    assert r.adversarial.min() >= 0 and r.adversarial.max() <= 255
    assert r.queries == q.count == 1 + r.iterations
    if ball == 0:
        assert r.adversarial.tobytes() == img.tobytes()


def test_ensemble_pgd_validates(toy):
    m, img, p, obj = toy
    ens = Ensemble([init_model(1), init_model(2)])
    with pytest.raises(ValueError):
        ensemble_pgd_attack(ModelQuery(m, p), ens, img, p, obj, eps_ball=-1)


# -- trained model -------------------------------------------------------------------


@pytest.mark.slow
def test_dct_basis_beats_pixel_basis(trained_model):
    finals = {"dct": [], "pixel": []}
    for img, p, _ in heldout_prompts(3):
        orig = binarize(predict(trained_model, img, p))
        obj = AttackObjective.invert(orig)
        for kind in finals:
            r = simba_attack(ModelQuery(trained_model, p), img, obj, max_queries=3000, basis=kind, seed=0)
            finals[kind].append(r.metrics["iou"])
    assert np.mean(finals["dct"]) < np.mean(finals["pixel"])
