"""Query-only attacks: SIMBA over pixel or low-frequency DCT directions, and
PGD on a surrogate ensemble transferred to a query-only victim."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import fft

from .metrics import binarize, iou
from .refmodel.model import SegModel, as_image, loss_and_gradient, predict, squared_error
from .whitebox import AttackObjective, AttackResult, perturbation_metrics, stop_reached

SIMBA_EPSILON = 8.0


class QueryError(RuntimeError):
    def __init__(self, index: int, cause: BaseException):
        self.index = index
        super().__init__(f"query {index} failed: {cause!r}")


def dct2(x) -> np.ndarray:
    """Orthonormal type-II DCT over the two leading (spatial) axes."""
    return fft.dctn(np.asarray(x, np.float64), type=2, norm="ortho", axes=(0, 1))


def idct2(coeffs) -> np.ndarray:
    return fft.idctn(np.asarray(coeffs, np.float64), type=2, norm="ortho", axes=(0, 1))


class ModelQuery:
    """Black-box view of a model: image in, probability mask out."""

    thread_safe = True

    def __init__(self, model: SegModel, prompt):
        self._model = model
        self._prompt = prompt
        self.count = 0

    def __call__(self, image) -> np.ndarray:
        self.count += 1
        return predict(self._model, image, self._prompt)


@dataclass
class Basis:
    """Orthonormal search directions visited in seeded random order.

    ``pixel`` walks every image entry; ``dct`` walks the lowest
    ``ceil(H/4) x ceil(W/4)`` frequencies of every channel. Each pass is a
    fresh permutation covering every direction once.
    """

    kind: str
    shape: tuple[int, int, int]
    seed: int = 0
    indices: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        h, w, c = self.shape
        if self.kind == "pixel":
            idx = np.arange(h * w * c)
        elif self.kind == "dct":
            fh, fw = math.ceil(h / 4), math.ceil(w / 4)
            u, v, ch = np.meshgrid(np.arange(fh), np.arange(fw), np.arange(c), indexing="ij")
            idx = np.ravel_multi_index((u.ravel(), v.ravel(), ch.ravel()), (h, w, c))
        else:
            raise ValueError(f"unknown basis kind {self.kind!r}")
        self.indices = np.sort(idx)

    def __len__(self):
        return self.indices.size

    def order(self, passes: int | None = None):
        """Yield direction indices pass after pass (forever when ``passes`` is None)."""
        rng = np.random.default_rng(self.seed)
        p = 0
        while passes is None or p < passes:
            yield from self.indices[rng.permutation(self.indices.size)]
            p += 1

    def vector(self, index: int) -> np.ndarray:
        v = np.zeros(self.shape, np.float64)
        v.flat[index] = 1.0
        return v if self.kind == "pixel" else idct2(v)


def _query(fn, image, index):
    try:
        prob = np.asarray(fn(image))
    except Exception as exc:
        raise QueryError(index, exc) from exc
    return prob


def simba_attack(
    query_fn: Callable,
    image,
    objective: AttackObjective,
    epsilon: float = SIMBA_EPSILON,
    max_queries: int = 20_000,
    basis: Basis | str = "dct",
    stop: float | None = None,
    seed: int = 0,
    time_budget: float | None = None,
) -> AttackResult:
    """Greedy coordinate search along basis directions.

    For each direction ``q`` try ``x + eps*q`` then ``x - eps*q`` and keep the
    first that lowers the loss. The clean-image query counts toward
    ``max_queries``. ``time_budget`` (seconds) optionally caps wall-clock time.
    """
    x0 = as_image(image).astype(np.float32)
    if isinstance(basis, str):
        basis = Basis(basis, x0.shape, seed)
    if tuple(basis.shape) != x0.shape:
        raise ValueError(f"basis shape {basis.shape} does not match image {x0.shape}")
    target = objective.target
    threshold = objective.stop_default() if stop is None else stop
    start = time.perf_counter()

    prob = _query(query_fn, x0, 0)
    queries = 1
    original = binarize(prob)
    loss = squared_error(prob, target)
    x = x0
    trace = []
    reason = "max_queries"
    for index in basis.order():
        if queries >= max_queries:
            break
        if time_budget is not None and time.perf_counter() - start > time_budget:
            reason = "time_budget"
            break
        step = (epsilon * basis.vector(index)).astype(np.float32)
        accepted = 0
        for sign in (1, -1):
            if queries >= max_queries:
                break
            cand = np.clip(x + sign * step, 0.0, 255.0).astype(np.float32)
            p = _query(query_fn, cand, queries)
            queries += 1
            cand_loss = squared_error(p, target)
            if cand_loss < loss:
                x, loss, prob, accepted = cand, cand_loss, p, sign
                break
        mask = binarize(prob)
        io, it_ = iou(mask, original), iou(mask, target)
        trace.append(
            {"iteration": len(trace) + 1, "loss": loss, "iou": io, "iou_target": it_,
             "accepted": accepted, "queries": queries}
        )
        if accepted and stop_reached(objective, threshold, io, it_):
            reason = "stop_threshold"
            break

    mask = binarize(prob)
    metrics = {
        "iou": iou(mask, original),
        "iou_target": iou(mask, target),
        "loss": loss,
        **perturbation_metrics(x0, x),
    }
    return AttackResult(x, original, len(trace), trace, metrics, reason, f"simba-{basis.kind}", queries)


@dataclass
class Ensemble:
    surrogates: Sequence[SegModel]
    weights: np.ndarray | None = None

    def __post_init__(self):
        if len(self.surrogates) < 2:
            raise ValueError("an ensemble needs at least two surrogates")
        w = np.ones(len(self.surrogates)) if self.weights is None else np.asarray(self.weights, float)
        if w.shape != (len(self.surrogates),) or (w < 0).any() or w.sum() <= 0:
            raise ValueError("weights must be nonnegative, one per surrogate, not all zero")
        self.weights = w / w.sum()

    def gradient(self, image, prompt, target) -> np.ndarray:
        g = np.zeros(as_image(image).shape, np.float64)
        for wgt, model in zip(self.weights, self.surrogates):
            g += wgt * loss_and_gradient(model, image, prompt, target)[1]
        return g


def ensemble_pgd_attack(
    victim_query_fn: Callable,
    ensemble: Ensemble,
    image,
    prompt,
    objective: AttackObjective,
    eps_step: float = 1.0,
    eps_ball: float = 32.0,
    iters: int = 50,
    stop: float | None = None,
    time_budget: float | None = None,
) -> AttackResult:
    """Sign-gradient PGD on the weighted surrogate loss, one victim query per step.

    Returns the iterate with the lowest victim loss seen (possibly the clean image).
    """
    if not ensemble.surrogates:
        raise ValueError("empty ensemble")
    if eps_ball < 0 or eps_step <= 0 or iters < 1:
        raise ValueError("need eps_ball >= 0, eps_step > 0, iters >= 1")
    x0 = as_image(image).astype(np.float32)
    target = objective.target
    threshold = objective.stop_default() if stop is None else stop
    lo = np.clip(x0 - np.float32(eps_ball), 0, 255)
    hi = np.clip(x0 + np.float32(eps_ball), 0, 255)
    start = time.perf_counter()

    prob = _query(victim_query_fn, x0, 0)
    queries = 1
    original = binarize(prob)
    best = (squared_error(prob, target), x0, prob)
    x = x0
    trace = []
    reason = "max_iters"
    for it in range(1, iters + 1):
        if time_budget is not None and time.perf_counter() - start > time_budget:
            reason = "time_budget"
            break
        g = ensemble.gradient(x, prompt, target)
        x = (x - np.float32(eps_step) * np.sign(g).astype(np.float32)).astype(np.float32)
        x = np.clip(x, lo, hi).astype(np.float32)
        p = _query(victim_query_fn, x, queries)
        queries += 1
        loss = squared_error(p, target)
        if loss < best[0]:
            best = (loss, x, p)
        mask = binarize(p)
        io, it_ = iou(mask, original), iou(mask, target)
        trace.append({"iteration": it, "loss": loss, "iou": io, "iou_target": it_, "queries": queries})
        if stop_reached(objective, threshold, io, it_):
            reason = "stop_threshold"
            break

    loss, xb, pb = best
    mask = binarize(pb)
    metrics = {
        "iou": iou(mask, original),
        "iou_target": iou(mask, target),
        "loss": loss,
        **perturbation_metrics(x0, xb),
    }
    return AttackResult(xb, original, len(trace), trace, metrics, reason, "ensemble-pgd", queries)
