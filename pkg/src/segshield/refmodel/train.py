"""Seeded training of the reference model on synthetic scenes."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit

from ..metrics import binarize, center_point, iou
from ..numcore import NonFiniteError, backward, forward
from .model import SegModel, build_graph, init_model, model_input, param_shapes, predict_batch
from .scenes import SceneConfig, generate_scene

log = logging.getLogger(__name__)

HELDOUT_SEED_BASE = 1_000_000_000_000


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int):
        self.step = step
        super().__init__(f"training loss became non-finite at step {step}")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    lr: float = 0.01
    batch: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # prompts are drawn from shape pixels within this fraction of the extent
    # around the shape's center point
    prompt_spread: float = 0.5

    def __post_init__(self):
        if self.steps < 0 or self.batch < 1 or self.lr <= 0:
            raise ValueError(f"invalid training config {self}")


def bce_with_logits(logits, target):
    """Mean binary cross-entropy and its gradient w.r.t. the logits."""
    z = np.asarray(logits, np.float64)
    y = np.asarray(target, np.float64)
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    p = expit(z)
    return float(loss.mean()), (p - y) / z.size


def sample_prompt(rng, mask, spread: float):
    """A prompt inside ``mask`` near its center point."""
    cx, cy = center_point(mask)
    if spread <= 0:
        return cx, cy
    ys, xs = np.nonzero(mask)
    extent = max(xs.max() - xs.min(), ys.max() - ys.min()) / 2
    near = (xs - cx) ** 2 + (ys - cy) ** 2 <= (spread * extent) ** 2
    i = int(rng.integers(np.count_nonzero(near)))
    return int(xs[near][i]), int(ys[near][i])


def sample_batch(rng, batch: int, scene_cfg: SceneConfig, spread: float):
    images, prompts, targets = [], [], []
    for _ in range(batch):
        scene = generate_scene(int(rng.integers(2**62)), scene_cfg)
        j = int(rng.integers(len(scene.shapes)))
        images.append(scene.image)
        prompts.append(sample_prompt(rng, scene.masks[j], spread))
        targets.append(scene.masks[j])
    return np.stack(images), prompts, np.stack(targets).astype(np.float32)


def train(
    seed: int,
    steps: int = 2000,
    lr: float = 0.01,
    batch: int = 8,
    scene_cfg: SceneConfig | None = None,
    config: TrainConfig | None = None,
    log_every: int = 0,
) -> SegModel:
    """Train a fresh model with Adam on mean BCE; deterministic in ``seed``.

    The returned model carries its per-step loss trace.
    """
    cfg = config or TrainConfig(steps=steps, lr=lr, batch=batch)
    scene_cfg = scene_cfg or SceneConfig()
    model = init_model(seed)
    rng = np.random.default_rng([seed, 1])
    names = list(param_shapes(model.channels))
    m = {k: np.zeros(model.params[k].shape) for k in names}
    v = {k: np.zeros(model.params[k].shape) for k in names}
    size = scene_cfg.size
    graph = build_graph(model.channels, cfg.batch, size, size)
    trace = []
    for step in range(1, cfg.steps + 1):
        images, prompts, targets = sample_batch(rng, cfg.batch, scene_cfg, cfg.prompt_spread)
        inputs = dict(model.params)
        inputs["x"] = model_input(model, images, prompts)
        try:
            values = forward(graph, inputs)
            loss, dlogits = bce_with_logits(values["logits"][..., 0], targets)
            if not np.isfinite(loss):
                raise TrainingDivergedError(step)
            grads = backward(graph, values, {"logits": dlogits[..., None]}, names)
        except NonFiniteError as exc:
            raise TrainingDivergedError(step) from exc
        b1t = 1 - cfg.beta1**step
        b2t = 1 - cfg.beta2**step
        for k in names:
            g = grads[k].astype(np.float64)
            m[k] = cfg.beta1 * m[k] + (1 - cfg.beta1) * g
            v[k] = cfg.beta2 * v[k] + (1 - cfg.beta2) * g * g
            upd = cfg.lr * (m[k] / b1t) / (np.sqrt(v[k] / b2t) + cfg.adam_eps)
            model.params[k] = (model.params[k] - upd).astype(np.float32)
            if not np.isfinite(model.params[k]).all():
                raise TrainingDivergedError(step)
        trace.append(loss)
        if log_every and step % log_every == 0:
            log.info("step %d loss %.5f", step, loss)
    model.loss_trace = trace
    model.train_config = {**asdict(cfg), "scene": asdict(scene_cfg)}
    return model


def heldout_prompts(n: int = 100, scene_cfg: SceneConfig | None = None, base: int = HELDOUT_SEED_BASE):
    """``n`` held-out (image, prompt, truth mask) triples; prompts at center points."""
    scene_cfg = scene_cfg or SceneConfig()
    out = []
    for i in range(n):
        scene = generate_scene(base + i, scene_cfg)
        j = i % len(scene.shapes)
        out.append((scene.image, center_point(scene.masks[j]), scene.masks[j]))
    return out


def evaluate(model: SegModel, samples, batch: int = 20) -> list[float]:
    """Per-sample IoU of the binarised prediction against the truth mask."""
    scores = []
    for i in range(0, len(samples), batch):
        chunk = samples[i : i + batch]
        probs = predict_batch(model, np.stack([s[0] for s in chunk]), [s[1] for s in chunk])
        scores.extend(iou(binarize(p), s[2]) for p, s in zip(probs, chunk))
    return scores
