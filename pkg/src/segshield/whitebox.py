"""Gradient-sign attacks on the segmentation mask: FGSM*, FIGA and JSMA (FIGA, k=1)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import font
from .metrics import binarize, iou, l2, linf, mse
from .refmodel.model import as_image, loss_and_gradient, predict

METHODS = ("fgsm", "figa", "jsma")
# FIGA operating point reported for 1024x1024x3 inputs
REFERENCE_K = 2653
REFERENCE_ENTRIES = 1024 * 1024 * 3
FIGA_EPSILON = 5.0
FGSM_EPSILON = 1.0
STOP_INVERT = 0.01
STOP_TARGET = 0.9


class AttackConfigError(ValueError):
    pass


def scaled_k(shape, k: int = REFERENCE_K) -> int:
    """``k`` rescaled to the entry count of ``shape``, at least 1."""
    n = int(np.prod(shape))
    if n >= REFERENCE_ENTRIES:
        return min(k, n)
    return max(1, round(k * n / REFERENCE_ENTRIES))


@dataclass(frozen=True)
class AttackObjective:
    """Target mask ``Y`` for the loss ``sum((sigmoid(model(p, X)) - Y)^2)``.

    ``lam`` is the perturbation trade-off weight; sign-step updates bound the
    perturbation through epsilon and the iteration count instead, so it is
    recorded only.
    """

    target: np.ndarray
    mode: str = "custom"
    lam: float = 0.0

    def __post_init__(self):
        if self.mode not in ("invert", "custom"):
            raise AttackConfigError(f"unknown objective mode {self.mode!r}")
        t = np.asarray(self.target)
        if t.ndim != 2 or not np.isin(t, (0, 1)).all():
            raise AttackConfigError("target must be a 2-D binary mask")
        object.__setattr__(self, "target", t.astype(np.uint8))

    @classmethod
    def invert(cls, original_mask, lam: float = 0.0) -> "AttackObjective":
        return cls(1 - np.asarray(original_mask, np.uint8), "invert", lam)

    @classmethod
    def custom(cls, target, lam: float = 0.0) -> "AttackObjective":
        return cls(np.asarray(target, np.uint8), "custom", lam)

    @classmethod
    def destroy(cls, shape, lam: float = 0.0) -> "AttackObjective":
        """Custom objective with an empty target: erase the mask."""
        return cls(np.zeros(shape, np.uint8), "custom", lam)

    def stop_default(self) -> float:
        return STOP_INVERT if self.mode == "invert" else STOP_TARGET


@dataclass(frozen=True)
class AttackConfig:
    method: str = "fgsm"
    epsilon: float = FGSM_EPSILON
    k: int | None = None
    max_iters: int = 200
    stop: float | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise AttackConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not self.epsilon > 0:
            raise AttackConfigError("epsilon must be positive")
        if self.max_iters < 1:
            raise AttackConfigError("max_iters must be at least 1")
        if self.method == "figa" and self.k is None:
            raise AttackConfigError("k is required for method 'figa'")
        if self.method == "jsma":
            if self.k not in (None, 1):
                raise AttackConfigError("jsma modifies exactly one entry per step (k=1)")
            object.__setattr__(self, "k", 1)
        if self.k is not None and self.k < 1:
            raise AttackConfigError("k must be at least 1")

    def k_for(self, shape) -> int | None:
        if self.method == "fgsm":
            return None
        n = int(np.prod(shape))
        if self.k > n:
            raise AttackConfigError(f"k={self.k} exceeds the {n} image entries")
        return self.k

    @classmethod
    def figa_default(cls, shape, max_iters: int = 200, stop: float | None = None):
        return cls("figa", FIGA_EPSILON, scaled_k(shape), max_iters, stop)


@dataclass
class AttackResult:
    adversarial: np.ndarray
    original_mask: np.ndarray
    iterations: int
    trace: list[dict] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    stop_reason: str = "max_iters"
    method: str = ""
    queries: int | None = None


def top_k_mask(v: np.ndarray, k: int) -> np.ndarray:
    """Keep exactly the ``k`` largest-magnitude entries of ``v``; zero the rest.

    Entries tied at the k-th magnitude are kept in ascending linear index order.
    """
    flat = v.reshape(-1)
    if not 1 <= k <= flat.size:
        raise AttackConfigError(f"k={k} outside 1..{flat.size}")
    if k == flat.size:
        return v.copy()
    order = np.argsort(-np.abs(flat), kind="stable")
    out = np.zeros_like(flat)
    keep = order[:k]
    out[keep] = flat[keep]
    return out.reshape(v.shape)


def sign_step(x: np.ndarray, grad: np.ndarray, epsilon: float, k: int | None = None):
    """``clamp(x - epsilon * sign(v), 0, 255)`` with ``v`` the (top-k) gradient.

    Returns the new image and the number of selected entries whose update
    was cut by the clamp.
    """
    v = grad if k is None else top_k_mask(grad, k)
    s = np.sign(v).astype(np.float32)
    moved = x - np.float32(epsilon) * s
    out = np.clip(moved, 0.0, 255.0).astype(np.float32)
    saturated = int(np.count_nonzero((moved != out) & (s != 0)))
    return out, saturated


def _check_step_inputs(x, target):
    x = as_image(x)
    t = np.asarray(target)
    if t.shape != x.shape[:2]:
        raise AttackConfigError(f"target dims {t.shape} do not match image {x.shape[:2]}")
    return x, t


def fgsm_star_step(model, prompt, x, target, epsilon: float = FGSM_EPSILON) -> np.ndarray:
    x, target = _check_step_inputs(x, target)
    _, grad, _ = loss_and_gradient(model, x, prompt, target)
    return sign_step(x, grad, epsilon)[0]


def figa_step(model, prompt, x, target, epsilon: float, k: int) -> np.ndarray:
    x, target = _check_step_inputs(x, target)
    _, grad, _ = loss_and_gradient(model, x, prompt, target)
    return sign_step(x, grad, epsilon, k)[0]


def perturbation_metrics(original, adversarial) -> dict:
    return {
        "mse": mse(adversarial, original),
        "linf": linf(adversarial, original),
        "l2": l2(adversarial, original),
    }


def stop_reached(objective: AttackObjective, threshold: float, iou_orig: float, iou_target: float):
    if objective.mode == "invert":
        return iou_orig < threshold
    return iou_target > threshold


def run_attack(model, prompt, image, objective: AttackObjective, config: AttackConfig) -> AttackResult:
    """Iterate the configured step until the stop threshold or ``max_iters``.

    Trace entries hold the loss and IoU of the image after each step.
    """
    x0 = as_image(image)
    x, target = _check_step_inputs(x0, objective.target)
    k = config.k_for(x.shape)
    threshold = objective.stop_default() if config.stop is None else config.stop
    original = binarize(predict(model, x0, prompt))

    loss, grad, prob = loss_and_gradient(model, x, prompt, target)
    trace = []
    reason = "max_iters"
    for it in range(1, config.max_iters + 1):
        selected = int(np.count_nonzero(grad)) if k is None else min(k, grad.size)
        x, saturated = sign_step(x, grad, config.epsilon, k)
        loss, grad, prob = loss_and_gradient(model, x, prompt, target)
        mask = binarize(prob)
        io, it_ = iou(mask, original), iou(mask, target)
        trace.append(
            {
                "iteration": it,
                "loss": loss,
                "iou": io,
                "iou_target": it_,
                "saturated_fraction": saturated / selected if selected else 0.0,
            }
        )
        if stop_reached(objective, threshold, io, it_):
            reason = "stop_threshold"
            break

    final_mask = binarize(prob)
    metrics = {
        "iou": iou(final_mask, original),
        "iou_target": iou(final_mask, target),
        "loss": loss,
        **perturbation_metrics(x0, x),
    }
    return AttackResult(x, original, len(trace), trace, metrics, reason, config.method)


def text_target(text: str, h: int, w: int, scale: int | None = None) -> np.ndarray:
    """Binary ``h x w`` mask with ``text`` rendered centred in the 5x7 font.

    Without ``scale`` the largest integer scale that fits is used.
    """
    text = text.upper()
    for ch in text:
        font.glyph(ch)
    mask = np.zeros((h, w), np.uint8)
    if not text:
        return mask
    base = font.render(text, 1)
    if scale is None:
        scale = min(w // base.shape[1], h // base.shape[0])
    if scale < 1 or base.shape[1] * scale > w or base.shape[0] * scale > h:
        raise AttackConfigError(f"text {text!r} does not fit a {w}x{h} mask")
    bitmap = font.render(text, scale)
    bh, bw = bitmap.shape
    top, left = (h - bh) // 2, (w - bw) // 2
    mask[top : top + bh, left : left + bw] = bitmap
    return mask
