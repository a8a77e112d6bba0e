"""Robustness of an adversarial example to added Gaussian noise.

For each noise level the attacked image gets zero-centered Gaussian noise,
is clamped to [0, 255] and re-segmented at the same prompt. The resulting
mask is compared with the pre-attack mask and with the attacked mask. The
attack's own L2 distance is kept alongside so a sweep can be read against
the size of the perturbation that produced it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..metrics import binarize, iou, l2
from ..refmodel.model import SegModel, as_image, predict

SWEEP_COLUMNS = ("sigma", "iou_original", "iou_attacked", "iou_original_std", "trials")


class NoiseSweepError(ValueError):
    pass


@dataclass
class SweepResult:
    rows: list[dict] = field(default_factory=list)
    l2: float = 0.0

    @property
    def sigmas(self) -> list[float]:
        return [r["sigma"] for r in self.rows]

    def __post_init__(self):
        s = self.sigmas
        if any(b <= a for a, b in zip(s, s[1:])):
            raise NoiseSweepError("sigma values must be strictly increasing")


def _check_sigmas(sigmas) -> list[float]:
    sigmas = [float(s) for s in sigmas]
    if not sigmas:
        raise NoiseSweepError("need at least one sigma")
    if any(s < 0 or not np.isfinite(s) for s in sigmas):
        raise NoiseSweepError(f"sigma must be finite and nonnegative, got {sigmas}")
    if any(b <= a for a, b in zip(sigmas, sigmas[1:])):
        raise NoiseSweepError("sigma values must be strictly increasing")
    return sigmas


def noise_sweep(
    model: SegModel,
    prompt,
    original,
    attacked,
    sigmas,
    trials: int = 10,
    seed: int = 0,
    original_mask=None,
) -> SweepResult:
    """Sweep noise levels over one attacked image.

    ``original_mask`` defaults to the model's mask on ``original``. Trial ``t``
    at sigma index ``i`` draws from ``default_rng([seed, i, t])``. Every trial
    is predicted on its own, the same way the attack evaluated its final
    iterate, so sigma 0 reproduces the attack's IoU bit for bit.
    """
    sigmas = _check_sigmas(sigmas)
    if trials < 1:
        raise NoiseSweepError("trials must be at least 1")
    x0 = as_image(original)
    xa = as_image(attacked)
    if x0.shape != xa.shape:
        raise NoiseSweepError(f"original {x0.shape} and attacked {xa.shape} differ in shape")
    ref = binarize(predict(model, x0, prompt)) if original_mask is None else np.asarray(original_mask)
    adv_mask = binarize(predict(model, xa, prompt))
    rows = []
    for i, sigma in enumerate(sigmas):
        masks = []
        for t in range(trials):
            x = xa
            if sigma > 0.0:
                noise = np.random.default_rng([seed, i, t]).normal(0.0, sigma, xa.shape)
                x = np.clip(xa.astype(np.float64) + noise, 0.0, 255.0).astype(np.float32)
            masks.append(binarize(predict(model, x, prompt)))
        vs_orig = np.array([iou(m, ref) for m in masks])
        vs_adv = np.array([iou(m, adv_mask) for m in masks])
        rows.append(
            {
                "sigma": sigma,
                "iou_original": float(vs_orig.mean()),
                "iou_attacked": float(vs_adv.mean()),
                "iou_original_std": float(vs_orig.std()),
                "trials": trials,
            }
        )
    return SweepResult(rows, l2(x0, xa))


def aggregate_sweeps(results) -> SweepResult:
    """Average sweeps over images; all must share one sigma list."""
    results = list(results)
    if not results:
        raise NoiseSweepError("nothing to aggregate")
    sigmas = results[0].sigmas
    if any(r.sigmas != sigmas for r in results):
        raise NoiseSweepError("sweeps use different sigma lists")
    rows = []
    for j, sigma in enumerate(sigmas):
        orig = np.array([r.rows[j]["iou_original"] for r in results])
        rows.append(
            {
                "sigma": sigma,
                "iou_original": float(orig.mean()),
                "iou_attacked": float(np.mean([r.rows[j]["iou_attacked"] for r in results])),
                "iou_original_std": float(orig.std()),
                "trials": int(sum(r.rows[j]["trials"] for r in results)),
            }
        )
    return SweepResult(rows, float(np.mean([r.l2 for r in results])))
