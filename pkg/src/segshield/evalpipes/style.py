"""Corruption robustness through mask-ID matching.

Each clean image is segmented automatically; the center points of its ``k``
largest masks become mask IDs. The model is re-prompted at those IDs on the
clean image (reference masks) and on every corrupted copy, and the mean IoU
over IDs is recorded per image and corruption.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..metrics import binarize, mean_iou
from ..refmodel.automask import auto_masks
from ..refmodel.model import SegModel, as_image, predict_batch
from .corruptions import CorruptionSpec, corrupt

HIST_BINS = 10

ROW_COLUMNS = ("image", "spec", "n_masks", "shortfall", "mean_iou")
SUMMARY_COLUMNS = ("spec", "n_images", "mean", "std", "min", "max")
HISTOGRAM_COLUMNS = ("spec", "bin_lo", "bin_hi", "count")


@dataclass
class StyleReport:
    specs: list[str]
    rows: list[dict] = field(default_factory=list)

    def values(self, spec: str) -> np.ndarray:
        return np.array(
            [r["mean_iou"] for r in self.rows if r["spec"] == spec and r["mean_iou"] is not None]
        )

    def summary(self) -> list[dict]:
        out = []
        for spec in self.specs:
            v = self.values(spec)
            out.append(
                {
                    "spec": spec,
                    "n_images": int(v.size),
                    "mean": float(v.mean()) if v.size else None,
                    "std": float(v.std()) if v.size else None,
                    "min": float(v.min()) if v.size else None,
                    "max": float(v.max()) if v.size else None,
                }
            )
        return out

    def histogram(self, bins: int = HIST_BINS) -> list[dict]:
        edges = np.linspace(0.0, 1.0, bins + 1)
        out = []
        for spec in self.specs:
            counts, _ = np.histogram(self.values(spec), bins=edges)
            out.extend(
                {"spec": spec, "bin_lo": float(lo), "bin_hi": float(hi), "count": int(c)}
                for lo, hi, c in zip(edges[:-1], edges[1:], counts)
            )
        return out


def masks_at(model: SegModel, image, points) -> dict:
    if not points:
        return {}
    img = as_image(image)
    probs = predict_batch(model, np.repeat(img[None], len(points), axis=0), list(points))
    return {tuple(p): binarize(m) for p, m in zip(points, probs)}


def style_robustness_eval(
    model: SegModel,
    images,
    specs,
    k: int = 3,
    grid_step: int = 8,
    names=None,
) -> StyleReport:
    if k < 1:
        raise ValueError("k must be at least 1")
    specs = [s if isinstance(s, CorruptionSpec) else CorruptionSpec.parse(s) for s in specs]
    names = list(names) if names is not None else [str(i) for i in range(len(images))]
    report = StyleReport([s.label for s in specs])
    for name, image in zip(names, images):
        img = as_image(image)
        found = auto_masks(model, img, grid_step, k)
        ids = found.ids
        reference = masks_at(model, img, ids)
        for spec in specs:
            score = None
            if reference:
                score = mean_iou(reference, masks_at(model, corrupt(img, spec), ids))
            report.rows.append(
                {
                    "image": name,
                    "spec": spec.label,
                    "n_masks": len(ids),
                    "shortfall": found.shortfall,
                    "mean_iou": score,
                }
            )
    return report
