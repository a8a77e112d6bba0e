"""Automatic mask generation: prompt a point grid, dedupe, keep the largest."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..metrics import binarize, center_point, iou
from .model import SegModel, as_image, predict_batch

DEDUP_IOU = 0.9
REFINE_ROUNDS = 3


@dataclass(frozen=True)
class MaskEntry:
    mask_id: tuple[int, int]
    mask: np.ndarray
    area: int
    prompt: tuple[int, int] | None = None


@dataclass
class MaskSet:
    """Masks keyed by center point, sorted by descending area."""

    entries: list[MaskEntry] = field(default_factory=list)
    shortfall: bool = False
    requested: int = 0

    def __post_init__(self):
        ids = [e.mask_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("mask ids must be unique")
        areas = [e.area for e in self.entries]
        if areas != sorted(areas, reverse=True):
            raise ValueError("entries must be sorted by descending area")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def ids(self) -> list[tuple[int, int]]:
        return [e.mask_id for e in self.entries]

    def as_dict(self) -> dict:
        return {e.mask_id: e.mask for e in self.entries}


def grid_points(h: int, w: int, step: int) -> list[tuple[int, int]]:
    if step < 1 or h % step or w % step:
        raise ValueError(f"grid step {step} must divide the image size {h}x{w}")
    off = step // 2
    return [(x, y) for y in range(off, h, step) for x in range(off, w, step)]


def select_masks(candidates, k: int) -> MaskSet:
    """Dedupe ``(prompt, binary mask)`` candidates and keep the ``k`` largest.

    Candidates are visited largest first (stable on input order), so of any
    pair with IoU above 0.9 the larger survives. Empty masks are dropped.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    scored = [(int(np.count_nonzero(m)), i, p, m) for i, (p, m) in enumerate(candidates)]
    scored.sort(key=lambda t: (-t[0], t[1]))
    kept: list[MaskEntry] = []
    for area, _, prompt, mask in scored:
        if area == 0:
            continue
        if any(iou(mask, e.mask) > DEDUP_IOU for e in kept):
            continue
        cid = center_point(mask)
        if any(cid == e.mask_id for e in kept):
            continue
        kept.append(MaskEntry(cid, mask, area, tuple(prompt)))
        if len(kept) == k:
            break
    return MaskSet(kept, shortfall=len(kept) < k, requested=k)


def _prompt_masks(model, img, points, batch):
    out = []
    for i in range(0, len(points), batch):
        chunk = points[i : i + batch]
        probs = predict_batch(model, np.repeat(img[None], len(chunk), axis=0), chunk)
        out.extend(binarize(m) for m in probs)
    return out


def _on_prompt(candidates):
    return [(p, m) for p, m in candidates if m[p[1], p[0]]]


def auto_masks(
    model: SegModel,
    image,
    grid_step: int = 8,
    k: int = 3,
    refine_rounds: int = REFINE_ROUNDS,
    batch: int = 16,
) -> MaskSet:
    """Masks of the ``k`` largest objects found by prompting a point grid.

    A candidate counts only if its mask covers its own prompt. Surviving
    candidates are re-prompted at their mask's center point until the points
    stop moving (at most ``refine_rounds`` times), which turns masks from
    off-center prompts into whole-object masks before deduplication.
    """
    img = as_image(image)
    h, w, _ = img.shape
    points = grid_points(h, w, grid_step)
    candidates = _on_prompt(list(zip(points, _prompt_masks(model, img, points, batch))))
    for _ in range(refine_rounds):
        centers = [center_point(m) for _, m in candidates]
        if centers == [p for p, _ in candidates]:
            break
        candidates = _on_prompt(list(zip(centers, _prompt_masks(model, img, centers, batch))))
    return select_masks(candidates, k)
