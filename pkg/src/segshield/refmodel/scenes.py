"""Seeded synthetic scenes of bright disks and rectangles on a dark background."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import distance_transform_edt

MAX_TRIES = 1000


class SceneGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    """Scene distribution.

    ``extent`` bounds a disk's radius or a rectangle's half-width/half-height.
    ``separation`` is the minimum pixel distance between any two shapes.
    """

    size: int = 64
    min_shapes: int = 1
    max_shapes: int = 3
    kinds: tuple[str, ...] = ("disk", "rectangle")
    extent: tuple[int, int] = (6, 10)
    # moderate contrast (40 to 80 levels): a small model segments it near
    # perfectly while eps=1 sign steps can still flip it within ~100 steps
    background: tuple[int, int] = (40, 60)
    foreground: tuple[int, int] = (100, 120)
    min_contrast: int = 40
    separation: int = 8

    def __post_init__(self):
        lo, hi = self.extent
        if not 6 <= lo <= hi <= 16:
            raise ValueError(f"extent {self.extent} must lie within [6, 16]")
        if not 1 <= self.min_shapes <= self.max_shapes <= 3:
            raise ValueError("scenes hold 1 to 3 shapes")
        if self.min_contrast < 40:
            raise ValueError("shape/background contrast must be at least 40")
        if self.foreground[1] < self.background[0] + self.min_contrast:
            raise ValueError("foreground range cannot reach the required contrast")
        if any(k not in ("disk", "rectangle") for k in self.kinds) or not self.kinds:
            raise ValueError(f"unknown shape kinds {self.kinds}")
        if 2 * hi + 1 > self.size:
            raise ValueError("shapes do not fit in the image")


@dataclass(frozen=True)
class Shape:
    kind: str
    cx: int
    cy: int
    rx: int
    ry: int
    intensity: int

    def mask(self, size: int) -> np.ndarray:
        yy, xx = np.mgrid[0:size, 0:size]
        if self.kind == "disk":
            inside = (xx - self.cx) ** 2 + (yy - self.cy) ** 2 <= self.rx**2
        else:
            inside = (np.abs(xx - self.cx) <= self.rx) & (np.abs(yy - self.cy) <= self.ry)
        return inside.astype(np.uint8)


@dataclass
class ShapeScene:
    image: np.ndarray  # (H, W, 1) float32 in [0, 255]
    shapes: list[Shape]
    masks: np.ndarray  # (n_shapes, H, W) uint8
    background: int = 0
    seed: int | None = field(default=None, compare=False)


def _sample_shape(rng, cfg, bg):
    kind = cfg.kinds[int(rng.integers(len(cfg.kinds)))]
    lo, hi = cfg.extent
    rx = int(rng.integers(lo, hi + 1))
    ry = rx if kind == "disk" else int(rng.integers(lo, hi + 1))
    cx = int(rng.integers(rx, cfg.size - rx))
    cy = int(rng.integers(ry, cfg.size - ry))
    f_lo = max(cfg.foreground[0], bg + cfg.min_contrast)
    intensity = int(rng.integers(f_lo, cfg.foreground[1] + 1))
    return Shape(kind, cx, cy, rx, ry, intensity)


def generate_scene(seed: int, cfg: SceneConfig | None = None) -> ShapeScene:
    """Deterministic scene for ``seed``; shapes never overlap."""
    cfg = cfg or SceneConfig()
    rng = np.random.default_rng(seed)
    bg = int(rng.integers(cfg.background[0], cfg.background[1] + 1))
    n = int(rng.integers(cfg.min_shapes, cfg.max_shapes + 1))
    shapes: list[Shape] = []
    masks: list[np.ndarray] = []
    occupied = np.zeros((cfg.size, cfg.size), bool)
    tries = 0
    while len(shapes) < n:
        tries += 1
        if tries > MAX_TRIES:
            raise SceneGenerationError(f"seed {seed}: no valid placement after {MAX_TRIES} tries")
        shape = _sample_shape(rng, cfg, bg)
        m = shape.mask(cfg.size)
        if occupied.any():
            dist = distance_transform_edt(~occupied)
            if dist[m.astype(bool)].min() < cfg.separation:
                continue
        shapes.append(shape)
        masks.append(m)
        occupied |= m.astype(bool)

    image = np.full((cfg.size, cfg.size), bg, np.float32)
    for s, m in zip(shapes, masks):
        image[m.astype(bool)] = s.intensity
    return ShapeScene(image[..., None], shapes, np.stack(masks), bg, seed)
