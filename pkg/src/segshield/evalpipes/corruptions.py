"""Deterministic parametric image corruptions standing in for weather styles.

``night``, ``snow`` and ``wet`` alter intensities; ``drops`` alters local
texture. Kinds can be chained with ``+`` (``"night+drops"``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

KINDS = ("night", "snow", "wet", "drops", "identity", "blank")
SNOW_BLEND = 0.8
DROP_RADII = (3, 6)
DROP_MAX_COUNT = 20
DROP_SMOOTH = 5


class CorruptionError(ValueError):
    pass


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    strength: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for part in self.parts:
            if part not in KINDS:
                raise CorruptionError(f"unknown corruption kind {part!r}")
        if not 0.0 <= self.strength <= 1.0:
            raise CorruptionError(f"strength {self.strength} outside [0, 1]")

    @property
    def parts(self) -> list[str]:
        return self.kind.split("+")

    @property
    def label(self) -> str:
        return f"{self.kind}@{self.strength:g}"

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "CorruptionSpec":
        """``"kind"`` or ``"kind:strength"``."""
        kind, _, strength = text.partition(":")
        return cls(kind, float(strength) if strength else 1.0, seed)


def _disk(h, w, cx, cy, r):
    yy, xx = np.ogrid[:h, :w]
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r


def _snow(img, strength, rng):
    h, w = img.shape[:2]
    target = 0.2 * strength * h * w
    cover = np.zeros((h, w), bool)
    # bounded so that tiny images with full coverage still terminate
    for _ in range(10 * h * w):
        if cover.sum() >= target:
            break
        cx, cy = rng.integers(w), rng.integers(h)
        cover |= _disk(h, w, cx, cy, int(rng.integers(2, 6)))
    out = img.copy()
    out[cover] = img[cover] + SNOW_BLEND * (255.0 - img[cover])
    return out


def _drops(img, strength, rng):
    h, w = img.shape[:2]
    smooth = uniform_filter(img, size=(DROP_SMOOTH, DROP_SMOOTH, 1), mode="nearest")
    out = img.copy()
    for _ in range(int(round(strength * DROP_MAX_COUNT))):
        cx, cy = rng.integers(w), rng.integers(h)
        r = int(rng.integers(DROP_RADII[0], DROP_RADII[1] + 1))
        m = _disk(h, w, cx, cy, r)
        out[m] = smooth[m]
    return out


def corrupt(image, spec: CorruptionSpec) -> np.ndarray:
    img = np.asarray(image, np.float32)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    rng = np.random.default_rng(spec.seed)
    s = spec.strength
    out = img.astype(np.float64)
    for part in spec.parts:
        if part == "identity":
            continue
        if part == "blank":
            out = np.zeros_like(out)
        elif part == "night":
            out = out * (1.0 - 0.7 * s)
        elif part == "wet":
            mean = out.mean()
            out = mean + (out - mean) * (1.0 - 0.5 * s)
        elif part == "snow":
            out = _snow(out, s, rng)
        elif part == "drops":
            out = _drops(out, s, rng)
    if spec.parts == ["identity"]:
        out = img.copy()
    else:
        out = np.clip(out, 0.0, 255.0).astype(np.float32)
    return out[..., 0] if squeeze else out
