"""Binary PGM (P5, maxval 255) images and image loading by extension."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .numcore import rtn


class ImageFormatError(ValueError):
    pass


def _tokens(data: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    out, i = [], 0
    while len(out) < count:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if i >= len(data):
            raise ImageFormatError("truncated PGM header")
        if data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace() and data[j : j + 1] != b"#":
            j += 1
        out.append(data[i:j])
        i = j
    # exactly one whitespace byte separates the header from the raster
    return out, i + 1


def decode_pgm(data: bytes) -> np.ndarray:
    """``(H, W, 1)`` float32 image from P5 bytes."""
    (magic, w, h, maxval), start = _tokens(data, 4)
    if magic != b"P5":
        raise ImageFormatError(f"not a binary PGM (magic {magic!r})")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise ImageFormatError(f"only maxval 255 is supported, got {maxval}")
    raster = data[start : start + w * h]
    if len(raster) != w * h:
        raise ImageFormatError("truncated PGM raster")
    return np.frombuffer(raster, np.uint8).reshape(h, w, 1).astype(np.float32)


def encode_pgm(image) -> bytes:
    img = np.asarray(image)
    if img.ndim == 3:
        if img.shape[2] != 1:
            raise ImageFormatError("PGM holds one channel")
        img = img[..., 0]
    pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    h, w = pixels.shape
    return b"P5\n%d %d\n255\n" % (w, h) + pixels.tobytes()


def read_pgm(path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes())


def write_pgm(path, image) -> None:
    Path(path).write_bytes(encode_pgm(image))


def read_image(path) -> np.ndarray:
    """Load a ``.pgm`` or ``.rtn`` image as ``(H, W, C)`` float32."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        return read_pgm(path)
    if suffix == ".rtn":
        img = rtn.load(path)
        if img.ndim == 2:
            img = img[..., None]
        if img.ndim != 3:
            raise ImageFormatError(f"{path}: expected an HxWxC tensor, got {img.shape}")
        return img
    raise ImageFormatError(f"{path}: unsupported image type {suffix!r}")
