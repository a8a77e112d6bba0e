"""Point-promptable fully-convolutional segmentation model."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from ..numcore import GraphBuilder, backward, forward, rtn
from ..report import atomic_write

# (name, kernel size, output channels)
ARCHITECTURE = (("conv1", 3, 16), ("conv2", 3, 16), ("conv3", 3, 16), ("head", 1, 1))
ARCHITECTURE_ID = "conv3x3-16/conv3x3-16/conv3x3-16/conv1x1-1"
PROMPT_SIGMA = 4.0
INIT_SCALE = 0.05


class ModelError(ValueError):
    pass


class ModelMismatchError(ModelError):
    pass


@dataclass(frozen=True)
class PointPrompt:
    x: int
    y: int

    def check(self, h: int, w: int) -> "PointPrompt":
        if not (0 <= self.x < w and 0 <= self.y < h):
            raise ModelError(f"prompt ({self.x}, {self.y}) outside {w}x{h} image")
        return self


def as_prompt(p) -> PointPrompt:
    return p if isinstance(p, PointPrompt) else PointPrompt(int(p[0]), int(p[1]))


@dataclass
class SegModel:
    params: dict[str, np.ndarray]
    channels: int = 1
    seed: int = 0
    train_config: dict = field(default_factory=dict)
    loss_trace: list[float] = field(default_factory=list)

    def copy(self) -> "SegModel":
        return SegModel(
            {k: v.copy() for k, v in self.params.items()},
            self.channels,
            self.seed,
            dict(self.train_config),
            list(self.loss_trace),
        )


def param_shapes(channels: int = 1) -> dict[str, tuple[int, ...]]:
    shapes = {}
    cin = channels + 1
    for name, k, cout in ARCHITECTURE:
        shapes[f"{name}.weight"] = (k, k, cin, cout)
        shapes[f"{name}.bias"] = (cout,)
        cin = cout
    return shapes


def init_model(seed: int, channels: int = 1, scale: float = INIT_SCALE) -> SegModel:
    """Weights uniform in ``[-scale, scale]``, biases zero."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(channels).items():
        if name.endswith(".weight"):
            params[name] = rng.uniform(-scale, scale, shape).astype(np.float32)
        else:
            params[name] = np.zeros(shape, np.float32)
    return SegModel(params, channels, seed)


@lru_cache(maxsize=32)
def build_graph(channels: int, n: int, h: int, w: int, with_loss: bool = False):
    """Model graph for a fixed batch geometry.

    Inputs are ``x`` (image/255 stacked with the prompt channel), the
    parameters, and with ``with_loss`` a ``target`` mask; outputs are
    ``logits``, ``prob`` and, with ``with_loss``, the scalar
    ``loss = sum((prob - target)^2)``.
    """
    g = GraphBuilder()
    h_ = g.input("x", (n, h, w, channels + 1))
    for name, shape in param_shapes(channels).items():
        g.input(name, shape)
    for i, (name, _, _) in enumerate(ARCHITECTURE):
        last = i == len(ARCHITECTURE) - 1
        h_ = g.conv2d_same(h_, f"{name}.weight", name=f"{name}.conv")
        h_ = g.add_bias(h_, f"{name}.bias", name="logits" if last else f"{name}.pre")
        if not last:
            h_ = g.relu(h_, name=f"{name}.act")
    g.sigmoid("logits", name="prob")
    if with_loss:
        g.input("target", (n, h, w, 1))
        d = g.subtract("prob", "target", name="residual")
        g.sum(g.square(d, name="residual_sq"), name="loss")
    return g.build()


def encode_prompt(prompt, h: int, w: int) -> np.ndarray:
    """``h x w`` Gaussian bump of peak 1 centred on the prompt."""
    p = as_prompt(prompt).check(h, w)
    yy, xx = np.mgrid[0:h, 0:w]
    d2 = (xx - p.x) ** 2 + (yy - p.y) ** 2
    return np.exp(-d2 / (2 * PROMPT_SIGMA**2)).astype(np.float32)


def as_image(image) -> np.ndarray:
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 2:
        img = img[..., None]
    if img.ndim != 3:
        raise ModelError(f"image must be HxW or HxWxC, got shape {img.shape}")
    return img


def model_input(model: SegModel, images, prompts) -> np.ndarray:
    """Stack normalised images with their prompt channels: ``(N, H, W, C+1)``."""
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 3:
        images = images[..., None]
    n, h, w, c = images.shape
    if c != model.channels:
        raise ModelError(f"model expects {model.channels} channel(s), image has {c}")
    if len(prompts) != n:
        raise ModelError(f"{n} images but {len(prompts)} prompts")
    x = np.empty((n, h, w, c + 1), np.float32)
    x[..., :c] = images / np.float32(255.0)
    for i, p in enumerate(prompts):
        x[i, ..., c] = encode_prompt(p, h, w)
    return x


def _bind(model, x, target=None):
    inputs = dict(model.params)
    inputs["x"] = x
    if target is not None:
        inputs["target"] = target
    return inputs


def predict_batch(model: SegModel, images, prompts) -> np.ndarray:
    x = model_input(model, images, prompts)
    n, h, w, _ = x.shape
    graph = build_graph(model.channels, n, h, w)
    return forward(graph, _bind(model, x))["prob"][..., 0]


def predict(model: SegModel, image, prompt) -> np.ndarray:
    """Probability mask ``(H, W)`` in [0, 1] for one image and point prompt."""
    return predict_batch(model, as_image(image)[None], [prompt])[0]


def loss_and_gradient(model: SegModel, image, prompt, target):
    """Squared-error loss against ``target`` and its gradient w.r.t. the image.

    Returns ``(loss, grad, prob)`` with ``grad`` shaped like the image in
    [0, 255] units and ``prob`` the ``(H, W)`` probability mask.
    """
    img = as_image(image)
    h, w, c = img.shape
    target = np.asarray(target, dtype=np.float32)
    if target.shape != (h, w):
        raise ModelError(f"target dims {target.shape} do not match image {(h, w)}")
    x = model_input(model, img[None], [prompt])
    graph = build_graph(model.channels, 1, h, w, True)
    values = forward(graph, _bind(model, x, target[None, ..., None]))
    gx = backward(graph, values, {"loss": np.ones(1)}, ["x"])["x"]
    grad = (gx[0, ..., :c].astype(np.float64) / 255.0).astype(np.float32)
    return float(values["loss"][0]), grad, values["prob"][0, ..., 0]


def squared_error(prob, target) -> float:
    d = np.asarray(prob, np.float64) - np.asarray(target, np.float64)
    return float(np.sum(d * d))


# -- checkpoints -------------------------------------------------------------------


def save_model(model: SegModel, path) -> Path:
    """Write ``<path>`` (concatenated .rtn records) and ``<path>.json`` sidecar."""
    path = Path(path)
    names = list(param_shapes(model.channels))
    atomic_write(path, b"".join(rtn.encode(model.params[n]) for n in names))
    sidecar = {
        "architecture": ARCHITECTURE_ID,
        "channels": model.channels,
        "params": names,
        "prompt_sigma": PROMPT_SIGMA,
        "seed": model.seed,
        "train_config": model.train_config,
        "loss_trace": [float(v) for v in model.loss_trace],
    }
    atomic_write(sidecar_path(path), json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return path


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def load_model(path) -> SegModel:
    path = Path(path)
    meta = json.loads(sidecar_path(path).read_text())
    if meta.get("architecture") != ARCHITECTURE_ID:
        raise ModelMismatchError(
            f"checkpoint architecture {meta.get('architecture')!r} != {ARCHITECTURE_ID!r}"
        )
    channels = int(meta["channels"])
    expected = param_shapes(channels)
    tensors = rtn.load_many(path)
    if meta["params"] != list(expected) or len(tensors) != len(expected):
        raise ModelMismatchError("checkpoint parameter list does not match the architecture")
    params = {}
    for (name, shape), t in zip(expected.items(), tensors):
        if t.shape != shape:
            raise ModelMismatchError(f"{name}: expected {shape}, checkpoint has {t.shape}")
        params[name] = t
    return SegModel(
        params, channels, int(meta["seed"]), meta.get("train_config", {}), meta.get("loss_trace", [])
    )
