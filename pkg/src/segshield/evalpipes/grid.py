"""3x3 grid identification trials scored as per-cell binary classification.

A trial places one gallery image of the target label among eight images of
other labels, asks a detector where the label is, and scores every cell. The
same nine images are re-placed ``permutations`` times.

Detectors are callables ``(grid_image, label) -> list[Detection]``. A
detection counts for the cell holding its box center, and only if its mask
is nonempty.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from ..metrics import ScoreReport, score_grid

GRID = 3
N_CELLS = GRID * GRID


class GridEvalError(RuntimeError):
    pass


@dataclass(frozen=True)
class Detection:
    box: tuple[float, float, float, float]  # x0, y0, x1, y1 in grid pixels
    mask: np.ndarray = field(repr=False)


def compose_grid(cells: Sequence[np.ndarray]) -> np.ndarray:
    if len(cells) != N_CELLS:
        raise GridEvalError(f"a grid needs {N_CELLS} cells, got {len(cells)}")
    rows = [np.concatenate(cells[r * GRID : (r + 1) * GRID], axis=1) for r in range(GRID)]
    return np.concatenate(rows, axis=0)


def cell_box(cell: int, cell_h: int, cell_w: int):
    r, c = divmod(cell, GRID)
    return (c * cell_w, r * cell_h, (c + 1) * cell_w, (r + 1) * cell_h)


def snap_detections(detections, cell_h: int, cell_w: int) -> set[int]:
    """Cells hit by detections with nonempty masks, by box center."""
    cells = set()
    for det in detections:
        if not np.any(det.mask):
            continue
        x0, y0, x1, y1 = det.box
        col = int(np.floor((x0 + x1) / 2 / cell_w))
        row = int(np.floor((y0 + y1) / 2 / cell_h))
        # out-of-grid centers map to out-of-range cells and are rejected when scored
        cells.add(row * GRID + col if 0 <= col < GRID else N_CELLS + col)
    return cells


# -- mock gallery and detectors ----------------------------------------------------


def make_gallery(n_labels: int = 16, per_label: int = 3, cell: int = 16, seed: int = 0):
    """Synthetic gallery: each label has a random template, each image adds noise."""
    rng = np.random.default_rng(seed)
    gallery = {}
    for i in range(n_labels):
        template = rng.uniform(0, 255, (cell, cell, 1))
        gallery[f"label{i:02d}"] = [
            np.clip(template + rng.normal(0, 8, template.shape), 0, 255).astype(np.float32)
            for _ in range(per_label)
        ]
    return gallery


def _cells(grid_image, cell_h, cell_w):
    return [
        grid_image[r * cell_h : (r + 1) * cell_h, c * cell_w : (c + 1) * cell_w]
        for r in range(GRID)
        for c in range(GRID)
    ]


def _full(cell_h, cell_w):
    return np.ones((cell_h, cell_w), np.uint8)


class OracleDetector:
    """Finds the label by nearest gallery template; placement-equivariant."""

    def __init__(self, gallery: Mapping[str, Sequence[np.ndarray]]):
        self.means = {k: np.mean(v, axis=0) for k, v in gallery.items()}
        self.cell_h, self.cell_w = next(iter(self.means.values())).shape[:2]

    def __call__(self, grid_image, label):
        out = []
        labels = list(self.means)
        for i, cell in enumerate(_cells(grid_image, self.cell_h, self.cell_w)):
            d = [np.mean((cell - self.means[k]) ** 2) for k in labels]
            if labels[int(np.argmin(d))] == label:
                out.append(Detection(cell_box(i, self.cell_h, self.cell_w), _full(self.cell_h, self.cell_w)))
        return out


class AllCellsDetector:
    def __init__(self, cell_h: int, cell_w: int):
        self.cell_h, self.cell_w = cell_h, cell_w

    def __call__(self, grid_image, label):
        return [
            Detection(cell_box(i, self.cell_h, self.cell_w), _full(self.cell_h, self.cell_w))
            for i in range(N_CELLS)
        ]


class NeverDetector:
    def __call__(self, grid_image, label):
        return []


class RandomDetector:
    """Flags each cell independently with probability ``p``.

    With ``gallery`` and ``p_hit`` given, the true target cell is flagged with
    probability ``p_hit`` instead (a biased guesser). Decisions depend only on
    the seed, the grid pixels and the label, so evaluation order is irrelevant.
    """

    def __init__(self, cell_h, cell_w, p: float = 0.5, seed: int = 0, gallery=None, p_hit=None):
        self.cell_h, self.cell_w = cell_h, cell_w
        self.p, self.seed, self.p_hit = p, seed, p_hit
        self.oracle = OracleDetector(gallery) if gallery is not None and p_hit is not None else None

    def __call__(self, grid_image, label):
        key = zlib.crc32(np.ascontiguousarray(grid_image, np.float32).tobytes())
        rng = np.random.default_rng([self.seed, key, zlib.crc32(label.encode())])
        draws = rng.random(N_CELLS)
        targets = set()
        if self.oracle is not None:
            targets = snap_detections(self.oracle(grid_image, label), self.cell_h, self.cell_w)
        out = []
        for i in range(N_CELLS):
            p = self.p_hit if i in targets else self.p
            if draws[i] < p:
                out.append(Detection(cell_box(i, self.cell_h, self.cell_w), _full(self.cell_h, self.cell_w)))
        return out


def mock_detector(kind: str, gallery, seed: int = 0, p: float = 0.5, p_hit: float = 0.9):
    cell_h, cell_w = next(iter(gallery.values()))[0].shape[:2]
    if kind == "oracle":
        return OracleDetector(gallery)
    if kind == "all":
        return AllCellsDetector(cell_h, cell_w)
    if kind == "never":
        return NeverDetector()
    if kind == "random":
        return RandomDetector(cell_h, cell_w, p, seed)
    if kind == "biased-random":
        return RandomDetector(cell_h, cell_w, p, seed, gallery, p_hit)
    raise GridEvalError(f"unknown mock detector {kind!r}")


# -- evaluation --------------------------------------------------------------------


@dataclass
class GridResult:
    reports: dict[str, ScoreReport]
    manifest: list[dict]


def grid_privacy_eval(
    detector_fn: Callable,
    gallery: Mapping[str, Sequence[np.ndarray]],
    target_labels: Sequence[str] | None = None,
    permutations: int = 5,
    grids_per_label: int = 10,
    seed: int = 0,
) -> GridResult:
    labels = sorted(gallery)
    if len(labels) < N_CELLS:
        raise GridEvalError(f"gallery needs at least {N_CELLS} labels, has {len(labels)}")
    if permutations < 1 or grids_per_label < 1:
        raise GridEvalError("permutations and grids_per_label must be positive")
    target_labels = labels if target_labels is None else list(target_labels)
    cell_h, cell_w = gallery[labels[0]][0].shape[:2]
    rng = np.random.default_rng([seed, 5])
    reports, manifest = {}, []
    for label in target_labels:
        if label not in gallery:
            raise GridEvalError(f"target label {label!r} not in gallery")
        others = [l for l in labels if l != label]
        trials = [[] for _ in range(permutations)]
        for g in range(grids_per_label):
            grid_id = f"{label}/{g}"
            chosen = [label] + [others[i] for i in rng.choice(len(others), N_CELLS - 1, replace=False)]
            picks = [int(rng.integers(len(gallery[l]))) for l in chosen]
            for r in range(permutations):
                placement = rng.permutation(N_CELLS)  # placement[item] = cell
                cells: list = [None] * N_CELLS
                for item, cell in enumerate(placement):
                    cells[cell] = gallery[chosen[item]][picks[item]]
                grid_image = compose_grid(cells)
                try:
                    detections = detector_fn(grid_image, label)
                except Exception as exc:
                    raise GridEvalError(f"detector failed on grid {grid_id} repeat {r}: {exc!r}") from exc
                predicted = snap_detections(detections, cell_h, cell_w)
                truth = {int(placement[0])}
                trials[r].append((truth, predicted))
                manifest.append(
                    {
                        "grid_id": grid_id,
                        "permutation": r,
                        "label": label,
                        "placement": [chosen[int(np.argwhere(placement == c)[0, 0])] for c in range(N_CELLS)],
                        "target_cell": int(placement[0]),
                        "predicted": sorted(predicted),
                    }
                )
        reports[label] = score_grid(trials, N_CELLS)
    return GridResult(reports, manifest)
