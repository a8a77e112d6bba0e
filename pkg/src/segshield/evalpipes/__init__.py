"""Evaluation pipelines: corruption robustness, grid scoring, noise sweeps."""

from ..metrics import center_point
from ..refmodel.automask import MaskEntry, MaskSet, auto_masks
from .corruptions import KINDS, CorruptionError, CorruptionSpec, corrupt
from .grid import (
    Detection,
    GridEvalError,
    GridResult,
    compose_grid,
    grid_privacy_eval,
    make_gallery,
    mock_detector,
    snap_detections,
)
from .noise import SWEEP_COLUMNS, NoiseSweepError, SweepResult, aggregate_sweeps, noise_sweep
from .style import (
    HISTOGRAM_COLUMNS,
    ROW_COLUMNS,
    SUMMARY_COLUMNS,
    StyleReport,
    masks_at,
    style_robustness_eval,
)
