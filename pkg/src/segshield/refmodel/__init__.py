"""Reference point-promptable segmentation model, its data and trainer."""

from .model import (
    ARCHITECTURE,
    ARCHITECTURE_ID,
    ModelError,
    ModelMismatchError,
    PointPrompt,
    SegModel,
    build_graph,
    encode_prompt,
    init_model,
    load_model,
    loss_and_gradient,
    predict,
    predict_batch,
    save_model,
)
from .scenes import SceneConfig, SceneGenerationError, Shape, ShapeScene, generate_scene
from .train import TrainConfig, TrainingDivergedError, evaluate, heldout_prompts, train
