"""Group activity recognition with actor relation graphs."""

from .config import TrainConfig
from .data import (
    ActorInstance,
    BoundingBox,
    ClipSample,
    Dataset,
    SynthConfig,
    box_center,
    extract_patch,
    generate_synthetic_dataset,
    parse_clip_file,
    serialize_dataset,
    validate_dataset,
)
from .model import ModelParams, Prediction, init_params, predict
from .relation import RelationMode, RelationParams, build_multi_graph, build_relation_graph
from .training import evaluate, load_checkpoint, save_checkpoint, train, train_stage1, train_stage2

__version__ = "0.1.0"
