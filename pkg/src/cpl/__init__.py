"""Episodic convolutional prototype learning for zero-shot recognition over precomputed features."""

from .core import (
    CheckpointError,
    ConfigError,
    CPLError,
    Dataset,
    DatasetError,
    Episode,
    FormatError,
    HyperParams,
    NumericError,
    ShapeError,
    validate_dataset,
)
from .dataio import SyntheticSpec, generate_synthetic, load_checkpoint, load_dataset, save_checkpoint, save_dataset
from .evaluation import EvalReport, evaluate_generalized, evaluate_standard, harmonic_mean, recognize
from .net import AttributeEmbedder, forward, init_embedder
from .trainer import TrainConfig, resume, train

__version__ = "0.1.0"
