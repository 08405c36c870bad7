"""Encoder-decoder transformer: model, training, constrained generation, file IO."""

from goct.nnmodel.config import (
    CONTEXT_LEN,
    ENCODER_BEATS,
    N_DIFF_BUCKETS,
    ModelConfig,
    difficulty_bucket,
    validate_config,
)
from goct.nnmodel.generate import generate_chart, generate_window, generate_windows
from goct.nnmodel.modelio import MODEL_MAGIC, MODEL_VERSION, load_model, save_model
from goct.nnmodel.net import (
    BUFFER_NAMES,
    ModelParams,
    cast_params,
    forward,
    forward_batch,
    backward_batch,
    init_params,
    loss_and_dlogits,
    sinusoidal_encoding,
    trainable_names,
)
from goct.nnmodel.train import (
    TrainResult,
    TrainSample,
    assemble_batch,
    eval_loss,
    finetune,
    loss_on_batch,
    parse_train_config,
    train,
)

__all__ = [
    "CONTEXT_LEN",
    "ENCODER_BEATS",
    "N_DIFF_BUCKETS",
    "ModelConfig",
    "difficulty_bucket",
    "validate_config",
    "generate_chart",
    "generate_window",
    "generate_windows",
    "MODEL_MAGIC",
    "MODEL_VERSION",
    "load_model",
    "save_model",
    "BUFFER_NAMES",
    "ModelParams",
    "cast_params",
    "forward",
    "forward_batch",
    "backward_batch",
    "init_params",
    "loss_and_dlogits",
    "sinusoidal_encoding",
    "trainable_names",
    "TrainResult",
    "TrainSample",
    "assemble_batch",
    "eval_loss",
    "finetune",
    "loss_on_batch",
    "parse_train_config",
    "train",
]
