"""Model hyperparameters and the difficulty bucketing rule."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

from goct.errors import ValidationError
from goct.tokencodec import VOCAB_SIZE

N_DIFF_BUCKETS = 21
CONTEXT_LEN = 7
ENCODER_BEATS = 4


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 3
    d_model: int = 256
    n_heads: int = 4
    d_ff: int = 1024
    token_embed_dim: int = 208
    difficulty_embed_dim: int = 48
    vocab: int = VOCAB_SIZE
    max_target_tokens: int = 200
    dropout: float = 0.1
    time_only: bool = False


def validate_config(config: ModelConfig) -> None:
    if config.n_layers < 1:
        raise ValidationError("n_layers must be >= 1")
    if config.token_embed_dim + config.difficulty_embed_dim != config.d_model:
        raise ValidationError(
            f"token_embed_dim {config.token_embed_dim} + difficulty_embed_dim "
            f"{config.difficulty_embed_dim} must equal d_model {config.d_model}"
        )
    if config.d_model % config.n_heads != 0:
        raise ValidationError(f"d_model {config.d_model} not divisible by n_heads {config.n_heads}")
    if config.vocab != VOCAB_SIZE:
        raise ValidationError(f"vocab must be {VOCAB_SIZE}, got {config.vocab}")
    if not 0.0 <= config.dropout < 1.0:
        raise ValidationError(f"dropout must lie in [0, 1), got {config.dropout}")
    if config.max_target_tokens < 1:
        raise ValidationError("max_target_tokens must be >= 1")


def difficulty_bucket(difficulty: float) -> int:
    """clamp(floor(difficulty / 0.5), 0, 20): one axis for float and integer scales."""
    if not math.isfinite(difficulty):
        raise ValidationError(f"difficulty must be finite, got {difficulty}")
    return int(min(max(math.floor(difficulty / 0.5), 0), N_DIFF_BUCKETS - 1))


def config_to_dict(config: ModelConfig) -> dict:
    return {f.name: getattr(config, f.name) for f in fields(config)}


def config_from_dict(d: dict) -> ModelConfig:
    kwargs = {}
    for f in fields(ModelConfig):
        if f.name not in d:
            continue
        raw = d[f.name]
        if f.type == "bool" or isinstance(getattr(ModelConfig, f.name), bool):
            value = raw in (True, 1, "1", "true", "True")
        elif isinstance(getattr(ModelConfig, f.name), int):
            value = int(raw)
        else:
            value = float(raw)
        kwargs[f.name] = value
    config = ModelConfig(**kwargs)
    validate_config(config)
    return config
