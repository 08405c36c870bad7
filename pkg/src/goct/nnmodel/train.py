"""Training: Adam, gradient clipping, label-smoothed CE over window targets.

A TrainSample is one beat of one chart: four beats of (already
normalized) spectrogram rows, the seven-token context tail, and the
window tokens with a closing EOS.  The decoder is teacher-forced on
(context, SEP, y_1..y_L); loss covers the positions predicting
(y_1..y_L, EOS) and nothing after the first EOS.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from goct.errors import TrainingDiverged, ValidationError
from goct.nnmodel.config import CONTEXT_LEN, ModelConfig
from goct.nnmodel.net import (
    ModelParams,
    backward_batch,
    forward_batch,
    init_params,
    loss_and_dlogits,
    trainable_names,
)
from goct.tokencodec import EOS, SEP

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
GRAD_CLIP = 1.0
LABEL_SMOOTHING = 0.02


@dataclass(frozen=True)
class TrainSample:
    encoder_frames: np.ndarray  # (192, n_mels) float32
    context: tuple  # 7 token ids
    target: tuple  # window tokens y_1..y_L then one EOS
    difficulty: float


@dataclass
class TrainResult:
    params: ModelParams
    history: list  # one dict per epoch: {"epoch", "train_loss", "val_loss"}


def _check_sample(s: TrainSample, max_target: int) -> None:
    if len(s.context) != CONTEXT_LEN:
        raise ValidationError(f"context must have {CONTEXT_LEN} tokens, got {len(s.context)}")
    if not s.target or s.target[-1] != EOS:
        raise ValidationError("target must end with EOS")
    if len(s.target) > max_target:
        raise ValidationError(f"target has {len(s.target)} tokens, cap is {max_target}")


def assemble_batch(samples: Sequence[TrainSample]):
    """Pad a batch: decoder input (B, 8+Lmax), targets (B, Lmax+1), mask."""
    B = len(samples)
    if B == 0:
        raise ValidationError("cannot assemble an empty batch")
    for i, s in enumerate(samples):
        if len(s.context) != CONTEXT_LEN:
            raise ValidationError(
                f"sample {i}: context has {len(s.context)} tokens, expected {CONTEXT_LEN}"
            )
        if not s.target or s.target[-1] != EOS:
            raise ValidationError(f"sample {i}: target must be non-empty and end with EOS")
    lens = [len(s.target) for s in samples]  # L+1 including EOS
    t_max = max(lens)
    enc = np.stack([s.encoder_frames for s in samples]).astype(np.float32)
    dec_in = np.full((B, CONTEXT_LEN + 1 + t_max - 1), EOS, dtype=np.int64)
    targets = np.full((B, t_max), EOS, dtype=np.int64)
    mask = np.zeros((B, t_max), dtype=bool)
    for b, s in enumerate(samples):
        dec_in[b, :CONTEXT_LEN] = s.context
        dec_in[b, CONTEXT_LEN] = SEP
        body = s.target[:-1]  # y_1..y_L feed the decoder; EOS is predicted, not fed
        dec_in[b, CONTEXT_LEN + 1 : CONTEXT_LEN + 1 + len(body)] = body
        targets[b, : len(s.target)] = s.target
        mask[b, : len(s.target)] = True
    difficulty = np.array([s.difficulty for s in samples], dtype=np.float64)
    return enc, dec_in, targets, mask, difficulty


def loss_on_batch(params: ModelParams, samples: Sequence[TrainSample], *, train=False, rng=None):
    """(loss, grads) on one batch; grads keyed by tensor name."""
    enc, dec_in, targets, mask, difficulty = assemble_batch(samples)
    logits, cache = forward_batch(params, enc, dec_in, difficulty, train=train, rng=rng)
    # positions CONTEXT_LEN.. predict y_1..y_L, EOS
    tail = logits[:, CONTEXT_LEN:, :]
    loss, dtail = loss_and_dlogits(tail, targets, mask, smoothing=LABEL_SMOOTHING)
    dlogits = np.zeros_like(logits)
    dlogits[:, CONTEXT_LEN:, :] = dtail
    grads = backward_batch(params, dlogits, cache)
    return loss, grads


def eval_loss(params: ModelParams, dataset: Sequence[TrainSample], batch_size: int = 32) -> float:
    total = 0.0
    weight = 0
    for lo in range(0, len(dataset), batch_size):
        chunk = dataset[lo : lo + batch_size]
        enc, dec_in, targets, mask, difficulty = assemble_batch(chunk)
        logits, _ = forward_batch(params, enc, dec_in, difficulty, train=False)
        loss, _ = loss_and_dlogits(logits[:, CONTEXT_LEN:, :], targets, mask, smoothing=LABEL_SMOOTHING)
        n = int(mask.sum())
        total += loss * n
        weight += n
    if weight == 0:
        raise ValidationError("empty evaluation dataset")
    return total / weight


def _clip_global_norm(grads: dict, max_norm: float) -> float:
    total = 0.0
    for g in grads.values():
        total += float((g.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        scale = np.float32(max_norm / norm)
        for name in grads:
            grads[name] = grads[name] * scale
    return norm


def train(
    dataset: Sequence[TrainSample],
    config: Optional[ModelConfig] = None,
    *,
    params: Optional[ModelParams] = None,
    lr: float = 2e-4,
    batch_size: int = 32,
    epochs: int = 10,
    seed: int = 0,
    val_dataset: Optional[Sequence[TrainSample]] = None,
    normalization=None,
    log_fn: Optional[Callable[[str], None]] = None,
) -> TrainResult:
    """Adam with constant lr and global-norm clip 1.0; seeded shuffling.

    Bit-reproducible for a fixed seed under single-threaded execution.
    Pass `params` to continue from an existing model (finetuning).
    """
    if params is None:
        if config is None:
            raise ValidationError("train needs a config or initial params")
        params = init_params(config, seed=seed)
    else:
        # leave the caller's model untouched; updates rebind, never mutate
        params = ModelParams(config=params.config, tensors=dict(params.tensors))
    cfg = params.config
    if not dataset:
        raise ValidationError("empty training dataset")
    for s in dataset:
        _check_sample(s, cfg.max_target_tokens)
    if normalization is not None:
        mean, std = normalization
        params.tensors["feat_mean"] = np.asarray(mean, dtype=np.float32)
        params.tensors["feat_std"] = np.asarray(std, dtype=np.float32)

    rng = np.random.default_rng(seed)
    names = trainable_names(params)
    m = {n: np.zeros_like(params.tensors[n]) for n in names}
    v = {n: np.zeros_like(params.tensors[n]) for n in names}
    step = 0
    history = []

    for epoch in range(epochs):
        order = rng.permutation(len(dataset))
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, len(order), batch_size):
            batch = [dataset[i] for i in order[lo : lo + batch_size]]
            loss, grads = loss_on_batch(params, batch, train=True, rng=rng)
            if not np.isfinite(loss):
                norms = {n: float(np.linalg.norm(g)) for n, g in grads.items()}
                raise TrainingDiverged(
                    f"non-finite loss {loss}",
                    batch_id=f"epoch {epoch} batch {n_batches}",
                    grad_norms=norms,
                )
            _clip_global_norm(grads, GRAD_CLIP)
            step += 1
            b1c = 1.0 - ADAM_BETA1**step
            b2c = 1.0 - ADAM_BETA2**step
            for n in names:
                g = grads[n]
                m[n] = ADAM_BETA1 * m[n] + (1.0 - ADAM_BETA1) * g
                v[n] = ADAM_BETA2 * v[n] + (1.0 - ADAM_BETA2) * (g * g)
                update = (m[n] / b1c) / (np.sqrt(v[n] / b2c) + ADAM_EPS)
                params.tensors[n] = params.tensors[n] - np.float32(lr) * update
            epoch_loss += loss
            n_batches += 1
        entry = {"epoch": epoch, "train_loss": epoch_loss / max(n_batches, 1)}
        if val_dataset:
            entry["val_loss"] = eval_loss(params, val_dataset, batch_size)
        history.append(entry)
        if log_fn is not None:
            msg = f"epoch {epoch}: train_loss {entry['train_loss']:.4f}"
            if "val_loss" in entry:
                msg += f" val_loss {entry['val_loss']:.4f}"
            log_fn(msg)
    return TrainResult(params=params, history=history)


def finetune(
    params: ModelParams,
    dataset: Sequence[TrainSample],
    *,
    lr: float = 2e-5,
    epochs: int = 4,
    batch_size: int = 32,
    seed: int = 0,
    val_dataset: Optional[Sequence[TrainSample]] = None,
    log_fn: Optional[Callable[[str], None]] = None,
) -> TrainResult:
    """Continue training from `params` at a reduced constant lr."""
    return train(
        dataset,
        params=params,
        lr=lr,
        batch_size=batch_size,
        epochs=epochs,
        seed=seed,
        val_dataset=val_dataset,
        log_fn=log_fn,
    )


def parse_train_config(text: str) -> dict:
    """`key=value` lines; keys: lr, batch, epochs, seed, time_only, normalization."""
    typed = {
        "lr": float,
        "batch": int,
        "epochs": int,
        "seed": int,
        "time_only": lambda s: s.strip().lower() in ("1", "true", "yes"),
        "normalization": str,
    }
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in typed:
            raise ValidationError(f"line {lineno}: unknown key {key!r}")
        try:
            out[key] = typed[key](value)
        except ValueError:
            raise ValidationError(f"line {lineno}: bad value for {key}: {value!r}") from None
    return out
