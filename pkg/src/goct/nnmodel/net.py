"""Encoder-decoder Transformer in plain numpy.

Every sublayer forward returns (output, cache) and has a matching
backward that consumes the cache, so the whole model trains by explicit
backprop.  Arrays follow the dtype of the parameter tensors: float32 in
production, float64 when a gradient check wants headroom.

Layout: pre-norm residual blocks, ReLU FFN, sinusoidal positions added
to both encoder input projection and decoder embeddings, final norm on
both stacks, untied output projection.  Decoder token vectors are
[token_embed(208) || difficulty_embed(48)].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from goct.errors import ValidationError
from goct.nnmodel.config import (
    CONTEXT_LEN,
    ENCODER_BEATS,
    N_DIFF_BUCKETS,
    ModelConfig,
    difficulty_bucket,
    validate_config,
)

N_MELS = 80
LN_EPS = 1e-5
NEG_INF = -1e9
BUFFER_NAMES = ("pos_encoding", "feat_mean", "feat_std")


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict  # name -> np.ndarray


def trainable_names(params: ModelParams) -> list[str]:
    return [n for n in params.tensors if n not in BUFFER_NAMES]


def cast_params(params: ModelParams, dtype) -> ModelParams:
    return replace(params, tensors={n: t.astype(dtype) for n, t in params.tensors.items()})


def sinusoidal_encoding(max_len: int, d_model: int) -> np.ndarray:
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    i = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, i / d_model)
    pe = np.zeros((max_len, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return pe.astype(np.float32)


def init_params(config: ModelConfig, seed: int = 0, n_mels: int = N_MELS) -> ModelParams:
    """Glorot-uniform weights, zero biases, unit layernorm gains."""
    validate_config(config)
    rng = np.random.default_rng(seed)
    t: dict[str, np.ndarray] = {}

    def glorot(name, fan_in, fan_out, shape=None):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        t[name] = rng.uniform(-limit, limit, shape or (fan_in, fan_out)).astype(np.float32)

    def zeros(name, *shape):
        t[name] = np.zeros(shape, dtype=np.float32)

    def ones(name, *shape):
        t[name] = np.ones(shape, dtype=np.float32)

    d, ff = config.d_model, config.d_ff
    glorot("enc_in_w", n_mels, d)
    zeros("enc_in_b", d)

    def attn_block(prefix):
        for part in ("q", "k", "v", "o"):
            glorot(f"{prefix}_w{part}", d, d)
            zeros(f"{prefix}_b{part}", d)

    def norm_block(prefix):
        ones(f"{prefix}_g", d)
        zeros(f"{prefix}_b", d)

    for i in range(config.n_layers):
        norm_block(f"enc{i}_ln1")
        attn_block(f"enc{i}_attn")
        norm_block(f"enc{i}_ln2")
        glorot(f"enc{i}_ffn_w1", d, ff)
        zeros(f"enc{i}_ffn_b1", ff)
        glorot(f"enc{i}_ffn_w2", ff, d)
        zeros(f"enc{i}_ffn_b2", d)
    norm_block("enc_ln")

    for i in range(config.n_layers):
        norm_block(f"dec{i}_ln1")
        attn_block(f"dec{i}_self")
        norm_block(f"dec{i}_ln2")
        attn_block(f"dec{i}_cross")
        norm_block(f"dec{i}_ln3")
        glorot(f"dec{i}_ffn_w1", d, ff)
        zeros(f"dec{i}_ffn_b1", ff)
        glorot(f"dec{i}_ffn_w2", ff, d)
        zeros(f"dec{i}_ffn_b2", d)
    norm_block("dec_ln")

    glorot("tok_embed", config.vocab, config.token_embed_dim)
    glorot("diff_embed", N_DIFF_BUCKETS, config.difficulty_embed_dim)
    glorot("out_w", d, config.vocab)
    zeros("out_b", config.vocab)

    max_len = max(ENCODER_BEATS * 48, CONTEXT_LEN + 1 + config.max_target_tokens)
    t["pos_encoding"] = sinusoidal_encoding(max_len, d)
    t["feat_mean"] = np.zeros(n_mels, dtype=np.float32)
    t["feat_std"] = np.ones(n_mels, dtype=np.float32)
    return ModelParams(config=config, tensors=t)


# ---------------------------------------------------------------------------
# Primitive layers: fwd returns (out, cache); bwd consumes the cache.

def _linear_fwd(x, w, b):
    return x @ w + b, (x, w)


def _linear_bwd(dy, cache):
    x, w = cache
    dx = dy @ w.T
    dw = x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    return dx, dw, db


def _layernorm_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def _layernorm_bwd(dy, cache):
    xhat, inv, g = cache
    lead = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(axis=lead)
    db = dy.sum(axis=lead)
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dg, db


def _dropout_fwd(x, p, rng, train):
    if not train or p <= 0.0:
        return x, None
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1.0 - p)
    return x * keep, keep


def _dropout_bwd(dy, keep):
    return dy if keep is None else dy * keep


def _softmax(scores):
    m = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - m)
    return e / e.sum(axis=-1, keepdims=True)


def _split_heads(x, n_heads):
    B, T, D = x.shape
    return x.reshape(B, T, n_heads, D // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, H, T, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, H * dh)


def _attn_weights(p, prefix):
    return tuple(p[f"{prefix}_{n}"] for n in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"))


def _mha_fwd(xq, xkv, weights, n_heads, mask):
    wq, bq, wk, bk, wv, bv, wo, bo = weights
    q, cq = _linear_fwd(xq, wq, bq)
    k, ck = _linear_fwd(xkv, wk, bk)
    v, cv = _linear_fwd(xkv, wv, bv)
    qh = _split_heads(q, n_heads)
    kh = _split_heads(k, n_heads)
    vh = _split_heads(v, n_heads)
    scale = qh.dtype.type(1.0 / math.sqrt(qh.shape[-1]))
    scores = (qh @ kh.transpose(0, 1, 3, 2)) * scale
    if mask is not None:
        scores = scores + mask
    att = _softmax(scores)
    ctx = att @ vh
    out, co = _linear_fwd(_merge_heads(ctx), wo, bo)
    return out, (cq, ck, cv, qh, kh, vh, att, scale, n_heads, co)


def _mha_bwd(dout, cache):
    cq, ck, cv, qh, kh, vh, att, scale, n_heads, co = cache
    dmerged, dwo, dbo = _linear_bwd(dout, co)
    dctx = _split_heads(dmerged, n_heads)
    datt = dctx @ vh.transpose(0, 1, 3, 2)
    dvh = att.transpose(0, 1, 3, 2) @ dctx
    dscores = att * (datt - (datt * att).sum(axis=-1, keepdims=True))
    dscores = dscores * scale
    dqh = dscores @ kh
    dkh = dscores.transpose(0, 1, 3, 2) @ qh
    dq, dwq, dbq = _linear_bwd(_merge_heads(dqh), cq)
    dk, dwk, dbk = _linear_bwd(_merge_heads(dkh), ck)
    dv, dwv, dbv = _linear_bwd(_merge_heads(dvh), cv)
    return dq, dk + dv, (dwq, dbq, dwk, dbk, dwv, dbv, dwo, dbo)


def _store_attn_grads(grads, prefix, attn_grads):
    for name, g in zip(("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"), attn_grads):
        grads[f"{prefix}_{name}"] = g


def _ffn_fwd(x, w1, b1, w2, b2):
    h, c1 = _linear_fwd(x, w1, b1)
    r = np.maximum(h, 0)
    out, c2 = _linear_fwd(r, w2, b2)
    return out, (c1, c2, h > 0)


def _ffn_bwd(dout, cache):
    c1, c2, relu_mask = cache
    dr, dw2, db2 = _linear_bwd(dout, c2)
    dh = dr * relu_mask
    dx, dw1, db1 = _linear_bwd(dh, c1)
    return dx, (dw1, db1, dw2, db2)


def _store_ffn_grads(grads, prefix, ffn_grads):
    for name, g in zip(("w1", "b1", "w2", "b2"), ffn_grads):
        grads[f"{prefix}_{name}"] = g


def causal_mask(n: int) -> np.ndarray:
    return np.triu(np.full((n, n), NEG_INF, dtype=np.float32), k=1)


# ---------------------------------------------------------------------------
# Encoder / decoder layers

def _enc_layer_fwd(x, p, i, cfg, rng, train):
    pre = f"enc{i}"
    n1, c_ln1 = _layernorm_fwd(x, p[f"{pre}_ln1_g"], p[f"{pre}_ln1_b"])
    a, c_att = _mha_fwd(n1, n1, _attn_weights(p, f"{pre}_attn"), cfg.n_heads, None)
    a, m1 = _dropout_fwd(a, cfg.dropout, rng, train)
    h1 = x + a
    n2, c_ln2 = _layernorm_fwd(h1, p[f"{pre}_ln2_g"], p[f"{pre}_ln2_b"])
    f, c_ffn = _ffn_fwd(n2, p[f"{pre}_ffn_w1"], p[f"{pre}_ffn_b1"], p[f"{pre}_ffn_w2"], p[f"{pre}_ffn_b2"])
    f, m2 = _dropout_fwd(f, cfg.dropout, rng, train)
    return h1 + f, (c_ln1, c_att, m1, c_ln2, c_ffn, m2)


def _enc_layer_bwd(dout, cache, p, i, grads):
    pre = f"enc{i}"
    c_ln1, c_att, m1, c_ln2, c_ffn, m2 = cache
    df = _dropout_bwd(dout, m2)
    dn2, ffn_grads = _ffn_bwd(df, c_ffn)
    _store_ffn_grads(grads, f"{pre}_ffn", ffn_grads)
    dh1_ln, dg2, db2 = _layernorm_bwd(dn2, c_ln2)
    grads[f"{pre}_ln2_g"] = dg2
    grads[f"{pre}_ln2_b"] = db2
    dh1 = dout + dh1_ln
    da = _dropout_bwd(dh1, m1)
    dq, dkv, attn_grads = _mha_bwd(da, c_att)
    _store_attn_grads(grads, f"{pre}_attn", attn_grads)
    dn1 = dq + dkv
    dx_ln, dg1, db1 = _layernorm_bwd(dn1, c_ln1)
    grads[f"{pre}_ln1_g"] = dg1
    grads[f"{pre}_ln1_b"] = db1
    return dh1 + dx_ln


def _dec_layer_fwd(x, mem, p, i, cfg, mask, rng, train):
    pre = f"dec{i}"
    n1, c_ln1 = _layernorm_fwd(x, p[f"{pre}_ln1_g"], p[f"{pre}_ln1_b"])
    a, c_self = _mha_fwd(n1, n1, _attn_weights(p, f"{pre}_self"), cfg.n_heads, mask)
    a, m1 = _dropout_fwd(a, cfg.dropout, rng, train)
    h1 = x + a
    n2, c_ln2 = _layernorm_fwd(h1, p[f"{pre}_ln2_g"], p[f"{pre}_ln2_b"])
    c, c_cross = _mha_fwd(n2, mem, _attn_weights(p, f"{pre}_cross"), cfg.n_heads, None)
    c, m2 = _dropout_fwd(c, cfg.dropout, rng, train)
    h2 = h1 + c
    n3, c_ln3 = _layernorm_fwd(h2, p[f"{pre}_ln3_g"], p[f"{pre}_ln3_b"])
    f, c_ffn = _ffn_fwd(n3, p[f"{pre}_ffn_w1"], p[f"{pre}_ffn_b1"], p[f"{pre}_ffn_w2"], p[f"{pre}_ffn_b2"])
    f, m3 = _dropout_fwd(f, cfg.dropout, rng, train)
    return h2 + f, (c_ln1, c_self, m1, c_ln2, c_cross, m2, c_ln3, c_ffn, m3)


def _dec_layer_bwd(dout, cache, p, i, grads):
    pre = f"dec{i}"
    c_ln1, c_self, m1, c_ln2, c_cross, m2, c_ln3, c_ffn, m3 = cache
    df = _dropout_bwd(dout, m3)
    dn3, ffn_grads = _ffn_bwd(df, c_ffn)
    _store_ffn_grads(grads, f"{pre}_ffn", ffn_grads)
    dh2_ln, dg3, db3 = _layernorm_bwd(dn3, c_ln3)
    grads[f"{pre}_ln3_g"] = dg3
    grads[f"{pre}_ln3_b"] = db3
    dh2 = dout + dh2_ln
    dc = _dropout_bwd(dh2, m2)
    dn2, dmem, cross_grads = _mha_bwd(dc, c_cross)
    _store_attn_grads(grads, f"{pre}_cross", cross_grads)
    dh1_ln, dg2, db2 = _layernorm_bwd(dn2, c_ln2)
    grads[f"{pre}_ln2_g"] = dg2
    grads[f"{pre}_ln2_b"] = db2
    dh1 = dh2 + dh1_ln
    da = _dropout_bwd(dh1, m1)
    dq, dkv, self_grads = _mha_bwd(da, c_self)
    _store_attn_grads(grads, f"{pre}_self", self_grads)
    dn1 = dq + dkv
    dx_ln, dg1, db1 = _layernorm_bwd(dn1, c_ln1)
    grads[f"{pre}_ln1_g"] = dg1
    grads[f"{pre}_ln1_b"] = db1
    return dh1 + dx_ln, dmem


# ---------------------------------------------------------------------------
# Full model

def _validate_inputs(p, cfg, encoder_frames, decoder_tokens):
    if encoder_frames.ndim != 3 or encoder_frames.shape[2] != p["enc_in_w"].shape[0]:
        raise ValidationError(
            f"encoder_frames shape {encoder_frames.shape} does not match enc_in_w input dim "
            f"{p['enc_in_w'].shape[0]}"
        )
    max_len = p["pos_encoding"].shape[0]
    if encoder_frames.shape[1] > max_len:
        raise ValidationError(f"encoder length {encoder_frames.shape[1]} exceeds pos_encoding rows {max_len}")
    if decoder_tokens.ndim != 2:
        raise ValidationError(f"decoder_tokens must be 2-D, got shape {decoder_tokens.shape}")
    if decoder_tokens.shape[1] > max_len:
        raise ValidationError(f"decoder length {decoder_tokens.shape[1]} exceeds pos_encoding rows {max_len}")
    if decoder_tokens.size and (decoder_tokens.min() < 0 or decoder_tokens.max() >= cfg.vocab):
        raise ValidationError("decoder token id outside tok_embed vocabulary")


def forward_batch(params: ModelParams, encoder_frames, decoder_tokens, difficulty, *, train=False, rng=None):
    """Batched forward.  Returns (logits (B,T,vocab), cache for backward)."""
    p = params.tensors
    cfg = params.config
    encoder_frames = np.asarray(encoder_frames)
    decoder_tokens = np.asarray(decoder_tokens)
    _validate_inputs(p, cfg, encoder_frames, decoder_tokens)
    B, S, _ = encoder_frames.shape
    T = decoder_tokens.shape[1]
    pe = p["pos_encoding"]

    ex, c_enc_in = _linear_fwd(encoder_frames, p["enc_in_w"], p["enc_in_b"])
    ex = ex + pe[:S]
    ex, m_enc_in = _dropout_fwd(ex, cfg.dropout, rng, train)
    enc_caches = []
    for i in range(cfg.n_layers):
        ex, c = _enc_layer_fwd(ex, p, i, cfg, rng, train)
        enc_caches.append(c)
    mem, c_enc_ln = _layernorm_fwd(ex, p["enc_ln_g"], p["enc_ln_b"])

    buckets = np.array([difficulty_bucket(float(d)) for d in np.atleast_1d(difficulty)], dtype=np.int64)
    if buckets.shape[0] != B:
        raise ValidationError(f"difficulty batch {buckets.shape[0]} does not match encoder batch {B}")
    tok = p["tok_embed"][decoder_tokens]  # (B, T, token_embed_dim)
    dif = np.broadcast_to(p["diff_embed"][buckets][:, None, :], (B, T, cfg.difficulty_embed_dim))
    dx = np.concatenate([tok, dif], axis=-1) + pe[:T]
    dx, m_dec_in = _dropout_fwd(dx, cfg.dropout, rng, train)
    mask = causal_mask(T)
    dec_caches = []
    for i in range(cfg.n_layers):
        dx, c = _dec_layer_fwd(dx, mem, p, i, cfg, mask, rng, train)
        dec_caches.append(c)
    dn, c_dec_ln = _layernorm_fwd(dx, p["dec_ln_g"], p["dec_ln_b"])
    logits, c_out = _linear_fwd(dn, p["out_w"], p["out_b"])

    cache = (
        c_enc_in, m_enc_in, enc_caches, c_enc_ln,
        decoder_tokens, buckets, m_dec_in, dec_caches, c_dec_ln, c_out,
        cfg,
    )
    return logits, cache


def backward_batch(params: ModelParams, dlogits, cache) -> dict:
    """Gradients for every trainable tensor, keyed by name."""
    p = params.tensors
    (c_enc_in, m_enc_in, enc_caches, c_enc_ln,
     decoder_tokens, buckets, m_dec_in, dec_caches, c_dec_ln, c_out, cfg) = cache
    grads: dict[str, np.ndarray] = {}

    ddn, grads["out_w"], grads["out_b"] = _linear_bwd(dlogits, c_out)
    ddx, grads["dec_ln_g"], grads["dec_ln_b"] = _layernorm_bwd(ddn, c_dec_ln)
    dmem_total = None
    for i in reversed(range(cfg.n_layers)):
        ddx, dmem = _dec_layer_bwd(ddx, dec_caches[i], p, i, grads)
        dmem_total = dmem if dmem_total is None else dmem_total + dmem
    ddx = _dropout_bwd(ddx, m_dec_in)

    # split the concatenated embedding gradient
    dtok = ddx[..., : cfg.token_embed_dim]
    ddif = ddx[..., cfg.token_embed_dim :]
    g_tok = np.zeros_like(p["tok_embed"])
    np.add.at(g_tok, decoder_tokens, dtok)
    grads["tok_embed"] = g_tok
    g_dif = np.zeros_like(p["diff_embed"])
    np.add.at(g_dif, buckets, ddif.sum(axis=1))
    grads["diff_embed"] = g_dif

    dex, grads["enc_ln_g"], grads["enc_ln_b"] = _layernorm_bwd(dmem_total, c_enc_ln)
    for i in reversed(range(cfg.n_layers)):
        dex = _enc_layer_bwd(dex, enc_caches[i], p, i, grads)
    dex = _dropout_bwd(dex, m_enc_in)
    _, grads["enc_in_w"], grads["enc_in_b"] = _linear_bwd(dex, c_enc_in)
    return grads


def forward(params: ModelParams, encoder_frames, decoder_tokens, difficulty: float):
    """Single-sample inference: (S,80) frames + token list -> (T, vocab) logits."""
    frames = np.asarray(encoder_frames)[None, :, :]
    tokens = np.asarray(decoder_tokens, dtype=np.int64)[None, :]
    logits, _ = forward_batch(params, frames, tokens, [difficulty], train=False)
    return logits[0]


# ---------------------------------------------------------------------------
# Loss: label-smoothed cross-entropy over the target positions.

def loss_and_dlogits(logits, targets, mask, smoothing: float = 0.02):
    """Mean smoothed CE over mask; also returns d(loss)/d(logits).

    logits (B,L,V) at the positions predicting `targets` (B,L); mask
    (B,L) marks real positions (False once padding follows the first EOS).
    """
    mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        raise ValidationError("loss has no unmasked positions")
    V = logits.shape[-1]
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse  # (B,L,V)

    tgt_logp = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    eps = smoothing
    ce = -((1.0 - eps) * tgt_logp + (eps / V) * logp.sum(axis=-1))
    loss = float((ce * mask).sum() / n)

    q = np.full_like(logp, eps / V)
    np.put_along_axis(q, targets[..., None], eps / V + (1.0 - eps), axis=-1)
    dlogits = (np.exp(logp) - q) * (mask[..., None] / n)
    return loss, dlogits.astype(logits.dtype)
