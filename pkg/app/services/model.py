"""
Miniature T5-style encoder-decoder in numpy with exact analytic gradients.

Layout per block is pre-norm with scale-only RMS normalization:

    encoder block:  x += SelfAttn(RMS(x)),  x += FF(RMS(x))
    decoder block:  y += CausalSelfAttn(RMS(y)),  y += CrossAttn(RMS(y), memory),  y += FF(RMS(y))

Each stack owns one learned relative-position bias table of shape
(n_heads, 2 * max_rel_distance + 1) indexed by the clipped key-minus-query
offset and shared by all self-attention layers of that stack. The output
projection is tied to the embedding matrix unless ``tie_embeddings`` is off
(then a separate ``lm_head`` of the same shape is used); the decoder output
is scaled by d_model ** -0.5 first. Everything is float64.

Parameters live in a name -> array mapping; ``param_names`` gives the
canonical order (also the checkpoint array order).
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import DataError
from app.schemas.experiment import ModelConfig
from app.services.tokenizer import DECODER_START_ID, EOS_ID, EncodedExample

RMS_EPS = 1e-6
DTYPE = np.float64

Arrays = Dict[str, np.ndarray]


@dataclass
class ModelParams:
    """All trainable arrays of the model plus the config that shaped them."""

    config: ModelConfig
    arrays: Arrays

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {name: a.copy() for name, a in self.arrays.items()})

    @property
    def n_parameters(self) -> int:
        return int(sum(a.size for a in self.arrays.values()))

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays.values())


def param_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Name -> shape, in canonical order."""
    d, f, h = config.d_model, config.d_ff, config.n_heads
    n_rel = 2 * config.max_rel_distance + 1
    shapes: Dict[str, Tuple[int, ...]] = {"embed": (config.vocab_size, d), "enc.rel_bias": (h, n_rel)}

    for layer in range(config.n_layers_enc):
        pre = f"enc.{layer}"
        shapes[f"{pre}.attn_norm"] = (d,)
        for m in "qkvo":
            shapes[f"{pre}.attn.{m}"] = (d, d)
        shapes[f"{pre}.ff_norm"] = (d,)
        shapes[f"{pre}.ff.wi"] = (d, f)
        shapes[f"{pre}.ff.wo"] = (f, d)
    shapes["enc.final_norm"] = (d,)

    shapes["dec.rel_bias"] = (h, n_rel)
    for layer in range(config.n_layers_dec):
        pre = f"dec.{layer}"
        shapes[f"{pre}.self_norm"] = (d,)
        for m in "qkvo":
            shapes[f"{pre}.self.{m}"] = (d, d)
        shapes[f"{pre}.cross_norm"] = (d,)
        for m in "qkvo":
            shapes[f"{pre}.cross.{m}"] = (d, d)
        shapes[f"{pre}.ff_norm"] = (d,)
        shapes[f"{pre}.ff.wi"] = (d, f)
        shapes[f"{pre}.ff.wo"] = (f, d)
    shapes["dec.final_norm"] = (d,)
    if not config.tie_embeddings:
        shapes["lm_head"] = (config.vocab_size, d)
    return shapes


def param_names(config: ModelConfig) -> List[str]:
    return list(param_shapes(config))


def init_params(config: ModelConfig) -> ModelParams:
    """
    Draw initial parameters.

    Weight matrices (embedding included) ~ N(0, 1/d_model) i.e. standard
    deviation 1/sqrt(d_model); norm scales are ones; bias tables are zeros.
    Draws follow ``param_names`` order from ``numpy.random.default_rng(seed)``.
    """
    if config.d_model % config.n_heads:
        raise DataError("d_model must be divisible by n_heads")
    rng = np.random.default_rng(config.seed)
    scale = 1.0 / math.sqrt(config.d_model)
    arrays: Arrays = {}
    for name, shape in param_shapes(config).items():
        if name.endswith("_norm"):
            arrays[name] = np.ones(shape, dtype=DTYPE)
        elif name.endswith("rel_bias"):
            arrays[name] = np.zeros(shape, dtype=DTYPE)
        else:
            arrays[name] = rng.normal(0.0, scale, size=shape).astype(DTYPE)
    return ModelParams(config, arrays)


def zeros_like_params(arrays: Arrays) -> Arrays:
    return {name: np.zeros_like(a) for name, a in arrays.items()}


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


def _rms_forward(x, g):
    r = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + RMS_EPS)
    return x * r * g, (x, r, g)


def _rms_backward(dy, cache):
    x, r, g = cache
    dg = np.sum(dy * x * r, axis=0)
    dxh = dy * g
    dx = r * (dxh - x * (r * r) * np.mean(dxh * x, axis=-1, keepdims=True))
    return dx, dg


def _attention_forward(q, k, v, mask=None, rel_bias=None):
    scores = (q @ np.swapaxes(k, -1, -2)) / math.sqrt(q.shape[-1])
    if rel_bias is not None:
        scores = scores + rel_bias
    if mask is not None:
        mask = np.broadcast_to(mask, scores.shape)
        if not mask.any(axis=-1).all():
            raise ValueError("attention row with every position masked")
        scores = np.where(mask, scores, -np.inf)
    scores = scores - scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=-1, keepdims=True)
    return weights @ v, weights


def attention(queries, keys, values, mask=None, rel_bias=None):
    """
    Scaled dot-product attention.

    Row i of the output is the softmax over unmasked j of
    ``q_i . k_j / sqrt(d_head) + rel_bias[i, j]`` applied to the value rows.

    Args:
        queries: (..., Tq, d_head)
        keys: (..., Tk, d_head)
        values: (..., Tk, d_v)
        mask: Boolean (..., Tq, Tk), True where attention is allowed
        rel_bias: Additive score bias broadcastable to (..., Tq, Tk)

    Raises:
        ValueError: If a query row has no unmasked position
    """
    out, _ = _attention_forward(
        np.asarray(queries, dtype=DTYPE),
        np.asarray(keys, dtype=DTYPE),
        np.asarray(values, dtype=DTYPE),
        mask,
        rel_bias,
    )
    return out


def attention_weights(queries, keys, mask=None, rel_bias=None):
    """The softmax weights ``attention`` would use."""
    keys = np.asarray(keys, dtype=DTYPE)
    _, weights = _attention_forward(np.asarray(queries, dtype=DTYPE), keys, keys, mask, rel_bias)
    return weights


def _split_heads(x, n_heads):
    t, d = x.shape
    return x.reshape(t, n_heads, d // n_heads).transpose(1, 0, 2)


def _merge_heads(x):
    h, t, dh = x.shape
    return x.transpose(1, 0, 2).reshape(t, h * dh)


def _mha_forward(p, prefix, xq, xkv, n_heads, mask=None, rel_bias=None):
    q = _split_heads(xq @ p[f"{prefix}.q"], n_heads)
    k = _split_heads(xkv @ p[f"{prefix}.k"], n_heads)
    v = _split_heads(xkv @ p[f"{prefix}.v"], n_heads)
    ctx, weights = _attention_forward(q, k, v, mask, rel_bias)
    ctx = _merge_heads(ctx)
    return ctx @ p[f"{prefix}.o"], (xq, xkv, q, k, v, weights, ctx)


def _mha_backward(dout, p, prefix, cache, grads, n_heads):
    """Returns (d xq, d xkv, d scores) where d scores is also the bias gradient."""
    xq, xkv, q, k, v, weights, ctx = cache
    grads[f"{prefix}.o"] += ctx.T @ dout
    dctx = _split_heads(dout @ p[f"{prefix}.o"].T, n_heads)

    dweights = dctx @ np.swapaxes(v, -1, -2)
    dv = np.swapaxes(weights, -1, -2) @ dctx
    dscores = weights * (dweights - np.sum(dweights * weights, axis=-1, keepdims=True))

    inv_sqrt = 1.0 / math.sqrt(q.shape[-1])
    dq = _merge_heads((dscores @ k) * inv_sqrt)
    dk = _merge_heads((np.swapaxes(dscores, -1, -2) @ q) * inv_sqrt)
    dv = _merge_heads(dv)

    grads[f"{prefix}.q"] += xq.T @ dq
    grads[f"{prefix}.k"] += xkv.T @ dk
    grads[f"{prefix}.v"] += xkv.T @ dv
    dxq = dq @ p[f"{prefix}.q"].T
    dxkv = dk @ p[f"{prefix}.k"].T + dv @ p[f"{prefix}.v"].T
    return dxq, dxkv, dscores


def _ff_forward(p, prefix, x):
    pre = x @ p[f"{prefix}.wi"]
    act = np.maximum(pre, 0.0)
    return act @ p[f"{prefix}.wo"], (x, pre, act)


def _ff_backward(dout, p, prefix, cache, grads):
    x, pre, act = cache
    grads[f"{prefix}.wo"] += act.T @ dout
    dpre = (dout @ p[f"{prefix}.wo"].T) * (pre > 0)
    grads[f"{prefix}.wi"] += x.T @ dpre
    return dpre @ p[f"{prefix}.wi"].T


def relative_position_index(q_len: int, k_len: int, max_distance: int) -> np.ndarray:
    """(q_len, k_len) table index of the clipped offset key - query."""
    offsets = np.arange(k_len)[None, :] - np.arange(q_len)[:, None]
    return np.clip(offsets, -max_distance, max_distance) + max_distance


def _bias_table_grad(dbias, idx, n_rel):
    return np.stack(
        [np.bincount(idx.ravel(), weights=dbias[h].ravel(), minlength=n_rel) for h in range(dbias.shape[0])]
    )


def _output_name(config: ModelConfig) -> str:
    return "embed" if config.tie_embeddings else "lm_head"


def _check_ids(ids, config: ModelConfig, what: str) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise DataError(f"{what} must be a non-empty 1-D id sequence")
    if ids.size > config.max_seq_len:
        raise DataError(f"{what} length {ids.size} exceeds max_seq_len {config.max_seq_len}")
    if ids.min() < 0 or ids.max() >= config.vocab_size:
        raise DataError(f"{what} contains ids outside the vocabulary")
    return ids


def _ids(seq):
    return getattr(seq, "ids", seq)


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------


def _encoder_forward(params: ModelParams, src):
    cfg, p = params.config, params.arrays
    src = _check_ids(src, cfg, "source")
    n = src.size
    idx = relative_position_index(n, n, cfg.max_rel_distance)
    bias = p["enc.rel_bias"][:, idx]

    x = p["embed"][src]
    layers = []
    for layer in range(cfg.n_layers_enc):
        pre = f"enc.{layer}"
        h, c_norm1 = _rms_forward(x, p[f"{pre}.attn_norm"])
        a, c_attn = _mha_forward(p, f"{pre}.attn", h, h, cfg.n_heads, rel_bias=bias)
        x = x + a
        h, c_norm2 = _rms_forward(x, p[f"{pre}.ff_norm"])
        f, c_ff = _ff_forward(p, f"{pre}.ff", h)
        x = x + f
        layers.append((c_norm1, c_attn, c_norm2, c_ff))
    memory, c_final = _rms_forward(x, p["enc.final_norm"])
    return memory, (src, idx, layers, c_final)


def _decoder_forward(params: ModelParams, memory, tgt_in):
    cfg, p = params.config, params.arrays
    tgt_in = _check_ids(tgt_in, cfg, "decoder input")
    n = tgt_in.size
    idx = relative_position_index(n, n, cfg.max_rel_distance)
    bias = p["dec.rel_bias"][:, idx]
    causal = np.tril(np.ones((n, n), dtype=bool))

    y = p["embed"][tgt_in]
    layers = []
    for layer in range(cfg.n_layers_dec):
        pre = f"dec.{layer}"
        h, c_norm1 = _rms_forward(y, p[f"{pre}.self_norm"])
        a, c_self = _mha_forward(p, f"{pre}.self", h, h, cfg.n_heads, mask=causal, rel_bias=bias)
        y = y + a
        h, c_norm2 = _rms_forward(y, p[f"{pre}.cross_norm"])
        a, c_cross = _mha_forward(p, f"{pre}.cross", h, memory, cfg.n_heads)
        y = y + a
        h, c_norm3 = _rms_forward(y, p[f"{pre}.ff_norm"])
        f, c_ff = _ff_forward(p, f"{pre}.ff", h)
        y = y + f
        layers.append((c_norm1, c_self, c_norm2, c_cross, c_norm3, c_ff))
    z, c_final = _rms_forward(y, p["dec.final_norm"])
    zs = z * (cfg.d_model ** -0.5)
    logits = zs @ p[_output_name(cfg)].T
    return logits, (tgt_in, idx, layers, c_final, zs)


def encode(params: ModelParams, src) -> np.ndarray:
    """Encoder output (src_len, d_model)."""
    return _encoder_forward(params, _ids(src))[0]


def decode_logits(params: ModelParams, memory: np.ndarray, tgt_in) -> np.ndarray:
    """Decoder logits (tgt_len, vocab_size) against a precomputed encoder output."""
    return _decoder_forward(params, memory, _ids(tgt_in))[0]


def forward(params: ModelParams, src, tgt_in) -> np.ndarray:
    """
    Teacher-forced forward pass.

    Args:
        params: Model parameters
        src: Source ids
        tgt_in: Decoder input ids (targets shifted right behind the start position)

    Returns:
        Logits of shape (len(tgt_in), vocab_size)
    """
    return decode_logits(params, encode(params, src), tgt_in)


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _token_losses(logits, targets, pad_mask):
    targets = np.asarray(_ids(targets), dtype=np.int64)
    if logits.shape[0] != targets.size:
        raise DataError(f"{logits.shape[0]} logit rows for {targets.size} targets")
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[-1]):
        raise DataError("target ids outside the vocabulary")
    keep = np.ones(targets.size, dtype=bool) if pad_mask is None else ~np.asarray(pad_mask, dtype=bool)
    if not keep.any():
        raise DataError("every target position is padded")
    logp = log_softmax(logits)
    losses = -logp[np.arange(targets.size), targets]
    return losses, keep, logp, targets


def cross_entropy(logits: np.ndarray, targets, pad_mask: Optional[Sequence[bool]] = None) -> float:
    """
    Mean token cross-entropy in nats.

    Args:
        logits: (T, V)
        targets: T target ids
        pad_mask: True where a position is padding and excluded from the mean

    Raises:
        DataError: If every position is padded
    """
    losses, keep, _, _ = _token_losses(np.asarray(logits, dtype=DTYPE), targets, pad_mask)
    return float(losses[keep].mean())


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------


def _encoder_backward(params: ModelParams, dmemory, cache, grads):
    cfg, p = params.config, params.arrays
    src, idx, layers, c_final = cache
    dx, dg = _rms_backward(dmemory, c_final)
    grads["enc.final_norm"] += dg
    dbias = np.zeros((cfg.n_heads, src.size, src.size))

    for layer in reversed(range(cfg.n_layers_enc)):
        pre = f"enc.{layer}"
        c_norm1, c_attn, c_norm2, c_ff = layers[layer]
        dh = _ff_backward(dx, p, f"{pre}.ff", c_ff, grads)
        dxn, dg = _rms_backward(dh, c_norm2)
        grads[f"{pre}.ff_norm"] += dg
        dx = dx + dxn

        dhq, dhkv, ds = _mha_backward(dx, p, f"{pre}.attn", c_attn, grads, cfg.n_heads)
        dbias += ds
        dxn, dg = _rms_backward(dhq + dhkv, c_norm1)
        grads[f"{pre}.attn_norm"] += dg
        dx = dx + dxn

    grads["enc.rel_bias"] += _bias_table_grad(dbias, idx, 2 * cfg.max_rel_distance + 1)
    np.add.at(grads["embed"], src, dx)


def _decoder_backward(params: ModelParams, dlogits, memory, cache, grads):
    cfg, p = params.config, params.arrays
    tgt_in, idx, layers, c_final, zs = cache

    out_name = _output_name(cfg)
    grads[out_name] += dlogits.T @ zs
    dz = (dlogits @ p[out_name]) * (cfg.d_model ** -0.5)
    dy, dg = _rms_backward(dz, c_final)
    grads["dec.final_norm"] += dg

    dmemory = np.zeros_like(memory)
    dbias = np.zeros((cfg.n_heads, tgt_in.size, tgt_in.size))
    for layer in reversed(range(cfg.n_layers_dec)):
        pre = f"dec.{layer}"
        c_norm1, c_self, c_norm2, c_cross, c_norm3, c_ff = layers[layer]

        dh = _ff_backward(dy, p, f"{pre}.ff", c_ff, grads)
        dyn, dg = _rms_backward(dh, c_norm3)
        grads[f"{pre}.ff_norm"] += dg
        dy = dy + dyn

        dhq, dmem, _ = _mha_backward(dy, p, f"{pre}.cross", c_cross, grads, cfg.n_heads)
        dmemory += dmem
        dyn, dg = _rms_backward(dhq, c_norm2)
        grads[f"{pre}.cross_norm"] += dg
        dy = dy + dyn

        dhq, dhkv, ds = _mha_backward(dy, p, f"{pre}.self", c_self, grads, cfg.n_heads)
        dbias += ds
        dyn, dg = _rms_backward(dhq + dhkv, c_norm1)
        grads[f"{pre}.self_norm"] += dg
        dy = dy + dyn

    grads["dec.rel_bias"] += _bias_table_grad(dbias, idx, 2 * cfg.max_rel_distance + 1)
    np.add.at(grads["embed"], tgt_in, dy)
    return dmemory


def _accumulate(params: ModelParams, src, tgt_in, targets, pad_mask, weight: float, grads: Arrays) -> Tuple[float, int]:
    """Add ``weight`` x gradient of the summed token loss; return (summed loss, token count)."""
    memory, enc_cache = _encoder_forward(params, _ids(src))
    logits, dec_cache = _decoder_forward(params, memory, _ids(tgt_in))
    losses, keep, logp, targets = _token_losses(logits, targets, pad_mask)

    dlogits = np.exp(logp)
    dlogits[np.arange(targets.size), targets] -= 1.0
    dlogits *= keep[:, None] * weight

    dmemory = _decoder_backward(params, dlogits, memory, dec_cache, grads)
    _encoder_backward(params, dmemory, enc_cache, grads)
    return float(losses[keep].sum()), int(keep.sum())


def backward(params: ModelParams, src, tgt_in, targets, pad_mask: Optional[Sequence[bool]] = None) -> Arrays:
    """
    Gradients of ``cross_entropy(forward(params, src, tgt_in), targets)``.

    Returns:
        Name -> gradient array, same shapes as ``params.arrays``
    """
    n_kept = len(_ids(targets)) if pad_mask is None else int(np.sum(~np.asarray(pad_mask, dtype=bool)))
    grads = zeros_like_params(params.arrays)
    _accumulate(params, src, tgt_in, targets, pad_mask, 1.0 / max(n_kept, 1), grads)
    return grads


def loss_and_grads(params: ModelParams, examples: Sequence[EncodedExample]) -> Tuple[float, Arrays]:
    """
    Mean token cross-entropy over a batch and its gradients.

    Examples are processed one at a time in input order, so the reduction
    order is fixed and each example's contribution is independent of its
    batch mates.
    """
    if not examples:
        raise DataError("empty batch")
    n_tokens = sum(len(ex.targets) for ex in examples)
    grads = zeros_like_params(params.arrays)
    total = 0.0
    for ex in examples:
        loss_sum, _ = _accumulate(params, ex.src, ex.tgt_in, ex.targets, None, 1.0 / n_tokens, grads)
        total += loss_sum
    return total / n_tokens, grads


def mean_loss(params: ModelParams, examples: Sequence[EncodedExample]) -> float:
    """Mean token cross-entropy over examples, forward only."""
    if not examples:
        raise DataError("no examples to score")
    total, count = 0.0, 0
    for ex in examples:
        logits = forward(params, ex.src, ex.tgt_in)
        losses, keep, _, _ = _token_losses(logits, ex.targets, None)
        total += float(losses[keep].sum())
        count += int(keep.sum())
    return total / count


def greedy_decode_ids(params: ModelParams, src, max_len: int) -> List[int]:
    """
    Emit argmax tokens (lowest id on ties) until EOS or ``max_len`` tokens.

    The returned ids exclude the start position and the EOS.
    """
    memory = encode(params, src)
    generated: List[int] = []
    while len(generated) < max_len:
        logits = decode_logits(params, memory, [DECODER_START_ID] + generated)
        next_id = int(np.argmax(logits[-1]))
        if next_id == EOS_ID:
            break
        generated.append(next_id)
    return generated
