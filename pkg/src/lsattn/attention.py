"""Bidirectional attention heads: exact, windowed, projected, and combined.

All operations accept inputs of shape (..., n, d) with optional leading batch
axes and return per-head outputs of shape (..., n, head_dim). Sequences are
padded internally to whole window segments; padded rows never influence real
outputs and are dropped before returning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .config import LSConfig
from .errors import ConfigError, ShapeError
from .params import HeadParams, MultiHeadParams, init_head_params
from .spans import bidirectional_key_mask, segment_window_indices
from .tensor import (
    Rng,
    Tensor,
    concat,
    layer_norm,
    masked_softmax,
    matmul,
    no_grad,
    scale,
    slice_axis,
    take,
    transpose_last,
)

__all__ = [
    "ProjectedKV",
    "AttentionWeights",
    "WeightsPiece",
    "full_attention_head",
    "multi_head",
    "sliding_window_attention_head",
    "dynamic_projection",
    "long_range_attention_head",
    "aggregate_plain_head",
    "aggregate_dualln_head",
    "aggregate_head",
    "norm_ratio_probe",
    "NormRatioResult",
]


@dataclass
class ProjectedKV:
    """Input-dependent compression of keys and values to `rank` rows.

    Each column of p is a distribution over tokens; kbar and vbar are the
    correspondingly weighted key and value embeddings.
    """

    p: Tensor
    kbar: Tensor
    vbar: Tensor

    @property
    def rank(self) -> int:
        return self.kbar.shape[-2]


@dataclass
class WeightsPiece:
    """A block of attention rows (..., queries, keys) with its key mask."""

    weights: np.ndarray
    attendable: np.ndarray | None


@dataclass
class AttentionWeights:
    """Attention weights in query order, split into (..., queries, keys) blocks."""

    pieces: list[WeightsPiece]
    seq_len: int

    def row_sums(self) -> np.ndarray:
        """Sum of attendable weights per real query, shape (..., seq_len)."""
        total = np.concatenate([p.weights.sum(axis=-1) for p in self.pieces], axis=-1)
        return total[..., : self.seq_len]


def _check_input(x: Tensor, p: HeadParams, cfg: LSConfig | None) -> None:
    if x.ndim < 2:
        raise ShapeError(f"attention input must be (..., n, d), got {x.shape}")
    if x.shape[-1] != p.wq.shape[0]:
        raise ShapeError(f"input width {x.shape[-1]} does not match wq {p.wq.shape}")
    if cfg is not None:
        if x.shape[-2] != cfg.seq_len:
            raise ShapeError(f"input length {x.shape[-2]} != config seq_len {cfg.seq_len}")
        if p.wq.shape != (cfg.model_dim, cfg.head_dim):
            raise ShapeError("head parameters do not match configuration")


def _pad_rows(x: Tensor, padded_len: int) -> Tensor:
    n = x.shape[-2]
    if padded_len == n:
        return x
    pad = Tensor(np.zeros(x.shape[:-2] + (padded_len - n, x.shape[-1])))
    return concat([x, pad], axis=-2)


def full_attention_head(
    x: Tensor, p: HeadParams, return_weights: bool = False
) -> Tensor | tuple[Tensor, AttentionWeights]:
    """Exact softmax attention of every query over every key."""
    _check_input(x, p, None)
    q, k, v = matmul(x, p.wq), matmul(x, p.wk), matmul(x, p.wv)
    dk = p.wq.shape[1]
    logits = scale(matmul(q, transpose_last(k)), 1.0 / math.sqrt(dk))
    weights = masked_softmax(logits)
    out = matmul(weights, v)
    if return_weights:
        info = AttentionWeights([WeightsPiece(weights.data, None)], x.shape[-2])
        return out, info
    return out


def multi_head(
    x: Tensor,
    p: MultiHeadParams,
    attn: Callable[[Tensor, HeadParams], Tensor],
) -> Tensor:
    """Run `attn` per head, join the outputs along the width, project with wo."""
    outputs = [attn(x, head) for head in p.heads]
    return matmul(concat(outputs, axis=-1), p.wo)


def dynamic_projection(
    x: Tensor,
    p: HeadParams,
    cfg: LSConfig,
    token_mask: np.ndarray | None = None,
    keys: Tensor | None = None,
    values: Tensor | None = None,
) -> ProjectedKV:
    """Compress keys and values through token distributions learned from x.

    The projection logits are normalized over the token axis, so each of the
    `rank` output rows is a convex combination of token embeddings. Excluded
    tokens (padding) receive exactly zero weight. `keys`/`values` may pass in
    precomputed x@wk and x@wv.
    """
    if cfg.rank == 0:
        dk = cfg.head_dim
        empty_p = Tensor(np.zeros(x.shape[:-1] + (0,)))
        empty = Tensor(np.zeros(x.shape[:-2] + (0, dk)))
        return ProjectedKV(p=empty_p, kbar=empty, vbar=empty)
    if p.wp is None:
        raise ShapeError("head has no projection matrix but rank > 0")
    logits_t = transpose_last(matmul(x, p.wp))
    pt = masked_softmax(logits_t, token_mask)
    k = keys if keys is not None else matmul(x, p.wk)
    v = values if values is not None else matmul(x, p.wv)
    return ProjectedKV(p=transpose_last(pt), kbar=matmul(pt, k), vbar=matmul(pt, v))


def long_range_attention_head(
    x: Tensor,
    pkv: ProjectedKV,
    p: HeadParams,
    cfg: LSConfig,
    return_weights: bool = False,
) -> Tensor | tuple[Tensor, AttentionWeights]:
    """Every query attends the projected keys and values only."""
    if cfg.rank < 1:
        raise ConfigError("long-range attention requires rank >= 1")
    q = matmul(x, p.wq)
    logits = scale(matmul(q, transpose_last(pkv.kbar)), 1.0 / math.sqrt(cfg.head_dim))
    weights = masked_softmax(logits)
    out = matmul(weights, pkv.vbar)
    if return_weights:
        info = AttentionWeights([WeightsPiece(weights.data, None)], x.shape[-2])
        return out, info
    return out


def sliding_window_attention_head(
    x: Tensor, p: HeadParams, cfg: LSConfig, return_weights: bool = False
) -> Tensor | tuple[Tensor, AttentionWeights]:
    """Softmax attention restricted to each query's window span."""
    if cfg.window < 2:
        raise ConfigError("sliding window attention requires window >= 2")
    return _aggregate(x, p, replace(cfg, rank=0), dual_ln=False, return_weights=return_weights)


def aggregate_plain_head(
    x: Tensor, p: HeadParams, cfg: LSConfig, return_weights: bool = False
) -> Tensor | tuple[Tensor, AttentionWeights]:
    """One softmax per query over the union of window and projected slots."""
    return _aggregate(x, p, cfg, dual_ln=False, return_weights=return_weights)


def aggregate_dualln_head(
    x: Tensor, p: HeadParams, cfg: LSConfig, return_weights: bool = False
) -> Tensor | tuple[Tensor, AttentionWeights]:
    """Aggregated attention with branch-wise key/value normalization.

    Window keys/values and projected keys/values pass through separate layer
    norms before the joint softmax, which equalizes their row norms at
    initialization.
    """
    return _aggregate(x, p, cfg, dual_ln=True, return_weights=return_weights)


def aggregate_head(
    x: Tensor, p: HeadParams, cfg: LSConfig, return_weights: bool = False
) -> Tensor | tuple[Tensor, AttentionWeights]:
    """Aggregated attention following cfg.dual_ln."""
    return _aggregate(x, p, cfg, dual_ln=cfg.dual_ln, return_weights=return_weights)


def _aggregate(
    x: Tensor,
    p: HeadParams,
    cfg: LSConfig,
    dual_ln: bool,
    return_weights: bool,
) -> Tensor | tuple[Tensor, AttentionWeights]:
    _check_input(x, p, cfg)
    if cfg.mode != "bidirectional":
        raise ConfigError("use the causal module for causal configurations")
    n, w, r, dk = cfg.seq_len, cfg.window, cfg.rank, cfg.head_dim

    if w == 0:
        pkv = dynamic_projection(x, p, cfg)
        if dual_ln:
            pkv = ProjectedKV(
                p=pkv.p,
                kbar=layer_norm(pkv.kbar, p.ln_global.gain, p.ln_global.bias),
                vbar=layer_norm(pkv.vbar, p.ln_global.gain, p.ln_global.bias),
            )
        return long_range_attention_head(x, pkv, p, cfg, return_weights=return_weights)

    n_pad = cfg.padded_len
    x_pad = _pad_rows(x, n_pad)
    token_valid = np.arange(n_pad) < n
    q = matmul(x_pad, p.wq)
    k = matmul(x_pad, p.wk)
    v = matmul(x_pad, p.wv)
    k_win = layer_norm(k, p.ln_local.gain, p.ln_local.bias) if dual_ln else k
    v_win = layer_norm(v, p.ln_local.gain, p.ln_local.bias) if dual_ln else v

    indices = segment_window_indices(n_pad, w, "bidirectional")
    segments = indices.shape[0]
    gather = np.clip(indices, 0, n_pad - 1)
    k_gath = take(k_win, gather, axis=-2)
    v_gath = take(v_win, gather, axis=-2)
    q_seg = q.reshape(*q.shape[:-2], segments, w, dk)
    inv_scale = 1.0 / math.sqrt(dk)
    local_logits = scale(matmul(q_seg, transpose_last(k_gath)), inv_scale)
    local_mask = np.broadcast_to(
        bidirectional_key_mask(indices, n)[:, None, :], (segments, w, 2 * w)
    )

    if r == 0:
        weights = masked_softmax(local_logits, local_mask)
        out = matmul(weights, v_gath)
        out = slice_axis(out.reshape(*q.shape[:-2], n_pad, dk), -2, 0, n)
        if return_weights:
            piece = WeightsPiece(
                weights.data.reshape(*q.shape[:-2], n_pad, 2 * w),
                local_mask.reshape(n_pad, 2 * w),
            )
            return out, AttentionWeights([piece], n)
        return out

    pkv = dynamic_projection(x_pad, p, cfg, token_mask=token_valid, keys=k, values=v)
    kbar = layer_norm(pkv.kbar, p.ln_global.gain, p.ln_global.bias) if dual_ln else pkv.kbar
    vbar = layer_norm(pkv.vbar, p.ln_global.gain, p.ln_global.bias) if dual_ln else pkv.vbar
    global_logits = scale(matmul(q, transpose_last(kbar)), inv_scale)
    global_seg = global_logits.reshape(*q.shape[:-2], segments, w, r)
    logits = concat([local_logits, global_seg], axis=-1)
    mask = np.concatenate(
        [local_mask, np.ones((segments, w, r), dtype=bool)], axis=-1
    )
    weights = masked_softmax(logits, mask)
    w_local = slice_axis(weights, -1, 0, 2 * w)
    w_global = slice_axis(weights, -1, 2 * w, 2 * w + r)
    out_local = matmul(w_local, v_gath).reshape(*q.shape[:-2], n_pad, dk)
    out_global = matmul(w_global.reshape(*q.shape[:-2], n_pad, r), vbar)
    out = slice_axis(out_local + out_global, -2, 0, n)
    if return_weights:
        piece = WeightsPiece(
            weights.data.reshape(*q.shape[:-2], n_pad, 2 * w + r),
            mask.reshape(n_pad, 2 * w + r),
        )
        return out, AttentionWeights([piece], n)
    return out


@dataclass
class NormRatioResult:
    """Window-to-projected embedding norm ratios at initialization."""

    key_ratio: float
    value_ratio: float
    per_seed: list[tuple[int, float, float]]


def _mean_row_norm(a: np.ndarray) -> float:
    return float(np.sqrt((a * a).sum(axis=-1)).mean())


def norm_ratio_probe(
    cfg: LSConfig,
    seeds: Sequence[int],
    dual_ln: bool,
    projection: str = "dynamic",
    scheme: str = "scaled-uniform",
) -> NormRatioResult:
    """Average norm ratio of window keys/values to projected keys/values.

    Fresh parameters per seed; inputs are zero-mean unit-variance draws
    standing in for layer-norm outputs. With `projection="identity"` the
    token distributions are forced one-hot (requires rank == seq_len), which
    pins the ratio to 1.
    """
    if len(seeds) < 10:
        raise ConfigError("norm probe needs at least 10 seeds")
    if cfg.rank < 1:
        raise ConfigError("norm probe needs rank >= 1")
    if projection not in ("dynamic", "identity"):
        raise ConfigError(f"unknown projection kind {projection!r}")
    if projection == "identity" and cfg.rank != cfg.seq_len:
        raise ConfigError("identity projection requires rank == seq_len")
    per_seed = []
    with no_grad():
        for seed in seeds:
            rng = Rng(seed)
            key_ratios = []
            value_ratios = []
            for h in range(cfg.heads):
                p = init_head_params(rng.child(h), cfg, scheme=scheme, trainable=False)
                x = Tensor(rng.child(1000 + h).normal((cfg.seq_len, cfg.model_dim)))
                k = matmul(x, p.wk)
                v = matmul(x, p.wv)
                if projection == "identity":
                    pt = Tensor(np.eye(cfg.seq_len))
                    kbar, vbar = matmul(pt, k), matmul(pt, v)
                else:
                    pkv = dynamic_projection(x, p, cfg)
                    kbar, vbar = pkv.kbar, pkv.vbar
                if dual_ln:
                    k = layer_norm(k, p.ln_local.gain, p.ln_local.bias)
                    v = layer_norm(v, p.ln_local.gain, p.ln_local.bias)
                    kbar = layer_norm(kbar, p.ln_global.gain, p.ln_global.bias)
                    vbar = layer_norm(vbar, p.ln_global.gain, p.ln_global.bias)
                key_ratios.append(_mean_row_norm(k.data) / _mean_row_norm(kbar.data))
                value_ratios.append(_mean_row_norm(v.data) / _mean_row_norm(vbar.data))
            per_seed.append(
                (seed, float(np.mean(key_ratios)), float(np.mean(value_ratios)))
            )
    return NormRatioResult(
        key_ratio=float(np.mean([s[1] for s in per_seed])),
        value_ratio=float(np.mean([s[2] for s in per_seed])),
        per_seed=per_seed,
    )
