"""Byte-level autoregressive language model over causal long-short attention.

Pre-LN transformer blocks, learned absolute position embeddings, an untied
zero-initialized output head (so an untrained model scores exactly uniform),
and plain fixed-step SGD. Everything is deterministic given (seed, corpus,
config).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from .attention import multi_head
from .causal import causal_aggregate_head
from .config import LSConfig
from .errors import ConfigError, DivergenceError, ShapeError
from .params import LnParams, MultiHeadParams, init_multi_head_params
from .tensor import (
    Rng,
    Tensor,
    add,
    cross_entropy_mean,
    init_matrix,
    layer_norm,
    matmul,
    no_grad,
    relu,
    scale_by_array,
    take,
)

__all__ = ["ModelConfig", "ModelParams", "TrainReport", "StepMetrics",
           "build_model", "train", "evaluate_bpc", "dualln_ablation", "param_count"]

LN2 = math.log(2.0)


@dataclass(frozen=True)
class ModelConfig:
    attention: LSConfig
    layers: int = 2
    ffn_dim: int = 64
    vocab_size: int = 256
    dropout: float = 0.0
    learning_rate: float = 0.5
    steps: int = 200
    batch_size: int = 8
    seed: int = 0
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.attention.mode != "causal":
            raise ConfigError("the language model requires a causal attention config")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.layers < 1 or self.ffn_dim < 1 or self.batch_size < 1:
            raise ConfigError("layers, ffn_dim and batch_size must be positive")
        if not 0.0 < self.val_fraction < 0.5:
            raise ConfigError("val_fraction must lie in (0, 0.5)")

    @property
    def seq_len(self) -> int:
        return self.attention.seq_len


@dataclass
class BlockParams:
    ln_attn: LnParams
    attn: MultiHeadParams
    ln_ffn: LnParams
    ffn_in: Tensor
    ffn_in_bias: Tensor
    ffn_out: Tensor
    ffn_out_bias: Tensor

    def named_parameters(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}ln_attn.gain", self.ln_attn.gain
        yield f"{prefix}ln_attn.bias", self.ln_attn.bias
        yield from self.attn.named_parameters(prefix=f"{prefix}attn.")
        yield f"{prefix}ln_ffn.gain", self.ln_ffn.gain
        yield f"{prefix}ln_ffn.bias", self.ln_ffn.bias
        yield f"{prefix}ffn_in", self.ffn_in
        yield f"{prefix}ffn_in_bias", self.ffn_in_bias
        yield f"{prefix}ffn_out", self.ffn_out
        yield f"{prefix}ffn_out_bias", self.ffn_out_bias


@dataclass
class ModelParams:
    config: ModelConfig
    token_embedding: Tensor
    position_embedding: Tensor
    blocks: list[BlockParams]
    ln_final: LnParams
    head_weight: Tensor
    head_bias: Tensor

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        yield "token_embedding", self.token_embedding
        yield "position_embedding", self.position_embedding
        for i, block in enumerate(self.blocks):
            yield from block.named_parameters(prefix=f"block{i}.")
        yield "ln_final.gain", self.ln_final.gain
        yield "ln_final.bias", self.ln_final.bias
        yield "head_weight", self.head_weight
        yield "head_bias", self.head_bias

    def parameter_list(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]


def _ln(dim: int, name: str) -> LnParams:
    return LnParams(
        gain=Tensor(np.ones(dim), requires_grad=True, name=f"{name}.gain"),
        bias=Tensor(np.zeros(dim), requires_grad=True, name=f"{name}.bias"),
    )


def build_model(cfg: ModelConfig, rng: Rng) -> ModelParams:
    """Fresh parameters; the output head starts at zero so initial logits are uniform."""
    d = cfg.attention.model_dim
    blocks = []
    for i in range(cfg.layers):
        block_rng = rng.child(10 + i)
        blocks.append(
            BlockParams(
                ln_attn=_ln(d, f"block{i}.ln_attn"),
                attn=init_multi_head_params(block_rng, cfg.attention),
                ln_ffn=_ln(d, f"block{i}.ln_ffn"),
                ffn_in=init_matrix(block_rng.child(100), d, cfg.ffn_dim,
                                   requires_grad=True, name=f"block{i}.ffn_in"),
                ffn_in_bias=Tensor(np.zeros(cfg.ffn_dim), requires_grad=True),
                ffn_out=init_matrix(block_rng.child(101), cfg.ffn_dim, d,
                                    requires_grad=True, name=f"block{i}.ffn_out"),
                ffn_out_bias=Tensor(np.zeros(d), requires_grad=True),
            )
        )
    return ModelParams(
        config=cfg,
        token_embedding=init_matrix(rng.child(0), cfg.vocab_size, d,
                                    requires_grad=True, name="token_embedding"),
        position_embedding=init_matrix(rng.child(1), cfg.seq_len, d,
                                       requires_grad=True, name="position_embedding"),
        blocks=blocks,
        ln_final=_ln(d, "ln_final"),
        head_weight=Tensor(np.zeros((d, cfg.vocab_size)), requires_grad=True, name="head_weight"),
        head_bias=Tensor(np.zeros(cfg.vocab_size), requires_grad=True, name="head_bias"),
    )


def param_count(model: ModelParams) -> int:
    return sum(t.size for t in model.parameter_list())


def _dropout_mask(rng: Rng | None, rate: float, shape) -> np.ndarray | None:
    if rng is None or rate <= 0.0:
        return None
    keep = rng.uniform(shape) >= rate
    return keep / (1.0 - rate)


def forward_logits(
    model: ModelParams, tokens: np.ndarray, dropout_rng: Rng | None = None
) -> Tensor:
    """Next-token logits, shape tokens.shape + (vocab,)."""
    cfg = model.config
    tokens = np.asarray(tokens, dtype=np.intp)
    if tokens.shape[-1] != cfg.seq_len:
        raise ShapeError(f"token rows must have length {cfg.seq_len}, got {tokens.shape}")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
        raise ShapeError("token ids outside vocabulary")
    x = add(take(model.token_embedding, tokens, axis=0), model.position_embedding)
    rate = cfg.dropout
    for block in model.blocks:
        normed = layer_norm(x, block.ln_attn.gain, block.ln_attn.bias)
        attended = multi_head(
            normed, block.attn, lambda h, hp: causal_aggregate_head(h, hp, cfg.attention)
        )
        mask = _dropout_mask(dropout_rng, rate, attended.shape)
        if mask is not None:
            attended = scale_by_array(attended, mask)
        x = add(x, attended)
        normed = layer_norm(x, block.ln_ffn.gain, block.ln_ffn.bias)
        hidden = relu(add(matmul(normed, block.ffn_in), block.ffn_in_bias))
        mask = _dropout_mask(dropout_rng, rate, hidden.shape)
        if mask is not None:
            hidden = scale_by_array(hidden, mask)
        ffn = add(matmul(hidden, block.ffn_out), block.ffn_out_bias)
        x = add(x, ffn)
    x = layer_norm(x, model.ln_final.gain, model.ln_final.bias)
    return add(matmul(x, model.head_weight), model.head_bias)


def sequence_loss(model: ModelParams, batch: np.ndarray, dropout_rng: Rng | None = None) -> Tensor:
    """Mean next-token cross-entropy in nats over a (batch, seq+1) id array."""
    batch = np.asarray(batch, dtype=np.intp)
    logits = forward_logits(model, batch[..., :-1], dropout_rng)
    return cross_entropy_mean(logits, batch[..., 1:])


def evaluate_bpc(model: ModelParams, corpus_slice: np.ndarray | bytes) -> float:
    """Mean next-token cross-entropy of the slice, in bits per byte."""
    data = _as_bytes(corpus_slice)
    n = model.config.seq_len
    if data.size < n + 1:
        raise ConfigError(f"evaluation slice must hold at least {n + 1} bytes")
    windows = (data.size - 1) // n
    rows = np.stack([data[i * n : i * n + n + 1] for i in range(windows)])
    with no_grad():
        loss = sequence_loss(model, rows)
    return loss.item() / LN2


@dataclass
class StepMetrics:
    step: int
    train_loss_nats: float
    val_bpc: float
    wall_ms: float


@dataclass
class TrainReport:
    steps: list[StepMetrics] = field(default_factory=list)
    final_val_bpc: float = float("nan")

    @property
    def train_losses(self) -> list[float]:
        return [s.train_loss_nats for s in self.steps]

    @property
    def val_bpcs(self) -> list[float]:
        return [s.val_bpc for s in self.steps]


def _as_bytes(corpus: np.ndarray | bytes | bytearray) -> np.ndarray:
    if isinstance(corpus, (bytes, bytearray)):
        return np.frombuffer(bytes(corpus), dtype=np.uint8).astype(np.intp)
    arr = np.asarray(corpus)
    return arr.astype(np.intp)


def _sample_batch(data: np.ndarray, n: int, batch: int, rng: Rng) -> np.ndarray:
    offsets = rng.integers(0, data.size - n - 1, size=batch)
    return np.stack([data[o : o + n + 1] for o in offsets])


def train(cfg: ModelConfig, corpus: np.ndarray | bytes) -> tuple[ModelParams, TrainReport]:
    """SGD with a fixed step size; per-step metrics on a fixed validation batch."""
    data = _as_bytes(corpus)
    n = cfg.seq_len
    if data.size < 10 * n:
        raise ConfigError(f"corpus must hold at least {10 * n} bytes")
    split = data.size - max(int(data.size * cfg.val_fraction), n + 1)
    train_data, val_data = data[:split], data[split:]
    if train_data.size < n + 2:
        raise ConfigError("training split too small for one window")

    rng = Rng(cfg.seed)
    model = build_model(cfg, rng.child(0))
    batch_rng = rng.child(1)
    dropout_rng = rng.child(2) if cfg.dropout > 0 else None
    val_batch = _sample_batch(val_data, n, min(cfg.batch_size, 4), rng.child(3)) \
        if val_data.size > n + 1 else _sample_batch(train_data, n, 4, rng.child(3))

    params = model.parameter_list()
    from .autodiff import gradients

    report = TrainReport()
    lr = cfg.learning_rate
    for step in range(cfg.steps):
        started = time.perf_counter()
        batch = _sample_batch(train_data, n, cfg.batch_size, batch_rng)
        loss = sequence_loss(model, batch, dropout_rng)
        loss_value = loss.item()
        if not math.isfinite(loss_value):
            raise DivergenceError(
                f"non-finite training loss {loss_value} at step {step}; "
                f"lr={lr}, seed={cfg.seed}"
            )
        grads = gradients(loss, params)
        for p, g in zip(params, grads):
            p.data -= lr * g
        with no_grad():
            val_loss = sequence_loss(model, val_batch).item()
        report.steps.append(
            StepMetrics(
                step=step,
                train_loss_nats=loss_value,
                val_bpc=val_loss / LN2,
                wall_ms=(time.perf_counter() - started) * 1e3,
            )
        )
    report.final_val_bpc = evaluate_bpc(model, val_data)
    return model, report


def dualln_ablation(
    cfg: ModelConfig, corpus: np.ndarray | bytes, steps: int | None = None
) -> tuple[TrainReport, TrainReport]:
    """Train twice from identical seeds and data order, toggling only dual_ln."""
    if steps is not None:
        cfg = replace(cfg, steps=steps)
    with_cfg = replace(cfg, attention=replace(cfg.attention, dual_ln=True))
    without_cfg = replace(cfg, attention=replace(cfg.attention, dual_ln=False))
    _, with_report = train(with_cfg, corpus)
    _, without_report = train(without_cfg, corpus)
    return with_report, without_report
