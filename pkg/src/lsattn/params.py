"""Learned parameter containers for attention heads."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .config import LSConfig
from .tensor import Rng, Tensor, init_matrix

__all__ = ["LnParams", "HeadParams", "MultiHeadParams", "init_head_params", "init_multi_head_params"]


@dataclass
class LnParams:
    gain: Tensor
    bias: Tensor


@dataclass
class HeadParams:
    """Projections for one head plus its two key/value normalizations."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wp: Tensor | None
    ln_local: LnParams
    ln_global: LnParams

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}wq", self.wq
        yield f"{prefix}wk", self.wk
        yield f"{prefix}wv", self.wv
        if self.wp is not None:
            yield f"{prefix}wp", self.wp
        yield f"{prefix}ln_local.gain", self.ln_local.gain
        yield f"{prefix}ln_local.bias", self.ln_local.bias
        yield f"{prefix}ln_global.gain", self.ln_global.gain
        yield f"{prefix}ln_global.bias", self.ln_global.bias


@dataclass
class MultiHeadParams:
    heads: list[HeadParams]
    wo: Tensor

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for i, head in enumerate(self.heads):
            yield from head.named_parameters(prefix=f"{prefix}h{i}.")
        yield f"{prefix}wo", self.wo


def _ln_params(dim: int, trainable: bool, name: str) -> LnParams:
    return LnParams(
        gain=Tensor(np.ones(dim), requires_grad=trainable, name=f"{name}.gain"),
        bias=Tensor(np.zeros(dim), requires_grad=trainable, name=f"{name}.bias"),
    )


def init_head_params(
    rng: Rng, cfg: LSConfig, scheme: str = "scaled-uniform", trainable: bool = True
) -> HeadParams:
    """Fresh head parameters: fan-in scaled projections, identity norms."""
    d, dk = cfg.model_dim, cfg.head_dim
    wp = None
    if cfg.rank > 0:
        wp = init_matrix(rng, d, cfg.rank, scheme, requires_grad=trainable, name="wp")
    return HeadParams(
        wq=init_matrix(rng, d, dk, scheme, requires_grad=trainable, name="wq"),
        wk=init_matrix(rng, d, dk, scheme, requires_grad=trainable, name="wk"),
        wv=init_matrix(rng, d, dk, scheme, requires_grad=trainable, name="wv"),
        wp=wp,
        ln_local=_ln_params(dk, trainable, "ln_local"),
        ln_global=_ln_params(dk, trainable, "ln_global"),
    )


def init_multi_head_params(
    rng: Rng, cfg: LSConfig, scheme: str = "scaled-uniform", trainable: bool = True
) -> MultiHeadParams:
    heads = [
        init_head_params(rng.child(i), cfg, scheme, trainable) for i in range(cfg.heads)
    ]
    wo = init_matrix(
        rng.child(cfg.heads), cfg.model_dim, cfg.model_dim, scheme,
        requires_grad=trainable, name="wo",
    )
    return MultiHeadParams(heads=heads, wo=wo)
