"""Exact cost model for encoder stacks built on the attention variants.

Counting convention: one multiply-accumulate inside a matrix product is one
FLOP, and a layer normalization costs 4 FLOPs per normalized element.
Softmax, masking, scaling, and bias additions are free. The closed forms
here mirror the executed operations term by term, so they agree exactly
with the runtime counter (`measured_flops`) on every variant.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .attention import (
    aggregate_dualln_head,
    aggregate_plain_head,
    full_attention_head,
    multi_head,
)
from .causal import causal_aggregate_head, causal_full_attention_oracle
from .config import LSConfig
from .errors import ConfigError
from .params import MultiHeadParams, init_multi_head_params
from .tensor import (
    Rng,
    Tensor,
    count_flops_runtime,
    init_matrix,
    layer_norm,
    matmul,
    no_grad,
    relu,
)

__all__ = ["ArchSpec", "FlopReport", "count_flops", "measured_flops",
           "PRESETS", "load_preset_file", "ReferenceEncoder"]

VARIANTS = ("full", "window", "projection", "long-short")


@dataclass(frozen=True)
class ArchSpec:
    """Architecture and attention settings for one cost query."""

    layers: int
    model_dim: int
    heads: int
    ffn_dim: int
    seq_len: int
    variant: str = "full"
    window: int = 0
    rank: int = 0
    seg_len: int = 1
    mode: str = "bidirectional"
    dual_ln: bool = False
    docs: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.layers < 1 or self.docs < 1:
            raise ConfigError("layers and docs must be positive")
        if self.variant == "window" and self.window < 2:
            raise ConfigError("window variant requires window >= 2")
        if self.variant == "projection":
            if self.rank < 1:
                raise ConfigError("projection variant requires rank >= 1")
            if self.mode == "causal":
                raise ConfigError("causal mode has no projection-only variant")
        if self.variant == "long-short" and (self.window < 2 or self.rank < 1):
            raise ConfigError("long-short variant requires window >= 2 and rank >= 1")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads

    def attention_config(self) -> LSConfig | None:
        """The LSConfig executed by this variant; None for full attention."""
        if self.variant == "full":
            return None
        window = 0 if self.variant == "projection" else self.window
        rank = 0 if self.variant == "window" else self.rank
        return LSConfig(
            seq_len=self.seq_len,
            model_dim=self.model_dim,
            heads=self.heads,
            window=window,
            rank=rank,
            seg_len=self.seg_len,
            mode=self.mode,
            dual_ln=self.dual_ln and self.variant == "long-short",
        )


@dataclass(frozen=True)
class FlopReport:
    """Itemized per-layer FLOPs; total = sum of components x layers x docs."""

    components: dict[str, int]
    layers: int
    docs: int = 1

    @property
    def per_layer(self) -> int:
        return sum(self.components.values())

    @property
    def total(self) -> int:
        return self.per_layer * self.layers * self.docs

    @property
    def formatted(self) -> str:
        return f"{self.total / 1e9:.2f} G"


def count_flops(arch: ArchSpec) -> FlopReport:
    """Closed-form per-component FLOPs for one layer of the given stack."""
    n, d, h, dk, ffn = arch.seq_len, arch.model_dim, arch.heads, arch.head_dim, arch.ffn_dim
    cfg = arch.attention_config()
    n_att = n if cfg is None else cfg.padded_len
    dual = cfg.dual_ln if cfg is not None else False

    comp: dict[str, int] = {
        "qkv_projections": 3 * h * n_att * d * dk,
        "output_projection": n * d * d,
        "feed_forward": 2 * n * d * ffn,
        "layer_norm": 4 * 2 * n * d,
    }

    if arch.variant == "full":
        comp["attention_scores"] = h * n * n * dk
        comp["attention_values"] = h * n * n * dk
        return FlopReport(components=comp, layers=arch.layers, docs=arch.docs)

    w, r = cfg.window, cfg.rank
    if arch.mode == "bidirectional":
        span = 2 * w + r if w > 0 else r
        comp["attention_scores"] = h * n_att * span * dk
        comp["attention_values"] = h * n_att * span * dk
        if r > 0:
            comp["dynamic_projection"] = h * n_att * d * r
            comp["projected_kv"] = 2 * h * n_att * r * dk
            if dual:
                comp["layer_norm"] += 4 * 2 * h * r * dk
        if dual and w > 0:
            comp["layer_norm"] += 4 * 2 * h * n_att * dk
        return FlopReport(components=comp, layers=arch.layers, docs=arch.docs)

    # Causal: batched window scores plus per-group growing projection spans.
    comp["attention_scores"] = h * n_att * 2 * w * dk
    comp["attention_values"] = h * n_att * 2 * w * dk
    if r > 0:
        l = cfg.seg_len
        m = n_att // l
        comp["dynamic_projection"] = h * n_att * d * r
        comp["projected_kv"] = 2 * h * n_att * r * dk
        past_pairs = m * (m - 1) // 2
        comp["attention_scores"] += h * dk * r * l * past_pairs
        comp["attention_values"] += h * dk * r * l * past_pairs
        if dual:
            comp["layer_norm"] += 4 * 2 * h * m * r * dk
    if dual:
        comp["layer_norm"] += 4 * 2 * h * n_att * dk
    return FlopReport(components=comp, layers=arch.layers, docs=arch.docs)


@dataclass
class LayerParams:
    ln_attn_gain: Tensor
    ln_attn_bias: Tensor
    attn: MultiHeadParams
    ln_ffn_gain: Tensor
    ln_ffn_bias: Tensor
    ffn_in: Tensor
    ffn_out: Tensor


@dataclass
class ReferenceEncoder:
    """A bare pre-LN block stack used for cost measurement and timing.

    No embeddings, classifier, or final norm: exactly the per-layer work the
    cost model describes.
    """

    arch: ArchSpec
    layers: list[LayerParams] = field(default_factory=list)

    @classmethod
    def build(cls, arch: ArchSpec, rng: Rng) -> "ReferenceEncoder":
        cfg_probe = arch.attention_config()
        ls_cfg = cfg_probe if cfg_probe is not None else LSConfig(
            seq_len=arch.seq_len, model_dim=arch.model_dim, heads=arch.heads,
            window=2, rank=0,
        )
        d, ffn = arch.model_dim, arch.ffn_dim
        layers = []
        for i in range(arch.layers):
            lrng = rng.child(i)
            layers.append(
                LayerParams(
                    ln_attn_gain=Tensor(np.ones(d)),
                    ln_attn_bias=Tensor(np.zeros(d)),
                    attn=init_multi_head_params(lrng, ls_cfg, trainable=False),
                    ln_ffn_gain=Tensor(np.ones(d)),
                    ln_ffn_bias=Tensor(np.zeros(d)),
                    ffn_in=init_matrix(lrng.child(100), d, ffn),
                    ffn_out=init_matrix(lrng.child(101), ffn, d),
                )
            )
        return cls(arch=arch, layers=layers)

    def _head_fn(self):
        arch = self.arch
        cfg = arch.attention_config()
        if arch.variant == "full":
            if arch.mode == "causal":
                return lambda x, hp: causal_full_attention_oracle(x, hp)
            return lambda x, hp: full_attention_head(x, hp)
        if arch.mode == "causal":
            return lambda x, hp: causal_aggregate_head(x, hp, cfg)
        if cfg.dual_ln:
            return lambda x, hp: aggregate_dualln_head(x, hp, cfg)
        return lambda x, hp: aggregate_plain_head(x, hp, cfg)

    def forward(self, x: Tensor) -> Tensor:
        head_fn = self._head_fn()
        for layer in self.layers:
            normed = layer_norm(x, layer.ln_attn_gain, layer.ln_attn_bias)
            x = x + multi_head(normed, layer.attn, head_fn)
            normed = layer_norm(x, layer.ln_ffn_gain, layer.ln_ffn_bias)
            x = x + matmul(relu(matmul(normed, layer.ffn_in)), layer.ffn_out)
        return x


def measured_flops(arch: ArchSpec, seed: int = 0) -> int:
    """FLOPs reported by the runtime counter for one actual forward pass."""
    rng = Rng(seed)
    encoder = ReferenceEncoder.build(arch, rng)
    x = Tensor(rng.child(999).normal((arch.seq_len, arch.model_dim)))
    with no_grad():
        with count_flops_runtime() as counter:
            for _ in range(arch.docs):
                encoder.forward(x)
    return counter.total


_LRA_BASE = dict(layers=2, model_dim=64, heads=2, ffn_dim=128)

PRESETS: dict[str, ArchSpec] = {
    "lra-listops": ArchSpec(seq_len=2048, **_LRA_BASE),
    "lra-text": ArchSpec(seq_len=4096, **_LRA_BASE),
    "lra-retrieval": ArchSpec(seq_len=4096, docs=2, **_LRA_BASE),
    "charlm-small": ArchSpec(
        layers=12, model_dim=768, heads=12, ffn_dim=3072, seq_len=2048,
        variant="long-short", window=512, rank=1, seg_len=16, mode="causal",
        dual_ln=True,
    ),
}


def preset_arch(name: str, variant: str | None = None,
                window: int | None = None, rank: int | None = None) -> ArchSpec:
    """A named preset, optionally re-pointed at another variant or span sizes."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    arch = PRESETS[name]
    updates: dict = {}
    if variant is not None and variant != arch.variant:
        updates["variant"] = variant
        if variant == "long-short":
            updates.setdefault("window", 8)
            updates.setdefault("rank", 32)
            updates.setdefault("dual_ln", True)
        if variant == "window":
            updates.setdefault("window", 8)
        if variant == "projection":
            updates.setdefault("rank", 32)
    if window is not None:
        updates["window"] = window
    if rank is not None:
        updates["rank"] = rank
    return replace(arch, **updates) if updates else arch


_BOOL_VALUES = {"true": True, "false": False, "1": True, "0": False,
                "yes": True, "no": False}
_INT_FIELDS = ("layers", "model_dim", "heads", "ffn_dim", "seq_len",
               "window", "rank", "seg_len", "docs")
_STR_FIELDS = ("variant", "mode")


def load_preset_file(path: str | Path) -> ArchSpec:
    """Parse a `key = value` preset file (one setting per line, # comments)."""
    values: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in _INT_FIELDS:
            values[key] = int(value)
        elif key in _STR_FIELDS:
            values[key] = value
        elif key == "dual_ln":
            try:
                values[key] = _BOOL_VALUES[value.lower()]
            except KeyError:
                raise ConfigError(f"{path}:{lineno}: bad boolean {value!r}") from None
        else:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
    missing = {"layers", "model_dim", "heads", "ffn_dim", "seq_len"} - values.keys()
    if missing:
        raise ConfigError(f"{path}: missing required keys {sorted(missing)}")
    return ArchSpec(**values)
