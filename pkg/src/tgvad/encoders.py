"""Unimodal encoders: per-modality projection plus a Transformer shared by all modalities.

The Transformer layer here is pre-norm:

    h   = MSA(LN(z)) + z
    out = FFN(LN(h)) + h

and is reused, with a cross-attention variant, by the fusion and scoring
stages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import AlignmentError, ConfigError, ShapeError
from .nn import MLP, LayerNorm, Linear, Module

MODALITIES = ("T", "R", "F", "A")
MODALITY_NAMES = {"T": "text", "R": "rgb", "F": "flow", "A": "audio"}
MAX_POSITIONS = 512


def parse_modalities(spec) -> tuple[str, ...]:
    """Accept ``"T,R,F"``, ``"TRF"`` or an iterable; keeps the declared order."""
    if isinstance(spec, str):
        items = [s.strip() for s in spec.replace(",", " ").split()] if ("," in spec or " " in spec) else list(spec)
    else:
        items = list(spec)
    items = [m.upper() for m in items if m]
    if not items:
        raise ConfigError("modality set is empty")
    unknown = [m for m in items if m not in MODALITIES]
    if unknown:
        raise ConfigError(f"unknown modalities {unknown}; expected a subset of {list(MODALITIES)}")
    if len(set(items)) != len(items):
        raise ConfigError(f"duplicate modalities in {items}")
    return tuple(items)


@dataclass
class EncoderConfig:
    d_embed: int = 128
    n_heads: int = 4
    unimodal_layers: int = 1
    positional: str = "learned"
    ffn_hidden: int | None = None  # defaults to 4 * d_embed
    ffn_activation: str = "gelu"

    def __post_init__(self):
        if self.d_embed < 1 or self.n_heads < 1 or self.d_embed % self.n_heads:
            raise ConfigError(
                f"d_embed={self.d_embed} must be a positive multiple of n_heads={self.n_heads}"
            )
        if self.positional not in ("none", "learned"):
            raise ConfigError(f"positional must be 'none' or 'learned', got {self.positional!r}")
        if self.unimodal_layers < 0:
            raise ConfigError("unimodal_layers must be >= 0")
        ad.activation(self.ffn_activation)

    @property
    def head_dim(self) -> int:
        return self.d_embed // self.n_heads

    @property
    def hidden(self) -> int:
        return self.ffn_hidden or 4 * self.d_embed


class MultiHeadAttention(Module):
    """Scaled dot-product attention over ``n_heads`` column blocks.

    Head ``h`` uses columns ``h*D_H:(h+1)*D_H`` of the query/key/value
    matrices, i.e. its own ``D × D_H`` projections. Scores are divided by
    ``sqrt(D)`` with ``D`` the model width, not the head width.
    """

    def __init__(self, dim: int, n_heads: int, rng: np.random.Generator):
        if dim % n_heads:
            raise ConfigError(f"width {dim} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.w_q = Linear(dim, dim, rng, bias=False)
        self.w_k = Linear(dim, dim, rng, bias=False)
        self.w_v = Linear(dim, dim, rng, bias=False)
        self.w_o = Linear(dim, dim, rng)

    @property
    def dim(self) -> int:
        return self.w_q.in_dim

    def attention_weights(self, x: Tensor, context: Tensor | None = None) -> list[Tensor]:
        y = x if context is None else context
        q, k = self.w_q(x), self.w_k(y)
        dh = self.dim // self.n_heads
        scale = 1.0 / math.sqrt(self.dim)
        out = []
        for h in range(self.n_heads):
            sl = slice(h * dh, (h + 1) * dh)
            qh = ad.cols(q, sl.start, sl.stop)
            kh = ad.cols(k, sl.start, sl.stop)
            out.append(ad.softmax_rows(ad.scale(ad.matmul(qh, ad.transpose(kh)), scale)))
        return out

    def __call__(self, x: Tensor, context: Tensor | None = None) -> Tensor:
        if x.data.ndim != 2 or x.shape[1] != self.dim:
            raise ShapeError(f"attention expects (n, {self.dim}) input, got {x.shape}")
        y = x if context is None else context
        if y.data.ndim != 2 or y.shape[1] != self.dim:
            raise ShapeError(f"attention expects (m, {self.dim}) context, got {y.shape}")
        v = self.w_v(y)
        dh = self.dim // self.n_heads
        heads = [
            ad.matmul(a, ad.cols(v, h * dh, (h + 1) * dh))
            for h, a in enumerate(self.attention_weights(x, context))
        ]
        merged = heads[0] if len(heads) == 1 else ad.concat_cols(heads)
        return self.w_o(merged)


class TransformerLayer(Module):
    """Pre-norm Transformer layer; passing ``context`` turns it into cross-attention.

    In the cross variant queries come from ``x`` and keys/values from
    ``context`` (normalized by its own LayerNorm); residuals stay on ``x``.
    """

    def __init__(
        self,
        dim: int,
        n_heads: int,
        hidden: int,
        rng: np.random.Generator,
        activation: str = "gelu",
        cross: bool = False,
    ):
        self.norm_attn = LayerNorm(dim)
        self.norm_context = LayerNorm(dim) if cross else None
        self.attn = MultiHeadAttention(dim, n_heads, rng)
        self.norm_ffn = LayerNorm(dim)
        self.ffn = MLP([dim, hidden, dim], [activation, "identity"], rng)

    def __call__(self, x: Tensor, context: Tensor | None = None) -> Tensor:
        if context is not None and self.norm_context is None:
            raise ConfigError("self-attention layer called with a context")
        if context is None and self.norm_context is not None:
            raise ConfigError("cross-attention layer called without a context")
        ctx = None if context is None else self.norm_context(context)
        h = ad.add(self.attn(self.norm_attn(x), ctx), x)
        return ad.add(self.ffn(self.norm_ffn(h)), h)


def transformer_layer(layer: TransformerLayer, z: Tensor) -> Tensor:
    return layer(z)


def msa(attn: MultiHeadAttention, x: Tensor) -> Tensor:
    return attn(x)


class UnimodalEncoder(Module):
    """Per-modality affine projections, optional learned positions, shared Transformer."""

    def __init__(
        self,
        input_dims: Mapping[str, int],
        cfg: EncoderConfig,
        rng: np.random.Generator,
    ):
        self.cfg = cfg
        self.modalities = tuple(input_dims)
        self.projections = {m: Linear(int(d), cfg.d_embed, rng) for m, d in input_dims.items()}
        if cfg.positional == "learned":
            self.positions = ad.parameter(rng.normal(0.0, 0.02, size=(MAX_POSITIONS, cfg.d_embed)))
        else:
            self.positions = None
        self.layers = [
            TransformerLayer(cfg.d_embed, cfg.n_heads, cfg.hidden, rng, cfg.ffn_activation)
            for _ in range(cfg.unimodal_layers)
        ]

    def project(self, modality: str, features) -> Tensor:
        if modality not in self.projections:
            raise ConfigError(f"no projection for modality {modality!r}")
        x = ad.as_tensor(features)
        proj = self.projections[modality]
        if x.data.ndim != 2 or x.shape[1] != proj.in_dim:
            raise ConfigError(
                f"modality {modality}: feature width {x.shape[-1] if x.data.ndim else '?'} "
                f"!= projection input {proj.in_dim}"
            )
        if x.shape[0] < 1:
            raise ShapeError("a video needs at least one snippet")
        z = proj(x)
        if self.positions is not None:
            # videos longer than the table reuse the last learned position
            idx = np.minimum(np.arange(x.shape[0]), MAX_POSITIONS - 1)
            z = ad.add(z, ad.take(self.positions, idx))
        return z

    def contextualize(self, z: Tensor) -> Tensor:
        for layer in self.layers:
            z = layer(z)
        return z

    def encode(self, modality: str, features) -> Tensor:
        return self.contextualize(self.project(modality, features))

    def __call__(self, features: Mapping[str, object]) -> dict[str, Tensor]:
        lengths = {m: np.shape(getattr(f, "data", f))[0] for m, f in features.items()}
        if len(set(lengths.values())) > 1:
            raise AlignmentError(f"modalities disagree on snippet count: {lengths}")
        return {m: self.encode(m, features[m]) for m in self.modalities}
