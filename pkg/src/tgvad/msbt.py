"""Multi-scale bottleneck Transformer fusion and bottleneck-token weighting.

For an ordered pair ``(a, b)`` each fusion layer ``l`` runs

    [Z_a', T~]  = Transformer_a([Z_a || T_l])      # tokens gather from a
    [Z_b', _ ]  = Transformer_b([Z_b || T~])       # tokens deliver into b
    T_{l+1}     = CrossTransformer(S_{l+1}, T~)    # condensed hand-off

where ``S_{l+1}`` is a fresh learnable seed holding half as many tokens.
The fused feature ``Z^{ab}`` is ``Z_b`` after the last layer; the refined
tokens ``T~`` of the last layer drive the per-pair weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoders import EncoderConfig, TransformerLayer, parse_modalities
from .errors import AlignmentError, ConfigError, ContractError
from .nn import MLP, Module

TOKEN_STD = 0.02


def halving_schedule(n1: int, layers: int) -> list[int]:
    """Token counts per fusion layer: ``n1, n1 // 2, n1 // 4, ...``."""
    if layers < 1:
        raise ConfigError(f"need at least one fusion layer, got {layers}")
    minimal = 2 ** (layers - 1)
    if n1 < minimal:
        raise ConfigError(
            f"{n1} bottleneck tokens cannot be halved over {layers} layers without "
            f"reaching 0; use at least {minimal}"
        )
    out = [n1]
    for _ in range(layers - 1):
        out.append(out[-1] // 2)
    return out


def enumerate_pairs(modalities) -> list[tuple[str, str]]:
    """All ordered pairs, grouped as (a, b), (b, a) following the declared order."""
    mods = parse_modalities(modalities)
    if len(mods) < 2:
        raise ConfigError(f"fusion needs at least two modalities, got {list(mods)}")
    pairs = []
    for i, a in enumerate(mods):
        for b in mods[i + 1 :]:
            pairs.append((a, b))
            pairs.append((b, a))
    return pairs


@dataclass
class MsbtConfig:
    fusion_layers: int = 5
    bottleneck_tokens: int = 16
    weighting_layers: int = 1
    token_schedule: str = "reduced"  # or "fixed"
    cross_transformer: bool = True
    weighting: str = "transformer"  # "transformer" | "mlp" | "none"
    weight_activation: str = "sigmoid"  # or "softmax"
    shared_pair_params: bool = False
    weight_hidden: tuple = (64, 16)

    def __post_init__(self):
        if self.token_schedule not in ("reduced", "fixed"):
            raise ConfigError(f"token_schedule must be 'reduced' or 'fixed', got {self.token_schedule!r}")
        if self.weighting not in ("transformer", "mlp", "none"):
            raise ConfigError(f"weighting must be transformer/mlp/none, got {self.weighting!r}")
        if self.weight_activation not in ("sigmoid", "softmax"):
            raise ConfigError(f"weight_activation must be sigmoid/softmax, got {self.weight_activation!r}")
        if self.weighting_layers < 0:
            raise ConfigError("weighting_layers must be >= 0")
        self.schedule()

    def schedule(self) -> list[int]:
        if self.token_schedule == "fixed":
            if self.bottleneck_tokens < 1 or self.fusion_layers < 1:
                raise ConfigError("fixed schedule needs >= 1 token and >= 1 layer")
            return [self.bottleneck_tokens] * self.fusion_layers
        return halving_schedule(self.bottleneck_tokens, self.fusion_layers)


@dataclass
class BottleneckState:
    layer: int
    tokens: Tensor
    pair: tuple[str, str]


@dataclass
class FusedPair:
    pair: tuple[str, str]
    fused: Tensor
    final_tokens: Tensor
    token_counts: list[int] = field(default_factory=list)


@dataclass
class FusionOutput:
    pairs: list[FusedPair]
    weights: Tensor
    weighted: Tensor

    @property
    def pair_keys(self) -> list[tuple[str, str]]:
        return [p.pair for p in self.pairs]


def _tokens(rng, n, dim):
    return ad.parameter(rng.normal(0.0, TOKEN_STD, size=(n, dim)))


class PairFusion(Module):
    """Parameters and forward pass for fusing one ordered modality pair."""

    def __init__(self, enc: EncoderConfig, cfg: MsbtConfig, rng: np.random.Generator):
        dim, heads, hidden, act = enc.d_embed, enc.n_heads, enc.hidden, enc.ffn_activation
        self.schedule = cfg.schedule()
        self.use_cross = cfg.cross_transformer
        self.initial_tokens = _tokens(rng, self.schedule[0], dim)
        self.gather = [TransformerLayer(dim, heads, hidden, rng, act) for _ in self.schedule]
        self.deliver = [TransformerLayer(dim, heads, hidden, rng, act) for _ in self.schedule]
        # seeds[i] starts layer i + 1
        self.seeds = [_tokens(rng, n, dim) for n in self.schedule[1:]]
        if self.use_cross:
            self.cross = [
                TransformerLayer(dim, heads, hidden, rng, act, cross=True) for _ in self.schedule[1:]
            ]
        else:
            self.cross = []

    def cross_transformer(self, layer: int, new_tokens: Tensor, prev_tokens: Tensor) -> Tensor:
        return self.cross[layer](new_tokens, prev_tokens)

    def __call__(self, z_a: Tensor, z_b: Tensor, pair=("?", "?"), trace: list | None = None) -> FusedPair:
        if z_a.shape != z_b.shape:
            raise AlignmentError(
                f"pair {pair}: token sequences disagree, {z_a.shape} vs {z_b.shape}"
            )
        n = z_a.shape[0]
        tokens = self.initial_tokens
        refined = tokens
        for l, count in enumerate(self.schedule):
            if trace is not None:
                trace.append(BottleneckState(l + 1, tokens, tuple(pair)))
            out = self.gather[l](ad.concat_rows([z_a, tokens]))
            z_a = ad.rows(out, 0, n)
            refined = ad.rows(out, n, n + count)
            out = self.deliver[l](ad.concat_rows([z_b, refined]))
            z_b = ad.rows(out, 0, n)
            if l + 1 < len(self.schedule):
                seed = self.seeds[l]
                tokens = self.cross_transformer(l, seed, refined) if self.use_cross else seed
        return FusedPair(tuple(pair), z_b, refined, list(self.schedule))


class WeightingHead(Module):
    """Per-pair weights from the last-layer bottleneck tokens of every pair."""

    def __init__(self, n_pairs: int, enc: EncoderConfig, cfg: MsbtConfig, rng: np.random.Generator):
        self.mode = cfg.weighting
        self.activation = cfg.weight_activation
        self.n_pairs = n_pairs
        dim = enc.d_embed
        self.layers = []
        self.regressor = None
        if self.mode == "transformer":
            self.layers = [
                TransformerLayer(dim, enc.n_heads, enc.hidden, rng, enc.ffn_activation)
                for _ in range(cfg.weighting_layers)
            ]
        if self.mode != "none":
            dims = [dim, *cfg.weight_hidden, 1]
            self.regressor = MLP(dims, ["relu"] * (len(dims) - 2) + ["identity"], rng)

    def logits(self, final_tokens: Sequence[Tensor]) -> Tensor:
        # one summary row per pair; with a single final token this is the token itself
        stack = ad.concat_rows(
            [t if t.shape[0] == 1 else ad.mean(t, axis=0) for t in final_tokens]
        )
        for layer in self.layers:
            stack = layer(stack)
        return ad.reshape(self.regressor(stack), (len(final_tokens),))

    def __call__(self, final_tokens: Sequence[Tensor]) -> Tensor:
        if self.mode == "none":
            return ad.Tensor(np.ones(len(final_tokens)))
        z = self.logits(final_tokens)
        if self.activation == "softmax":
            return ad.reshape(ad.softmax_rows(ad.reshape(z, (1, len(final_tokens)))), (len(final_tokens),))
        return ad.sigmoid(z)


def weighted_concat(fused: Sequence[Tensor], weights: Tensor) -> Tensor:
    """``[w_1 Z_1 || ... || w_n Z_n]``."""
    if weights.shape != (len(fused),):
        raise ContractError(f"{len(fused)} fused features but weights of shape {weights.shape}")
    lengths = {z.shape[0] for z in fused}
    if len(lengths) != 1:
        raise AlignmentError(f"fused features disagree on snippet count: {sorted(lengths)}")
    return ad.concat_cols([ad.mul(ad.take(weights, i), z) for i, z in enumerate(fused)])


class MSBT(Module):
    def __init__(self, modalities, enc: EncoderConfig, cfg: MsbtConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.modalities = parse_modalities(modalities)
        self.pairs = enumerate_pairs(self.modalities)
        if cfg.shared_pair_params:
            shared = PairFusion(enc, cfg, rng)
            self.fusions = {"shared": shared}
        else:
            self.fusions = {a + b: PairFusion(enc, cfg, rng) for a, b in self.pairs}
        self.weighting = WeightingHead(len(self.pairs), enc, cfg, rng)

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    def fusion_for(self, pair: tuple[str, str]) -> PairFusion:
        return self.fusions.get("shared") or self.fusions[pair[0] + pair[1]]

    def fuse_pair(self, z_a: Tensor, z_b: Tensor, pair, trace=None) -> FusedPair:
        return self.fusion_for(tuple(pair))(z_a, z_b, pair, trace)

    def fuse_all(self, tokens: Mapping[str, Tensor], trace=None) -> list[FusedPair]:
        missing = [m for m in self.modalities if m not in tokens]
        if missing:
            raise ContractError(f"missing token sequences for modalities {missing}")
        lengths = {m: tokens[m].shape[0] for m in self.modalities}
        if len(set(lengths.values())) != 1:
            raise AlignmentError(f"modalities disagree on snippet count: {lengths}")
        return [self.fuse_pair(tokens[a], tokens[b], (a, b), trace) for a, b in self.pairs]

    def weight_and_concat(self, pairs: Sequence[FusedPair], weights: Tensor | None = None) -> FusionOutput:
        keys = [p.pair for p in pairs]
        if keys != self.pairs:
            raise ContractError(f"pairs must arrive in canonical order {self.pairs}, got {keys}")
        if weights is None:
            weights = self.weighting([p.final_tokens for p in pairs])
        weighted = weighted_concat([p.fused for p in pairs], weights)
        return FusionOutput(list(pairs), weights, weighted)

    def __call__(self, tokens: Mapping[str, Tensor], trace=None) -> FusionOutput:
        return self.weight_and_concat(self.fuse_all(tokens, trace))
