"""Flat ``key = value`` run configuration covering every component.

Blank lines and lines starting with ``#`` or ``;`` are ignored. Unknown keys
are rejected. Defaults are the full-scale hyperparameters; the
desk-scale reference setup lives in ``REFERENCE_OVERRIDES``.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .detection import ModelConfig, TrainConfig
from .encoders import EncoderConfig, parse_modalities
from .errors import ConfigError
from .msbt import MsbtConfig
from .msta.pipeline import MstaConfig
from .msta.text_head import TextHeadTraining

_SECTION = "run"


@dataclass
class RunConfig:
    seed: int = 0
    modalities: str = "T,R,F"
    # unimodal encoders
    d_embed: int = 128
    n_heads: int = 4
    unimodal_layers: int = 1
    positional: str = "learned"
    ffn_hidden: int = 0  # 0 means 4 * d_embed
    ffn_activation: str = "gelu"
    # fusion
    fusion_layers: int = 5
    bottleneck_tokens: int = 16
    weighting_layers: int = 1
    token_schedule: str = "reduced"
    cross_transformer: bool = True
    weighting: str = "transformer"
    weight_activation: str = "sigmoid"
    shared_pair_params: bool = False
    global_layers: int = 3
    # MIL training and inference
    top_k: int = 9
    alpha: float = 0.5
    batch_size: int = 32
    lr: float = 0.005
    momentum: float = 0.0
    steps: int = 300
    # text augmentation
    n_samplings: int = 10
    n_context: int = 80
    delta: float = 0.7
    n_generate: int = -1  # -1 means "generate the class deficit"
    llm_workers: int = 1
    # text head
    text_embed_dim: int = 64
    text_hidden: int = 32
    text_steps: int = 300
    text_batch_size: int = 64
    text_lr: float = 0.5

    def __post_init__(self):
        parse_modalities(self.modalities)

    # -- conversion ---------------------------------------------------------

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            self.d_embed,
            self.n_heads,
            self.unimodal_layers,
            self.positional,
            self.ffn_hidden or None,
            self.ffn_activation,
        )

    def msbt_config(self) -> MsbtConfig:
        return MsbtConfig(
            fusion_layers=self.fusion_layers,
            bottleneck_tokens=self.bottleneck_tokens,
            weighting_layers=self.weighting_layers,
            token_schedule=self.token_schedule,
            cross_transformer=self.cross_transformer,
            weighting=self.weighting,
            weight_activation=self.weight_activation,
            shared_pair_params=self.shared_pair_params,
        )

    def model_config(self, input_dims: dict) -> ModelConfig:
        return ModelConfig(
            modalities=parse_modalities(self.modalities),
            input_dims=dict(input_dims),
            encoder=self.encoder_config(),
            msbt=self.msbt_config(),
            global_layers=self.global_layers,
            seed=self.seed,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.top_k, self.alpha, self.batch_size, self.lr, self.momentum, self.steps, self.seed)

    def msta_config(self) -> MstaConfig:
        return MstaConfig(
            self.n_samplings,
            self.n_context,
            self.delta,
            None if self.n_generate < 0 else self.n_generate,
            self.seed,
            self.llm_workers,
        )

    def text_training(self) -> TextHeadTraining:
        return TextHeadTraining(self.text_steps, self.text_batch_size, self.text_lr, seed=self.seed)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    # -- serialization --------------------------------------------------------

    def to_ini(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}\n")
        return "".join(lines)

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(values) - set(types))
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        kwargs = {}
        for key, raw in values.items():
            kwargs[key] = _convert(key, raw, types[key])
        return cls(**kwargs)

    @classmethod
    def from_ini(cls, text: str, source: str = "<config>") -> "RunConfig":
        parser = configparser.ConfigParser(
            delimiters=("=",), comment_prefixes=("#", ";"), interpolation=None, strict=True
        )
        parser.optionxform = str
        try:
            parser.read_string(f"[{_SECTION}]\n{text}", source=source)
        except configparser.Error as exc:
            raise ConfigError(f"{source}: {exc}") from None
        if parser.sections() != [_SECTION]:
            raise ConfigError(f"{source}: section headers are not allowed in a flat config")
        return cls.from_mapping(dict(parser[_SECTION]))

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_ini(path.read_text(), str(path))


def _convert(key: str, raw, typ):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if typ in ("bool", bool):
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if typ in ("int", int):
            return int(text)
        if typ in ("float", float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {typ}") from None
    return text


# Desk-scale reference setup: full-scale hyperparameters for the network, a
# context pool that fits a 40-video training split, and a short schedule.
REFERENCE_OVERRIDES = dict(
    modalities="T,R",
    n_context=16,
    steps=30,
    batch_size=32,
)


def reference_config(**changes) -> RunConfig:
    return RunConfig(**{**REFERENCE_OVERRIDES, **changes})
