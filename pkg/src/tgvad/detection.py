"""Anomaly scoring network, top-K MIL objective, training loop and score blending."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoders import EncoderConfig, TransformerLayer, UnimodalEncoder, parse_modalities
from .errors import AlignmentError, ConfigError, ContractError, NumericError, TrainingError
from .metrics import expand_to_frames, frame_ap, frame_auc  # noqa: F401  (re-exported)
from .msbt import MSBT, FusionOutput, MsbtConfig, enumerate_pairs
from .nn import MLP, Module

logger = logging.getLogger(__name__)

SCORE_EPS = 1e-7


@dataclass
class ModelConfig:
    modalities: tuple = ("T", "R", "F")
    input_dims: dict = field(default_factory=dict)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    msbt: MsbtConfig = field(default_factory=MsbtConfig)
    global_layers: int = 3
    score_hidden: tuple = (128, 32)
    seed: int = 0

    def __post_init__(self):
        self.modalities = parse_modalities(self.modalities)
        enumerate_pairs(self.modalities)
        missing = [m for m in self.modalities if m not in self.input_dims]
        if missing:
            raise ConfigError(f"no input dimension declared for modalities {missing}")
        if self.global_layers < 0:
            raise ConfigError("global_layers must be >= 0")

    @property
    def fused_width(self) -> int:
        n = len(self.modalities)
        return n * (n - 1) * self.encoder.d_embed


@dataclass
class TrainConfig:
    top_k: int = 9
    alpha: float = 0.5
    batch_size: int = 32
    lr: float = 0.005
    momentum: float = 0.0
    steps: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {self.top_k}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.batch_size < 1 or self.steps < 0 or self.lr <= 0:
            raise ConfigError("batch_size >= 1, steps >= 0 and lr > 0 are required")


@dataclass
class ScoreTriple:
    s: np.ndarray
    p: np.ndarray | None
    s_hat: np.ndarray


@dataclass
class VideoRecord:
    """One video in memory: per-modality snippet features plus labels."""

    id: str
    label: int | None
    features: dict
    frames_per_snippet: int = 16
    captions: list = field(default_factory=list)
    frame_labels: np.ndarray | None = None

    @property
    def n_snippets(self) -> int:
        return next(iter(self.features.values())).shape[0]


class AnomalyDetector(Module):
    """Encoders -> MSBT fusion -> global Transformer -> per-snippet sigmoid score."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        enc = cfg.encoder
        dims = {m: cfg.input_dims[m] for m in cfg.modalities}
        self.encoder = UnimodalEncoder(dims, enc, rng)
        self.msbt = MSBT(cfg.modalities, enc, cfg.msbt, rng)
        width = cfg.fused_width
        self.global_layers = [
            TransformerLayer(width, enc.n_heads, enc.hidden, rng, enc.ffn_activation)
            for _ in range(cfg.global_layers)
        ]
        dims_sr = [width, *cfg.score_hidden, 1]
        self.regressor = MLP(dims_sr, ["relu"] * (len(dims_sr) - 2) + ["identity"], rng)

    def fuse(self, features: Mapping[str, object], trace=None) -> FusionOutput:
        return self.msbt(self.encoder(features), trace)

    def global_encode_and_score(self, z_hat: Tensor) -> Tensor:
        width = self.cfg.fused_width
        if z_hat.data.ndim != 2 or z_hat.shape[1] != width:
            raise ConfigError(f"fused features must be (N_T, {width}), got {z_hat.shape}")
        x = z_hat
        for layer in self.global_layers:
            x = layer(x)
        logits = self.regressor(x)
        return ad.reshape(ad.sigmoid(logits), (z_hat.shape[0],))

    def __call__(self, features: Mapping[str, object]) -> Tensor:
        return self.global_encode_and_score(self.fuse(features).weighted)

    def scores(self, features: Mapping[str, object]) -> np.ndarray:
        return self(_constant_features(features, self.cfg.modalities)).numpy()


def _constant_features(features, modalities):
    return {m: ad.as_tensor(features[m]) for m in modalities}


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------


def effective_k(k: int, n: int) -> int:
    return max(1, min(int(k), int(n)))


def topk_mean(s, k: int):
    """Mean of the ``min(k, len(s))`` largest scores.

    Works on tensors (differentiable) and on plain arrays. The selected
    values are summed in descending order so the result does not depend on
    the input permutation.
    """
    if isinstance(s, Tensor):
        if s.size == 0:
            raise ContractError("topk_mean of an empty score vector")
        vec = ad.reshape(s, (s.size,))
        idx = np.argsort(-vec.data, kind="stable")[: effective_k(k, vec.size)]
        return ad.mean(ad.take(vec, idx))
    arr = np.asarray(s, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ContractError("topk_mean of an empty score vector")
    top = np.sort(arr)[::-1][: effective_k(k, arr.size)]
    return float(top.sum() / top.size)


def mil_loss(s_bar, y: float):
    """Binary cross-entropy between the pooled score and the video label."""
    y = float(y)
    if isinstance(s_bar, Tensor):
        c = ad.clamp(s_bar, SCORE_EPS, 1.0 - SCORE_EPS)
        pos = ad.scale(ad.log(c), -y)
        neg = ad.scale(ad.log(ad.sub(1.0, c)), -(1.0 - y))
        return ad.add(pos, neg)
    c = min(max(float(s_bar), SCORE_EPS), 1.0 - SCORE_EPS)
    return -y * math.log(c) - (1.0 - y) * math.log(1.0 - c)


def blend_scores(s, p, alpha: float) -> np.ndarray:
    """``alpha * s + (1 - alpha) * p``; ``p is None`` means the text channel is absent."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    s = np.asarray(s, dtype=np.float64)
    if p is None:
        return s.copy()
    p = np.asarray(p, dtype=np.float64)
    if s.shape != p.shape:
        raise AlignmentError(f"cannot blend {s.shape} fused scores with {p.shape} text scores")
    if alpha == 1.0:
        return s.copy()
    if alpha == 0.0:
        return p.copy()
    return alpha * s + (1.0 - alpha) * p


def snippet_text_probabilities(
    captions: Iterable, n_snippets: int, prob_fn: Callable[[str], float]
) -> np.ndarray | None:
    """Per-snippet text probability.

    Several captions on one snippet are averaged; snippets without a caption
    take the mean over the video's captions. ``None`` when the video has no
    captions at all.
    """
    sums = np.zeros(n_snippets)
    counts = np.zeros(n_snippets)
    all_probs = []
    for cap in captions:
        idx = getattr(cap, "snippet_index", None)
        prob = prob_fn(cap.text)
        all_probs.append(prob)
        if idx is not None and 0 <= idx < n_snippets:
            sums[idx] += prob
            counts[idx] += 1
    if not all_probs:
        return None
    out = np.full(n_snippets, float(np.mean(all_probs)))
    has = counts > 0
    out[has] = sums[has] / counts[has]
    return out


def score_video(
    model: AnomalyDetector,
    video: VideoRecord,
    alpha: float,
    prob_fn: Callable[[str], float] | None = None,
) -> ScoreTriple:
    s = model.scores(video.features)
    p = None
    if prob_fn is not None:
        p = snippet_text_probabilities(video.captions, s.size, prob_fn)
    return ScoreTriple(s, p, blend_scores(s, p, alpha))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    losses: list[float]
    steps: int


def _batch_stream(n: int, batch_size: int, rng: np.random.Generator):
    buf: list[int] = []
    while True:
        while len(buf) < batch_size:
            buf.extend(int(i) for i in rng.permutation(n))
        yield buf[:batch_size]
        buf = buf[batch_size:]


def video_loss(model: AnomalyDetector, video: VideoRecord, k: int) -> Tensor:
    s = model(_constant_features(video.features, model.cfg.modalities))
    return mil_loss(topk_mean(s, k), video.label)


def sgd_step(params: Sequence[Tensor], lr: float, momentum: float, velocity: dict):
    for p in params:
        if p.grad is None:
            continue
        g = p.grad
        if momentum:
            v = velocity.get(id(p))
            v = g.copy() if v is None else momentum * v + g
            velocity[id(p)] = v
            g = v
        p.data -= lr * g


def train(
    model: AnomalyDetector,
    videos: Sequence[VideoRecord],
    cfg: TrainConfig,
    on_step: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Minibatch SGD on the top-K MIL loss; returns the per-step mean batch loss."""
    videos = [v for v in videos if v.label is not None]
    if not videos:
        raise TrainingError("no labelled training videos")
    labels = {int(v.label) for v in videos}
    if labels != {0, 1}:
        raise TrainingError(f"training needs normal and abnormal videos, found labels {sorted(labels)}")
    rng = np.random.default_rng(cfg.seed)
    stream = _batch_stream(len(videos), min(cfg.batch_size, len(videos)), rng)
    params = model.parameters()
    velocity: dict = {}
    losses = []
    for step in range(cfg.steps):
        batch = sorted((videos[i] for i in next(stream)), key=lambda v: v.id)
        model.zero_grad()
        total = 0.0
        for video in batch:
            try:
                loss = ad.scale(video_loss(model, video, cfg.top_k), 1.0 / len(batch))
            except NumericError as exc:
                raise TrainingError(f"non-finite values at step {step} on video {video.id!r}: {exc}") from exc
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(
                    f"non-finite loss {value} at step {step} on video {video.id!r} "
                    f"({video.n_snippets} snippets, label {video.label})"
                )
            loss.backward()
            total += value
        sgd_step(params, cfg.lr, cfg.momentum, velocity)
        losses.append(total)
        if on_step is not None:
            on_step(step, total)
        logger.debug("step %d loss %.6f", step, total)
    return TrainResult(losses, cfg.steps)
