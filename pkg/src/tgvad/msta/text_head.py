"""Text anomaly head: two-layer MLP + sigmoid on top of a text embedder."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import autodiff as ad
from ..detection import sgd_step
from ..errors import ConfigError, ContractError
from ..nn import MLP, Module
from .samples import CaptionSample

EPS = 1e-7


class TextHead(Module):
    def __init__(self, in_dim: int, hidden: int = 32, seed: int = 0, activation: str = "relu"):
        rng = np.random.default_rng(seed)
        self.in_dim = in_dim
        self.hidden = hidden
        self.mlp = MLP([in_dim, hidden, 1], [activation, "identity"], rng)

    def forward(self, embeddings) -> ad.Tensor:
        x = ad.as_tensor(embeddings)
        if x.data.ndim == 1:
            x = ad.reshape(x, (1, x.size))
        if x.shape[1] != self.in_dim:
            raise ConfigError(f"text head expects {self.in_dim}-dim embeddings, got {x.shape[1]}")
        return ad.reshape(ad.sigmoid(self.mlp(x)), (x.shape[0],))

    __call__ = forward

    def probabilities(self, embeddings) -> np.ndarray:
        return self.forward(embeddings).numpy()


def bce(p: ad.Tensor, y: np.ndarray) -> ad.Tensor:
    """Mean binary cross-entropy with soft targets ``y``."""
    c = ad.clamp(p, EPS, 1.0 - EPS)
    yt = ad.Tensor(np.asarray(y, dtype=np.float64))
    pos = ad.mul(yt, ad.log(c))
    neg = ad.mul(ad.sub(1.0, yt), ad.log(ad.sub(1.0, c)))
    return ad.scale(ad.mean(ad.add(pos, neg)), -1.0)


@dataclass
class TextHeadTraining:
    steps: int = 300
    batch_size: int = 64
    lr: float = 0.5
    momentum: float = 0.9
    seed: int = 0


def train_text_head(
    samples: Sequence[CaptionSample],
    embedder,
    head: TextHead,
    cfg: TextHeadTraining = TextHeadTraining(),
) -> list[float]:
    """Minibatch SGD on BCE against (possibly fractional) labels. Returns per-step losses."""
    samples = [s for s in samples if s.label is not None]
    if not samples:
        raise ContractError("no labelled text samples to train on")
    if embedder.dim != head.in_dim:
        raise ConfigError(f"embedder yields {embedder.dim}-dim vectors, head expects {head.in_dim}")
    x = np.stack([embedder(s.text) for s in samples])
    y = np.array([float(s.label) for s in samples])
    rng = np.random.default_rng(cfg.seed)
    params = head.parameters()
    velocity: dict = {}
    bs = min(cfg.batch_size, len(samples))
    order = rng.permutation(len(samples))
    pos = 0
    losses = []
    for _ in range(cfg.steps):
        if pos + bs > len(order):
            order = rng.permutation(len(samples))
            pos = 0
        idx = order[pos : pos + bs]
        pos += bs
        head.zero_grad()
        loss = bce(head(x[idx]), y[idx])
        loss.backward()
        sgd_step(params, cfg.lr, cfg.momentum, velocity)
        losses.append(loss.item())
    return losses


def infer_text_probability(caption: str, embedder, head: TextHead) -> float:
    return float(head.probabilities(embedder(caption))[0])
