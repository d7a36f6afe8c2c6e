"""End-to-end runs on a synthetic dataset: reference training and fusion ablations.

The text channel (augmentation plus text head) does not depend on the fusion
settings, so ablations build it once and reuse it for every variant.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

from .config import RunConfig
from .detection import VideoRecord
from .msta.backends import LlmBackend, MockBackend
from .msta.pipeline import MstaResult, positive_fraction, run_msta
from .workflow import (
    evaluate,
    fit_detector,
    fit_text_head,
    reblend,
    score_videos,
    text_prob_fn,
    video_captions,
)

logger = logging.getLogger(__name__)

FUSION_KEYS = ("token_schedule", "cross_transformer", "weighting", "weight_activation", "shared_pair_params")

# Variants compared by ``run_ablations``; each entry overrides fusion keys only.
ABLATIONS: dict[str, dict] = {
    "full": {},
    "fixed_tokens": {"token_schedule": "fixed"},
    "no_cross_transformer": {"cross_transformer": False},
    "no_weighting": {"weighting": "none"},
    "mlp_weighting": {"weighting": "mlp"},
}


@dataclass
class TextChannel:
    msta: MstaResult
    head: object
    embedder: object
    losses: list
    seconds: float

    @property
    def prob_fn(self):
        return text_prob_fn(self.head, self.embedder)

    def summary(self) -> dict:
        return {
            "summaries": len(self.msta.summaries),
            "annotated": len(self.msta.annotated),
            "generated": len(self.msta.generated),
            "positive_fraction_before": positive_fraction(self.msta.summaries + self.msta.annotated),
            "positive_fraction_after": positive_fraction(self.msta.training_samples),
            "seconds": self.seconds,
        }


@dataclass
class RunReport:
    """Metrics of one trained detector on the test split."""

    name: str
    fusion: dict
    auc: float | None
    ap: float | None
    auc_fused_only: float | None
    auc_text_only: float | None
    final_loss: float
    steps: int
    seconds: float
    losses: list = field(default_factory=list, repr=False)

    def to_dict(self, with_losses: bool = False) -> dict:
        d = asdict(self)
        if not with_losses:
            d.pop("losses")
        return d


def build_text_channel(cfg: RunConfig, train: Sequence[VideoRecord], backend: LlmBackend | None = None) -> TextChannel:
    t0 = time.perf_counter()
    backend = backend or MockBackend(cfg.seed)
    result = run_msta(video_captions(train), cfg.msta_config(), backend)
    head, embedder, losses = fit_text_head(result.training_samples, cfg)
    return TextChannel(result, head, embedder, losses, time.perf_counter() - t0)


def train_and_evaluate(
    name: str,
    cfg: RunConfig,
    train: Sequence[VideoRecord],
    test: Sequence[VideoRecord],
    input_dims: Mapping[str, int],
    text: TextChannel | None = None,
    on_step: Callable[[int, float], None] | None = None,
) -> RunReport:
    t0 = time.perf_counter()
    model, result = fit_detector(train, cfg, dict(input_dims), on_step)
    rows = score_videos(model, test, cfg.alpha, text.prob_fn if text else None)
    blended = evaluate(rows, test)
    fused = evaluate(reblend(rows, 1.0), test)
    text_only = evaluate(reblend(rows, 0.0), test) if text else None
    report = RunReport(
        name=name,
        fusion={k: getattr(cfg, k) for k in FUSION_KEYS},
        auc=blended.auc,
        ap=blended.ap,
        auc_fused_only=fused.auc,
        auc_text_only=text_only.auc if text_only else None,
        final_loss=result.losses[-1] if result.losses else float("nan"),
        steps=result.steps,
        seconds=time.perf_counter() - t0,
        losses=list(result.losses),
    )
    logger.info("%s: AUC=%s AP=%s (%.1fs)", name, report.auc, report.ap, report.seconds)
    return report


def run_ablations(
    cfg: RunConfig,
    train: Sequence[VideoRecord],
    test: Sequence[VideoRecord],
    input_dims: Mapping[str, int],
    variants: Mapping[str, dict] | None = None,
    text: TextChannel | None = None,
) -> list[RunReport]:
    variants = ABLATIONS if variants is None else variants
    return [
        train_and_evaluate(name, cfg.replace(**changes), train, test, input_dims, text)
        for name, changes in variants.items()
    ]


def format_reports(reports: Sequence[RunReport]) -> str:
    def f(x):
        return "   n/a" if x is None else f"{x:.4f}"

    lines = [f"{'variant':<24} {'AUC':>6} {'AP':>6} {'AUC(s)':>6} {'loss':>8} {'sec':>6}"]
    for r in reports:
        lines.append(
            f"{r.name:<24} {f(r.auc):>6} {f(r.ap):>6} {f(r.auc_fused_only):>6} {r.final_loss:>8.4f} {r.seconds:>6.1f}"
        )
    return "\n".join(lines)
