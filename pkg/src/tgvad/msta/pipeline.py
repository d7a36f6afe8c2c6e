"""Three-stage text augmentation: summarize videos, pseudo-label captions, generate anomalies."""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import BackendError, ConfigError
from .backends import LlmBackend
from .prompts import PromptTemplates, annotation_prompt, clean, generation_prompt, summary_prompt
from .samples import CaptionSample

logger = logging.getLogger(__name__)

_NUMBER = re.compile(r"[-+]?(?:\d+\.\d*|\.\d+|\d+)")
_SENTENCE_END = re.compile(r"(?<=[.!?])\s")


@dataclass
class MstaConfig:
    n_samplings: int = 10
    n_context: int = 80
    delta: float = 0.7
    n_generate: int | None = None  # None: generate exactly the class deficit
    seed: int = 0
    workers: int = 1
    generation_tries: int = 4  # first attempt plus three regenerations

    def __post_init__(self):
        if self.n_samplings < 1:
            raise ConfigError(f"n_samplings must be >= 1, got {self.n_samplings}")
        if self.n_context < 1:
            raise ConfigError(f"n_context must be >= 1, got {self.n_context}")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}")
        if self.n_generate is not None and self.n_generate < 0:
            raise ConfigError("n_generate must be >= 0")
        if self.workers < 1 or self.generation_tries < 1:
            raise ConfigError("workers and generation_tries must be >= 1")


def parse_score(completion: str) -> float | None:
    """First decimal literal in the completion, clamped to [0, 1]; None if there is none."""
    m = _NUMBER.search(completion or "")
    if m is None:
        return None
    return min(max(float(m.group()), 0.0), 1.0)


def first_sentence(text: str) -> str:
    text = clean(text)
    return _SENTENCE_END.split(text, maxsplit=1)[0].strip() if text else ""


def _dedup_key(text: str) -> str:
    return " ".join(re.findall(r"[a-z0-9']+", text.lower()))


# ---------------------------------------------------------------------------
# stage I
# ---------------------------------------------------------------------------


def stage1_summarize(
    video_id: str,
    captions: Sequence[str],
    label: int,
    backend: LlmBackend,
    templates: PromptTemplates = PromptTemplates(),
) -> CaptionSample:
    if not captions:
        raise ConfigError(f"video {video_id} has no captions to summarize")
    try:
        completion = backend.complete(summary_prompt(captions, templates))
    except BackendError as exc:
        raise BackendError(f"summarizing video {video_id}: {exc}", video_id=video_id, retriable=exc.retriable) from exc
    return CaptionSample(clean(completion), video_id, None, "summary", float(label))


def summarize_videos(videos, backend: LlmBackend, templates: PromptTemplates = PromptTemplates()) -> list[CaptionSample]:
    """``videos``: iterable of ``(video_id, [caption text, ...], label)``."""
    return [stage1_summarize(vid, caps, y, backend, templates) for vid, caps, y in videos]


# ---------------------------------------------------------------------------
# stage II
# ---------------------------------------------------------------------------


def stage2_annotate(
    caption: str,
    pool: Sequence[CaptionSample],
    cfg: MstaConfig,
    backend: LlmBackend,
    rng: np.random.Generator,
    templates: PromptTemplates = PromptTemplates(),
) -> float | None:
    """Average of ``n_samplings`` in-context scores, or None if none could be parsed."""
    if len(pool) < cfg.n_context:
        raise ConfigError(f"summary pool has {len(pool)} samples, fewer than n_context={cfg.n_context}")
    scores = []
    for _ in range(cfg.n_samplings):
        idx = rng.choice(len(pool), size=cfg.n_context, replace=False)
        prompt = annotation_prompt([(pool[i].text, pool[i].label) for i in idx], caption, templates)
        score = None
        for _attempt in range(2):
            score = parse_score(backend.complete(prompt))
            if score is not None:
                break
        if score is None:
            logger.warning("unparseable anomaly score for caption %r; sampling skipped", caption[:60])
            continue
        scores.append(score)
    if not scores:
        return None
    return min(max(float(np.mean(scores)), 0.0), 1.0)


def annotate_captions(
    captions: Sequence[CaptionSample],
    pool: Sequence[CaptionSample],
    cfg: MstaConfig,
    backend: LlmBackend,
    templates: PromptTemplates = PromptTemplates(),
) -> list[CaptionSample]:
    """Pseudo-label every caption; output order follows the input order."""
    if len(pool) < cfg.n_context:
        raise ConfigError(f"summary pool has {len(pool)} samples, fewer than n_context={cfg.n_context}")

    def one(i: int) -> CaptionSample:
        cap = captions[i]
        rng = np.random.default_rng([cfg.seed, 2, i])
        y = stage2_annotate(cap.text, pool, cfg, backend, rng, templates)
        return CaptionSample(cap.text, cap.video_id, cap.snippet_index, "annotated", y)

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as ex:
            return list(ex.map(one, range(len(captions))))
    return [one(i) for i in range(len(captions))]


# ---------------------------------------------------------------------------
# stage III
# ---------------------------------------------------------------------------


def anomaly_pool(annotated: Sequence[CaptionSample], delta: float) -> list[CaptionSample]:
    """Captions whose pseudo-label is strictly above ``delta``."""
    return [c for c in annotated if c.label is not None and c.label > delta]


def stage3_generate(
    pool: Sequence[CaptionSample],
    n_generate: int,
    cfg: MstaConfig,
    backend: LlmBackend,
    templates: PromptTemplates = PromptTemplates(),
) -> list[CaptionSample]:
    if n_generate <= 0:
        return []
    if len(pool) < cfg.n_context:
        raise ConfigError(
            f"anomaly pool has {len(pool)} captions, fewer than n_context={cfg.n_context}"
        )
    seen = {_dedup_key(c.text) for c in pool}
    out = []
    for i in range(n_generate):
        text, dup = "", True
        for attempt in range(cfg.generation_tries):
            rng = np.random.default_rng([cfg.seed, 3, i, attempt])
            idx = rng.choice(len(pool), size=cfg.n_context, replace=False)
            candidate = first_sentence(backend.complete(generation_prompt([pool[j].text for j in idx], templates)))
            if not candidate:
                continue
            text = candidate
            dup = _dedup_key(candidate) in seen
            if not dup:
                break
        if not text:
            logger.warning("generation %d produced no text after %d tries; skipped", i, cfg.generation_tries)
            continue
        seen.add(_dedup_key(text))
        out.append(CaptionSample(text, None, None, "generated", 1.0, duplicate=dup))
    return out


# ---------------------------------------------------------------------------
# balance bookkeeping and the full pipeline
# ---------------------------------------------------------------------------


def labeled(samples: Sequence[CaptionSample]) -> list[CaptionSample]:
    return [s for s in samples if s.label is not None]


def positive_fraction(samples: Sequence[CaptionSample], threshold: float = 0.5) -> float:
    """Share of labelled samples with label >= ``threshold``."""
    lab = labeled(samples)
    if not lab:
        return 0.0
    return sum(1 for s in lab if s.label >= threshold) / len(lab)


def balance_deficit(samples: Sequence[CaptionSample], threshold: float = 0.5) -> int:
    """How many positives must be added for the labelled pool to be balanced."""
    lab = labeled(samples)
    pos = sum(1 for s in lab if s.label >= threshold)
    return max(0, len(lab) - 2 * pos)


@dataclass
class MstaResult:
    summaries: list = field(default_factory=list)
    annotated: list = field(default_factory=list)
    generated: list = field(default_factory=list)

    @property
    def training_samples(self) -> list[CaptionSample]:
        return labeled(self.summaries + self.annotated + self.generated)


def run_msta(
    videos,
    cfg: MstaConfig,
    backend: LlmBackend,
    templates: PromptTemplates = PromptTemplates(),
) -> MstaResult:
    """``videos``: iterable of ``(video_id, [CaptionSample, ...], label)`` for training videos."""
    videos = list(videos)
    summaries = summarize_videos(
        [(vid, [c.text for c in caps], y) for vid, caps, y in videos], backend, templates
    )
    captions = [c for _, caps, _ in videos for c in caps]
    annotated = annotate_captions(captions, summaries, cfg, backend, templates)
    n = cfg.n_generate
    if n is None:
        n = balance_deficit(summaries + annotated)
    generated = stage3_generate(anomaly_pool(annotated, cfg.delta), n, cfg, backend, templates)
    return MstaResult(summaries, annotated, generated)
