"""Multi-stage text augmentation and the text anomaly head."""

from .backends import ChatCompletionBackend, LlmBackend, MockBackend, make_backend
from .embedders import FileEmbedder, HashingEmbedder
from .pipeline import (
    MstaConfig,
    MstaResult,
    annotate_captions,
    anomaly_pool,
    balance_deficit,
    parse_score,
    positive_fraction,
    run_msta,
    stage1_summarize,
    stage2_annotate,
    stage3_generate,
    summarize_videos,
)
from .prompts import PromptTemplates
from .samples import CaptionSample
from .text_head import TextHead, TextHeadTraining, infer_text_probability, train_text_head

__all__ = [
    "CaptionSample",
    "ChatCompletionBackend",
    "FileEmbedder",
    "HashingEmbedder",
    "LlmBackend",
    "MockBackend",
    "MstaConfig",
    "MstaResult",
    "PromptTemplates",
    "TextHead",
    "TextHeadTraining",
    "annotate_captions",
    "anomaly_pool",
    "balance_deficit",
    "infer_text_probability",
    "make_backend",
    "parse_score",
    "positive_fraction",
    "run_msta",
    "stage1_summarize",
    "stage2_annotate",
    "stage3_generate",
    "summarize_videos",
    "train_text_head",
]
