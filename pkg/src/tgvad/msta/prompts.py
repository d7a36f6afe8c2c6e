"""Prompt templates and byte-exact prompt assembly for the three stages.

Texts are joined with a single newline and no trailing newline. Any
internal whitespace run (including newlines) in a caption is collapsed to one
space first, so every caption occupies exactly one line of the prompt.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Iterable, Sequence

SEPARATOR = "\n"


@dataclass(frozen=True)
class PromptTemplates:
    summarize: str = (
        "Please summarize the following sentences into a single sentence of no more than 30 words. "
        "Please just output the summarized sentence without additional details or introductions, "
        "just one sentence."
    )
    video_description: str = "Video description:"
    anomaly_score: str = "Anomaly score:"
    annotate: str = (
        "Each element in the following list contains a description of a video and the corresponding "
        "anomaly score. The anomaly score indicates the probability of an anomalous event occurring "
        "in the video. Just complete the last space of the correct anomaly score."
    )
    example: str = "Example:"
    generate: str = (
        "Each element in the following list contains a description of a video snippet whose category "
        "is abnormal events. Just generate one sentence in the same category as the above sentences."
    )

    @classmethod
    def with_overrides(cls, **overrides) -> "PromptTemplates":
        known = {f.name for f in fields(cls)}
        unknown = set(overrides) - known
        if unknown:
            raise ValueError(f"unknown prompt templates {sorted(unknown)}")
        return cls(**{k: v for k, v in overrides.items() if v is not None})


def clean(text: str) -> str:
    return " ".join(str(text).split())


def join(parts: Iterable[str]) -> str:
    return SEPARATOR.join(parts)


def format_label(y) -> str:
    """Binary labels render as ``0``/``1``; fractional ones with up to 4 decimals."""
    y = float(y)
    if y.is_integer():
        return str(int(y))
    return f"{y:.4f}".rstrip("0").rstrip(".")


def summary_prompt(captions: Sequence[str], t: PromptTemplates = PromptTemplates()) -> str:
    return join([t.summarize, *(clean(c) for c in captions)])


def annotation_context(demos: Sequence[tuple[str, float]], t: PromptTemplates = PromptTemplates()) -> str:
    return join(
        part
        for text, y in demos
        for part in (t.video_description, clean(text), t.anomaly_score, format_label(y))
    )


def annotation_prompt(
    demos: Sequence[tuple[str, float]], caption: str, t: PromptTemplates = PromptTemplates()
) -> str:
    return join([t.annotate, annotation_context(demos, t), clean(caption), t.anomaly_score])


def generation_context(examples: Sequence[str], t: PromptTemplates = PromptTemplates()) -> str:
    return join(part for text in examples for part in (t.example, clean(text)))


def generation_prompt(examples: Sequence[str], t: PromptTemplates = PromptTemplates()) -> str:
    return join([t.generate, generation_context(examples, t), t.example])
