"""Text samples flowing through the augmentation stages."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

STAGES = ("original", "summary", "annotated", "generated")


@dataclass
class CaptionSample:
    text: str
    video_id: Optional[str] = None
    snippet_index: Optional[int] = None
    stage: str = "original"
    label: Optional[float] = None
    duplicate: bool = False

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}; expected one of {STAGES}")
        if self.label is not None and not 0.0 <= float(self.label) <= 1.0:
            raise ValueError(f"label {self.label} outside [0, 1]")

    def to_record(self) -> dict:
        rec = {
            "video_id": self.video_id,
            "snippet_index": self.snippet_index,
            "text": self.text,
            "stage": self.stage,
            "label": self.label,
        }
        if self.duplicate:
            rec["duplicate"] = True
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "CaptionSample":
        label = rec.get("label")
        return cls(
            text=rec["text"],
            video_id=rec.get("video_id"),
            snippet_index=rec.get("snippet_index"),
            stage=rec.get("stage", "original"),
            label=None if label is None else float(label),
            duplicate=bool(rec.get("duplicate", False)),
        )
