"""Synthetic multimodal video features with weak labels, captions and frame labels.

Normal videos draw every snippet from a per-modality background
distribution. Abnormal videos additionally carry one contiguous anomalous
span in which every visual/audio modality is shifted along a fixed positive
direction, and whose captions are mostly drawn from an "incident" phrase
bank. The text modality's features are hashed embeddings of the captions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .io import DatasetManifest, ManifestEntry, write_captions, write_feature_file, write_frame_labels, write_manifest
from .msta.embedders import HashingEmbedder
from .msta.samples import CaptionSample

SUBJECTS = ["a man", "a woman", "two people", "a young man", "an old woman", "a group of people", "a worker", "a child"]
PLACES = ["street", "parking lot", "shop", "hallway", "station", "road", "office", "park"]
OBJECTS = ["bench", "door", "counter", "fence", "car", "tree", "window", "gate"]
VEHICLES = ["car", "truck", "bus", "motorbike", "van"]

NORMAL_TEMPLATES = [
    "{subj} walks slowly along the {place}",
    "a {vehicle} drives past the {place}",
    "{subj} stands next to the {obj}",
    "people are talking quietly in the {place}",
    "{subj} sits on a {obj} reading",
    "{subj} carries a bag through the {place}",
    "traffic moves steadily on the {place}",
    "{subj} opens the {obj} and goes inside",
]

ANOMALY_TEMPLATES = [
    "{subj} punches and kicks another person near the {obj}",
    "a {vehicle} crashes violently into the {obj}",
    "{subj} smashes the {obj} and steals goods from the {place}",
    "thick smoke and flames burst from the {place}",
    "{subj} points a gun at the cashier in the {place}",
    "an explosion shatters the {obj} of the {place}",
    "{subj} falls down after being shot in the {place}",
    "police chase {subj} who is fighting in the {place}",
]


def _fill(template: str, rng: np.random.Generator) -> str:
    return template.format(
        subj=SUBJECTS[rng.integers(len(SUBJECTS))],
        place=PLACES[rng.integers(len(PLACES))],
        obj=OBJECTS[rng.integers(len(OBJECTS))],
        vehicle=VEHICLES[rng.integers(len(VEHICLES))],
    )


def normal_caption(rng: np.random.Generator) -> str:
    return _fill(NORMAL_TEMPLATES[rng.integers(len(NORMAL_TEMPLATES))], rng)


def anomaly_caption(rng: np.random.Generator) -> str:
    return _fill(ANOMALY_TEMPLATES[rng.integers(len(ANOMALY_TEMPLATES))], rng)


@dataclass
class SynthSpec:
    train_normal: int = 20
    train_abnormal: int = 20
    test_normal: int = 10
    test_abnormal: int = 10
    min_snippets: int = 24
    max_snippets: int = 40
    dims: dict = field(default_factory=lambda: {"R": 32, "F": 32, "A": 16})
    text_dim: int = 64
    strength: float = 1.5
    span: tuple = (0.3, 0.6)
    caption_fidelity: float = 0.85
    false_alarm: float = 0.03
    frames_per_snippet: int = 16
    seed: int = 0

    def validate(self):
        if min(self.train_normal, self.train_abnormal) < 2:
            raise ConfigError("need at least 2 training videos per class")
        if self.test_normal + self.test_abnormal > 0 and min(self.test_normal, self.test_abnormal) < 1:
            raise ConfigError("a test split needs both normal and abnormal videos")
        if not 1 <= self.min_snippets <= self.max_snippets:
            raise ConfigError(f"bad snippet range [{self.min_snippets}, {self.max_snippets}]")
        if not 0.0 < self.span[0] <= self.span[1] <= 1.0:
            raise ConfigError(f"span fractions must satisfy 0 < lo <= hi <= 1, got {self.span}")
        if self.strength < 0:
            raise ConfigError("anomaly strength must be >= 0")
        if not 0.0 <= self.false_alarm <= self.caption_fidelity <= 1.0:
            raise ConfigError("need 0 <= false_alarm <= caption_fidelity <= 1")
        if any(d < 1 for d in self.dims.values()) or self.text_dim < 1:
            raise ConfigError("feature widths must be positive")
        if self.frames_per_snippet < 1:
            raise ConfigError("frames_per_snippet must be >= 1")


@dataclass
class SyntheticVideo:
    id: str
    split: str
    label: int
    features: dict
    captions: list
    snippet_labels: np.ndarray
    frames_per_snippet: int

    @property
    def frame_labels(self) -> np.ndarray:
        return np.repeat(self.snippet_labels, self.frames_per_snippet)


def generate_videos(spec: SynthSpec) -> list[SyntheticVideo]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    embed = HashingEmbedder(spec.text_dim)
    background = {m: rng.normal(0.0, 1.0, size=d) for m, d in spec.dims.items()}
    direction = {m: rng.uniform(0.5, 1.5, size=d) for m, d in spec.dims.items()}
    anomalous_caption_rate = spec.false_alarm + (spec.caption_fidelity - spec.false_alarm) * min(1.0, spec.strength)

    plan = (
        [("train", 0)] * spec.train_normal
        + [("train", 1)] * spec.train_abnormal
        + [("test", 0)] * spec.test_normal
        + [("test", 1)] * spec.test_abnormal
    )
    videos = []
    counters = {"train": 0, "test": 0}
    for split, label in plan:
        vid = f"{split}_{counters[split]:04d}"
        counters[split] += 1
        n = int(rng.integers(spec.min_snippets, spec.max_snippets + 1))
        snippet_labels = np.zeros(n, dtype=np.int64)
        if label:
            length = max(1, int(round(n * rng.uniform(*spec.span))))
            start = int(rng.integers(0, n - length + 1))
            snippet_labels[start : start + length] = 1
        intensity = rng.uniform(0.7, 1.3)
        feats = {}
        for m, d in spec.dims.items():
            offset = rng.normal(0.0, 0.5, size=d)
            x = background[m] + offset + rng.normal(0.0, 1.0, size=(n, d))
            x += np.outer(snippet_labels, direction[m]) * spec.strength * intensity
            feats[m] = x
        captions = []
        for i in range(n):
            rate = anomalous_caption_rate if snippet_labels[i] else spec.false_alarm
            text = anomaly_caption(rng) if rng.random() < rate else normal_caption(rng)
            captions.append(CaptionSample(text, vid, i, "original", None))
        feats["T"] = np.stack([embed(c.text) for c in captions])
        videos.append(SyntheticVideo(vid, split, label, feats, captions, snippet_labels, spec.frames_per_snippet))
    return videos


def write_dataset(videos: list[SyntheticVideo], out_dir, text_dim: int) -> DatasetManifest:
    out = Path(out_dir)
    dims = {"T": text_dim}
    entries = []
    for v in videos:
        paths = {}
        for m, x in sorted(v.features.items()):
            dims[m] = x.shape[1]
            rel = f"features/{v.id}_{m}.feat"
            write_feature_file(out / rel, x, v.frames_per_snippet)
            paths[m] = rel
        cap_rel = f"captions/{v.id}.jsonl"
        write_captions(out / cap_rel, v.captions)
        labels_rel = None
        if v.split == "test":
            labels_rel = f"labels/{v.id}.txt"
            write_frame_labels(out / labels_rel, v.frame_labels)
        entries.append(ManifestEntry(v.id, v.split, v.label, paths, cap_rel, labels_rel))
    order = ["T", "R", "F", "A"]
    manifest = DatasetManifest(out, {m: dims[m] for m in order if m in dims}, entries)
    write_manifest(out / "manifest.json", manifest)
    return manifest


def generate_synthetic_dataset(spec: SynthSpec, out_dir) -> DatasetManifest:
    return write_dataset(generate_videos(spec), out_dir, spec.text_dim)
