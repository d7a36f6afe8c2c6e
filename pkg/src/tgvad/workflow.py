"""Glue between on-disk artifacts and the in-memory components."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .config import RunConfig
from .detection import AnomalyDetector, TrainResult, VideoRecord, blend_scores, score_video, train
from .encoders import parse_modalities
from .errors import AlignmentError, ConfigError, MetricUndefinedError
from .io import (
    DatasetManifest,
    ScoreRow,
    load_params,
    read_captions,
    read_feature_file,
    read_feature_header,
    read_frame_labels,
    save_params,
    write_text_atomic,
)
from .metrics import expand_to_frames, frame_ap, frame_auc
from .msta.embedders import HashingEmbedder, embedder_from_description
from .msta.text_head import TextHead, infer_text_probability, train_text_head

logger = logging.getLogger(__name__)


def load_videos(manifest: DatasetManifest, split: str, modalities: Sequence[str] | None = None) -> list[VideoRecord]:
    modalities = list(modalities or manifest.modality_dims)
    videos = []
    for entry in manifest.split(split):
        feats = {}
        fps = None
        for m in modalities:
            if m not in entry.features:
                raise ConfigError(f"video {entry.id} has no {m} features")
            sf = read_feature_file(manifest.resolve(entry.features[m]), m)
            feats[m] = sf.matrix
            fps = sf.frames_per_snippet if fps is None else fps
        lengths = {m: x.shape[0] for m, x in feats.items()}
        if len(set(lengths.values())) > 1:
            raise AlignmentError(f"video {entry.id}: modalities disagree on snippet count {lengths}")
        captions = read_captions(manifest.resolve(entry.captions)) if entry.captions else []
        frame_labels = read_frame_labels(manifest.resolve(entry.frame_labels)) if entry.frame_labels else None
        videos.append(VideoRecord(entry.id, entry.label, feats, fps or 16, captions, frame_labels))
    return videos


def load_label_records(manifest: DatasetManifest, split: str, frames_per_snippet: int | None = None) -> list[VideoRecord]:
    """Videos of ``split`` that carry frame labels, without their features.

    The frame rate per snippet comes from the header of the video's first
    feature file unless ``frames_per_snippet`` is given.
    """
    out = []
    for entry in manifest.split(split):
        if not entry.frame_labels:
            continue
        fps = frames_per_snippet
        if fps is None:
            first = sorted(entry.features)[0]
            fps = read_feature_header(manifest.resolve(entry.features[first]))[2]
        out.append(VideoRecord(entry.id, entry.label, {}, fps, [], read_frame_labels(manifest.resolve(entry.frame_labels))))
    return out


def video_captions(videos: Sequence[VideoRecord]):
    """``(video_id, captions, label)`` triples for the augmentation pipeline."""
    return [(v.id, v.captions, v.label) for v in videos if v.captions]


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def save_model(path, model: AnomalyDetector, cfg: RunConfig):
    meta = {
        "kind": "detector",
        "run_config": cfg.to_ini(),
        "input_dims": dict(model.cfg.input_dims),
    }
    save_params(path, model.state_dict(), meta)


def load_model(path) -> tuple[AnomalyDetector, RunConfig]:
    state, meta = load_params(path)
    if meta.get("kind") != "detector":
        raise ConfigError(f"{path}: not a detector archive")
    cfg = RunConfig.from_ini(meta["run_config"], str(path))
    model = AnomalyDetector(cfg.model_config(meta["input_dims"]))
    model.load_state_dict(state)
    return model, cfg


def save_text_head(path, head: TextHead, embedder):
    meta = {"kind": "text_head", "hidden": head.hidden, "in_dim": head.in_dim, "embedder": embedder.describe()}
    save_params(path, head.state_dict(), meta)


def load_text_head(path):
    state, meta = load_params(path)
    if meta.get("kind") != "text_head":
        raise ConfigError(f"{path}: not a text head archive")
    head = TextHead(meta["in_dim"], meta["hidden"])
    head.load_state_dict(state)
    return head, embedder_from_description(meta["embedder"])


# ---------------------------------------------------------------------------
# training / scoring / evaluation
# ---------------------------------------------------------------------------


def fit_text_head(samples, cfg: RunConfig, embedder=None):
    embedder = embedder or HashingEmbedder(cfg.text_embed_dim)
    head = TextHead(embedder.dim, cfg.text_hidden, cfg.seed)
    losses = train_text_head(samples, embedder, head, cfg.text_training())
    return head, embedder, losses


def fit_detector(videos: Sequence[VideoRecord], cfg: RunConfig, input_dims: dict, on_step=None):
    model = AnomalyDetector(cfg.model_config(input_dims))
    result: TrainResult = train(model, videos, cfg.train_config(), on_step)
    return model, result


def text_prob_fn(head: TextHead | None, embedder) -> Callable[[str], float] | None:
    if head is None:
        return None
    cache: dict[str, float] = {}

    def prob(text: str) -> float:
        if text not in cache:
            cache[text] = infer_text_probability(text, embedder, head)
        return cache[text]

    return prob


def score_videos(model, videos, alpha: float, prob_fn=None) -> list[ScoreRow]:
    rows = []
    for v in videos:
        triple = score_video(model, v, alpha, prob_fn)
        for i in range(triple.s.size):
            p = None if triple.p is None else float(triple.p[i])
            rows.append(ScoreRow(v.id, i, float(triple.s[i]), p, float(triple.s_hat[i])))
    return rows


def reblend(rows: Sequence[ScoreRow], alpha: float) -> list[ScoreRow]:
    """Recompute ``s_hat`` for another alpha without re-running the network."""
    out = []
    for r in rows:
        s_hat = float(blend_scores([r.s], None if r.p is None else [r.p], alpha)[0])
        out.append(ScoreRow(r.video_id, r.snippet_index, r.s, r.p, s_hat))
    return out


@dataclass
class EvalReport:
    auc: float | None
    ap: float | None
    frames: int
    videos: int

    def lines(self) -> list[str]:
        out = []
        if self.auc is not None:
            out.append(f"AUC={self.auc:.4f}")
        if self.ap is not None:
            out.append(f"AP={self.ap:.4f}")
        return out

    def to_dict(self) -> dict:
        return asdict(self)


def frame_arrays(rows: Sequence[ScoreRow], videos: Sequence[VideoRecord], column: str = "s_hat"):
    by_video: dict[str, list[ScoreRow]] = {}
    for r in rows:
        by_video.setdefault(r.video_id, []).append(r)
    scores, labels = [], []
    for v in videos:
        if v.frame_labels is None:
            continue
        if v.id not in by_video:
            raise ConfigError(f"no scores for test video {v.id}")
        vr = sorted(by_video[v.id], key=lambda r: r.snippet_index)
        values = [getattr(r, column) for r in vr]
        if any(x is None for x in values):
            raise ConfigError(f"video {v.id} has no {column!r} scores")
        snippet = np.array(values, dtype=np.float64)
        scores.append(expand_to_frames(snippet, v.frames_per_snippet, v.frame_labels.size))
        labels.append(v.frame_labels)
    if not scores:
        raise MetricUndefinedError("no test videos with frame labels")
    return np.concatenate(scores), np.concatenate(labels)


def evaluate(rows: Sequence[ScoreRow], videos: Sequence[VideoRecord], column: str = "s_hat") -> EvalReport:
    s, y = frame_arrays(rows, videos, column)
    auc = frame_auc(s, y) if 0 < y.sum() < y.size else None
    ap = frame_ap(s, y) if y.sum() > 0 else None
    return EvalReport(auc, ap, int(y.size), len({r.video_id for r in rows}))


def config_for_manifest(cfg: RunConfig, manifest: DatasetManifest) -> dict:
    """Input widths of the configured modalities, taken from the manifest."""
    mods = parse_modalities(cfg.modalities)
    missing = [m for m in mods if m not in manifest.modality_dims]
    if missing:
        raise ConfigError(f"dataset has no features for modalities {missing}")
    return {m: int(manifest.modality_dims[m]) for m in mods}


def dump_json(path, doc):
    write_text_atomic(path, json.dumps(doc, indent=1, sort_keys=True) + "\n")
