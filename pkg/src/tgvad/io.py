"""On-disk formats.

Feature file (little-endian throughout)::

    offset  size  field
    0       8     magic b"MVADFEAT"
    8       4     format version (u32), currently 1
    12      4     rows = snippet count (u32, >= 1)
    16      4     cols = feature width (u32)
    20      4     frames per snippet (u32)
    24      4*r*c payload, float32, row-major

Other artifacts: a JSON dataset manifest, JSON-lines caption stores, CSV
score curves and loss traces, one-label-per-line frame label files, and a
parameter archive (JSON header + float64 payload) for trained weights.
Every writer produces identical bytes for identical content.
"""

from __future__ import annotations

import csv
import io as _io
import json
import os
import struct
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BadMagicError,
    ConfigError,
    FeatureFileError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from .msta.samples import CaptionSample

MAGIC = b"MVADFEAT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIIII")
PARAM_MAGIC = b"TGVADPRM"

_path_locks: dict[str, threading.Lock] = {}
_registry_lock = threading.Lock()


def _lock_for(path: Path) -> threading.Lock:
    key = str(Path(path).resolve())
    with _registry_lock:
        return _path_locks.setdefault(key, threading.Lock())


def write_bytes_atomic(path, payload: bytes):
    """Write via a temporary sibling and rename, serialized per path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with _lock_for(path):
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(payload)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def write_text_atomic(path, text: str):
    write_bytes_atomic(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# feature files
# ---------------------------------------------------------------------------


@dataclass
class SnippetFeatures:
    modality: str
    matrix: np.ndarray
    frames_per_snippet: int = 16

    @property
    def n_snippets(self) -> int:
        return self.matrix.shape[0]


def encode_feature_file(matrix, frames_per_snippet: int = 16) -> bytes:
    arr = np.asarray(matrix)
    if arr.ndim != 2:
        raise FeatureFileError(f"feature matrix must be 2-D, got shape {arr.shape}")
    rows, cols = arr.shape
    if rows < 1:
        raise FeatureFileError("feature matrix needs at least one snippet row")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, rows, cols, int(frames_per_snippet))
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def decode_feature_file(raw: bytes, modality: str = "?") -> SnippetFeatures:
    if len(raw) < 8 or raw[:8] != MAGIC:
        raise BadMagicError(f"bad magic {raw[:8]!r}, expected {MAGIC!r}", offset=0)
    if len(raw) < _HEADER.size:
        raise TruncatedPayloadError(
            f"header needs {_HEADER.size} bytes, file has {len(raw)}", offset=len(raw)
        )
    _, version, rows, cols, fps = _HEADER.unpack_from(raw)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"format version {version}, this reader understands {FORMAT_VERSION}", offset=8
        )
    if rows < 1:
        raise FeatureFileError("feature file declares 0 snippet rows", offset=12)
    expected = rows * cols * 4
    actual = len(raw) - _HEADER.size
    if actual != expected:
        raise TruncatedPayloadError(
            f"payload of {rows}x{cols} float32 needs {expected} bytes, found {actual}",
            offset=_HEADER.size + min(actual, expected),
        )
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size, count=rows * cols)
    return SnippetFeatures(modality, data.reshape(rows, cols).astype(np.float64), fps)


def write_feature_file(path, matrix, frames_per_snippet: int = 16):
    write_bytes_atomic(path, encode_feature_file(matrix, frames_per_snippet))


def read_feature_file(path, modality: str = "?") -> SnippetFeatures:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise FeatureFileError(f"feature file not found: {path}") from None
    try:
        return decode_feature_file(raw, modality)
    except FeatureFileError as exc:
        raise type(exc)(f"{path}: {exc}") from None


def read_feature_header(path) -> tuple[int, int, int]:
    """``(rows, cols, frames_per_snippet)`` from the header alone."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = fh.read(_HEADER.size)
    except FileNotFoundError:
        raise FeatureFileError(f"feature file not found: {path}") from None
    if raw[:8] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:8]!r}, expected {MAGIC!r}", offset=0)
    if len(raw) < _HEADER.size:
        raise TruncatedPayloadError(f"{path}: header needs {_HEADER.size} bytes, file has {len(raw)}", offset=len(raw))
    _, version, rows, cols, fps = _HEADER.unpack(raw)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, this reader understands {FORMAT_VERSION}", offset=8)
    return rows, cols, fps


# ---------------------------------------------------------------------------
# captions, frame labels, scores, loss traces
# ---------------------------------------------------------------------------


def dumps_captions(samples: Iterable[CaptionSample]) -> str:
    return "".join(json.dumps(s.to_record(), ensure_ascii=False) + "\n" for s in samples)


def write_captions(path, samples: Iterable[CaptionSample]):
    write_text_atomic(path, dumps_captions(samples))


def read_captions(path) -> list[CaptionSample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(CaptionSample.from_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ConfigError(f"{path}:{lineno}: bad caption record: {exc}") from None
    return out


def write_frame_labels(path, labels):
    write_text_atomic(path, "".join(f"{int(v)}\n" for v in labels))


def read_frame_labels(path) -> np.ndarray:
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            token = line.strip()
            if not token:
                continue
            if token not in ("0", "1"):
                raise ConfigError(f"{path}:{lineno}: frame label must be 0 or 1, got {token!r}")
            values.append(int(token))
    return np.asarray(values, dtype=np.int64)


SCORE_COLUMNS = ("video_id", "snippet_index", "s", "p", "s_hat")


@dataclass
class ScoreRow:
    video_id: str
    snippet_index: int
    s: float
    p: float | None
    s_hat: float


def dumps_scores(rows: Iterable[ScoreRow]) -> str:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SCORE_COLUMNS)
    for r in rows:
        writer.writerow(
            [r.video_id, r.snippet_index, repr(float(r.s)), "" if r.p is None else repr(float(r.p)), repr(float(r.s_hat))]
        )
    return buf.getvalue()


def write_scores(path, rows: Iterable[ScoreRow]):
    write_text_atomic(path, dumps_scores(rows))


def read_scores(path) -> list[ScoreRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SCORE_COLUMNS:
            raise ConfigError(f"{path}: expected columns {SCORE_COLUMNS}, got {reader.fieldnames}")
        return [
            ScoreRow(
                rec["video_id"],
                int(rec["snippet_index"]),
                float(rec["s"]),
                None if rec["p"] == "" else float(rec["p"]),
                float(rec["s_hat"]),
            )
            for rec in reader
        ]


def write_loss_trace(path, losses: Sequence[float]):
    lines = ["step,loss\n"] + [f"{i},{float(v)!r}\n" for i, v in enumerate(losses)]
    write_text_atomic(path, "".join(lines))


def read_loss_trace(path) -> list[float]:
    with open(path, newline="") as fh:
        return [float(rec["loss"]) for rec in csv.DictReader(fh)]


# ---------------------------------------------------------------------------
# parameter archives
# ---------------------------------------------------------------------------


def encode_params(state: dict, meta: dict | None = None) -> bytes:
    names = sorted(state)
    header = {
        "meta": meta or {},
        "tensors": [[n, list(np.shape(state[n]))] for n in names],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    payload = b"".join(np.ascontiguousarray(state[n], dtype="<f8").tobytes() for n in names)
    return PARAM_MAGIC + struct.pack("<I", len(hbytes)) + hbytes + payload


def decode_params(raw: bytes) -> tuple[dict, dict]:
    if raw[:8] != PARAM_MAGIC:
        raise BadMagicError(f"not a parameter archive (magic {raw[:8]!r})", offset=0)
    (hlen,) = struct.unpack_from("<I", raw, 8)
    header = json.loads(raw[12 : 12 + hlen])
    offset = 12 + hlen
    state = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(raw):
            raise TruncatedPayloadError(f"tensor {name} runs past end of archive", offset=offset)
        state[name] = np.frombuffer(raw, dtype="<f8", offset=offset, count=count).reshape(shape).copy()
        offset = end
    if offset != len(raw):
        raise FeatureFileError(f"{len(raw) - offset} trailing bytes in archive", offset=offset)
    return state, header["meta"]


def save_params(path, state: dict, meta: dict | None = None):
    write_bytes_atomic(path, encode_params(state, meta))


def load_params(path) -> tuple[dict, dict]:
    return decode_params(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# dataset manifest
# ---------------------------------------------------------------------------


@dataclass
class ManifestEntry:
    id: str
    split: str
    label: int | None
    features: dict
    captions: str | None = None
    frame_labels: str | None = None

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "split": self.split,
            "label": self.label,
            "features": dict(sorted(self.features.items())),
            "captions": self.captions,
            "frame_labels": self.frame_labels,
        }


@dataclass
class DatasetManifest:
    root: Path
    modality_dims: dict
    entries: list = field(default_factory=list)

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def resolve(self, rel: str | None) -> Path | None:
        return None if rel is None else self.root / rel

    def to_json(self) -> str:
        doc = {
            "format": "tgvad-manifest",
            "version": 1,
            "modalities": self.modality_dims,
            "videos": [e.to_record() for e in self.entries],
        }
        return json.dumps(doc, indent=1) + "\n"


def write_manifest(path, manifest: DatasetManifest):
    write_text_atomic(path, manifest.to_json())


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"manifest not found: {path}")
    doc = json.loads(path.read_text())
    if doc.get("format") != "tgvad-manifest":
        raise ConfigError(f"{path}: not a dataset manifest")
    entries = []
    for rec in doc["videos"]:
        if rec["split"] not in ("train", "test"):
            raise ConfigError(f"{path}: video {rec['id']} has unknown split {rec['split']!r}")
        if rec["split"] == "train" and rec.get("label") is None:
            raise ConfigError(f"{path}: training video {rec['id']} has no label")
        entries.append(
            ManifestEntry(
                rec["id"],
                rec["split"],
                rec.get("label"),
                dict(rec["features"]),
                rec.get("captions"),
                rec.get("frame_labels"),
            )
        )
    return DatasetManifest(path.parent, dict(doc["modalities"]), entries)
