"""Pluggable text embedding providers feeding the text anomaly head."""

from __future__ import annotations

import hashlib
import json
import re
from pathlib import Path
from typing import Protocol

import numpy as np

from ..errors import ConfigError

_WORD = re.compile(r"[a-z0-9']+")


def tokenize(text: str) -> list[str]:
    return _WORD.findall(text.lower())


class Embedder(Protocol):
    dim: int

    def __call__(self, text: str) -> np.ndarray: ...


class HashingEmbedder:
    """Signed feature hashing of unigrams and bigrams, L2-normalised.

    Uses blake2b so vectors are identical across processes and platforms.
    """

    kind = "hashing"

    def __init__(self, dim: int = 64):
        if dim < 1:
            raise ConfigError(f"embedding dim must be >= 1, got {dim}")
        self.dim = int(dim)

    def _slot(self, token: str) -> tuple[int, float]:
        h = int.from_bytes(hashlib.blake2b(token.encode(), digest_size=8).digest(), "little")
        return h % self.dim, 1.0 if (h >> 63) & 1 else -1.0

    def __call__(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        words = tokenize(text)
        grams = words + [f"{a} {b}" for a, b in zip(words, words[1:])]
        for g in grams:
            idx, sign = self._slot(g)
            vec[idx] += sign
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec

    def embed_many(self, texts) -> np.ndarray:
        return np.stack([self(t) for t in texts]) if texts else np.zeros((0, self.dim))

    def describe(self) -> dict:
        return {"kind": self.kind, "dim": self.dim}


class FileEmbedder:
    """Precomputed embeddings from a JSON-lines file of ``{"text": ..., "embedding": [...]}``."""

    kind = "file"

    def __init__(self, path):
        self.path = Path(path)
        self.table: dict[str, np.ndarray] = {}
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    self.table[rec["text"]] = np.asarray(rec["embedding"], dtype=np.float64)
        dims = {v.size for v in self.table.values()}
        if len(dims) != 1:
            raise ConfigError(f"{self.path}: embeddings have inconsistent widths {sorted(dims)}")
        self.dim = dims.pop()

    def __call__(self, text: str) -> np.ndarray:
        try:
            return self.table[text]
        except KeyError:
            raise ConfigError(f"no precomputed embedding for text {text[:60]!r}") from None

    def embed_many(self, texts) -> np.ndarray:
        return np.stack([self(t) for t in texts]) if texts else np.zeros((0, self.dim))

    def describe(self) -> dict:
        return {"kind": self.kind, "path": str(self.path), "dim": self.dim}


def embedder_from_description(desc: dict):
    if desc.get("kind") == "hashing":
        return HashingEmbedder(int(desc["dim"]))
    if desc.get("kind") == "file":
        return FileEmbedder(desc["path"])
    raise ConfigError(f"unknown embedder description {desc}")
