"""Frame-level ranking metrics."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .errors import AlignmentError, MetricUndefinedError


def _validate(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise AlignmentError(f"{s.size} scores but {y.size} labels")
    if not np.all(np.isin(y, (0, 1))):
        raise MetricUndefinedError("labels must be 0 or 1")
    return s, y.astype(bool)


def frame_auc(scores, labels) -> float:
    """Area under the ROC curve, P(pos > neg) + 0.5 P(tie), via midranks."""
    s, y = _validate(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError("AUC needs both positive and negative frames")
    ranks = rankdata(s)  # average ranks; exact half-integers
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def frame_ap(scores, labels) -> float:
    """Average precision: mean of precision@rank over positive frames.

    Frames are ranked by descending score; equal scores keep input order.
    """
    s, y = _validate(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise MetricUndefinedError("AP needs at least one positive frame")
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    ranks = np.flatnonzero(hits) + 1.0
    precision = np.arange(1, n_pos + 1) / ranks
    return float(precision.sum() / n_pos)


def expand_to_frames(snippet_scores, frames_per_snippet: int, frame_count: int | None = None) -> np.ndarray:
    """Repeat each snippet score over its frame span, then fit to ``frame_count``.

    A shorter label track truncates; a longer one repeats the last score.
    """
    s = np.repeat(np.asarray(snippet_scores, dtype=np.float64), int(frames_per_snippet))
    if frame_count is None or frame_count == s.size:
        return s
    if frame_count < s.size:
        return s[:frame_count]
    pad = s[-1] if s.size else 0.0
    return np.concatenate([s, np.full(frame_count - s.size, pad)])
