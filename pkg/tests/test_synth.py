import hashlib

import numpy as np
import pytest

from tgvad.config import RunConfig
from tgvad.detection import AnomalyDetector, VideoRecord, train
from tgvad.errors import ConfigError
from tgvad.io import read_captions, read_feature_file, read_frame_labels, read_manifest
from tgvad.metrics import frame_auc
from tgvad.synth import SynthSpec, generate_synthetic_dataset, generate_videos

SMALL = dict(train_normal=3, train_abnormal=3, test_normal=2, test_abnormal=2, min_snippets=6, max_snippets=9, dims={"R": 4})


def _tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


class TestDeterminism:
    def test_same_seed_same_bytes(self, tmp_path):
        generate_synthetic_dataset(SynthSpec(**SMALL, seed=4), tmp_path / "a")
        generate_synthetic_dataset(SynthSpec(**SMALL, seed=4), tmp_path / "b")
        assert _tree_digest(tmp_path / "a") == _tree_digest(tmp_path / "b")

    def test_different_seed_differs(self, tmp_path):
        generate_synthetic_dataset(SynthSpec(**SMALL, seed=1), tmp_path / "a")
        generate_synthetic_dataset(SynthSpec(**SMALL, seed=2), tmp_path / "b")
        assert _tree_digest(tmp_path / "a") != _tree_digest(tmp_path / "b")


class TestLayout:
    def test_manifest_and_files(self, tmp_path):
        spec = SynthSpec(**SMALL, seed=0)
        generate_synthetic_dataset(spec, tmp_path)
        m = read_manifest(tmp_path / "manifest.json")
        assert m.modality_dims == {"T": 64, "R": 4}
        assert len(m.split("train")) == 6 and len(m.split("test")) == 4
        for e in m.entries:
            t = read_feature_file(m.resolve(e.features["T"])).matrix
            r = read_feature_file(m.resolve(e.features["R"])).matrix
            caps = read_captions(m.resolve(e.captions))
            assert t.shape[0] == r.shape[0] == len(caps)
            assert [c.snippet_index for c in caps] == list(range(len(caps)))
            if e.split == "test":
                labels = read_frame_labels(m.resolve(e.frame_labels))
                assert labels.size == 16 * t.shape[0]
                assert labels.any() == bool(e.label)

    def test_abnormal_span_is_contiguous(self):
        for v in generate_videos(SynthSpec(**SMALL, seed=3)):
            idx = np.flatnonzero(v.snippet_labels)
            if v.label:
                assert idx.size >= 1 and np.all(np.diff(idx) == 1)
            else:
                assert idx.size == 0


class TestValidation:
    @pytest.mark.parametrize(
        "change",
        [
            {"train_normal": 1},
            {"test_abnormal": 0},
            {"min_snippets": 0},
            {"min_snippets": 10, "max_snippets": 5},
            {"span": (0.0, 0.5)},
            {"span": (0.6, 0.5)},
            {"strength": -1.0},
            {"false_alarm": 0.9, "caption_fidelity": 0.5},
            {"dims": {"R": 0}},
            {"frames_per_snippet": 0},
        ],
    )
    def test_degenerate_specs(self, change):
        with pytest.raises(ConfigError):
            SynthSpec(**{**SMALL, **change}).validate()

    def test_no_test_split_allowed(self):
        SynthSpec(**{**SMALL, "test_normal": 0, "test_abnormal": 0}).validate()


def _frames(videos, fn):
    scores = np.concatenate([np.repeat(fn(v), v.frames_per_snippet) for v in videos])
    labels = np.concatenate([v.frame_labels for v in videos])
    return scores, labels


class TestSignal:
    def test_strong_anomaly_separable_without_learning(self):
        spec = SynthSpec(strength=4.0, seed=0, dims={"R": 16})
        videos = generate_videos(spec)
        test = [v for v in videos if v.split == "test"]
        s, y = _frames(test, lambda v: v.features["R"].mean(axis=1))
        assert frame_auc(s, y) > 0.95

    def test_zero_strength_is_unlearnable(self):
        spec = SynthSpec(
            strength=0.0, seed=0, train_normal=8, train_abnormal=8, test_normal=20, test_abnormal=20,
            min_snippets=12, max_snippets=20, dims={"R": 8},
        )
        videos = generate_videos(spec)

        def records(split):
            return [VideoRecord(v.id, v.label, {m: v.features[m] for m in "TR"}) for v in videos if v.split == split]

        cfg = RunConfig(
            modalities="T,R", d_embed=16, n_heads=2, fusion_layers=2, bottleneck_tokens=2,
            global_layers=1, steps=40, batch_size=8, lr=0.01,
        )
        model = AnomalyDetector(cfg.model_config({"T": 64, "R": 8}))
        train(model, records("train"), cfg.train_config())
        test = [v for v in videos if v.split == "test"]
        s, y = _frames(test, lambda v: model.scores({m: v.features[m] for m in "TR"}))
        assert abs(frame_auc(s, y) - 0.5) <= 0.1
