import struct
import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tgvad import io
from tgvad.errors import (
    BadMagicError,
    ConfigError,
    FeatureFileError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from tgvad.msta.samples import CaptionSample

f32_matrices = arrays(
    np.float32,
    st.tuples(st.integers(1, 12), st.integers(1, 9)),
    elements=st.floats(-1e6, 1e6, width=32, allow_subnormal=False),
)


class TestFeatureFiles:
    @given(f32_matrices, st.integers(1, 64))
    def test_round_trip_bitwise(self, m, fps):
        feats = io.decode_feature_file(io.encode_feature_file(m, fps))
        assert feats.frames_per_snippet == fps
        assert np.array_equal(feats.matrix.astype(np.float32).view(np.uint32), m.view(np.uint32))

    def test_header_layout(self):
        raw = io.encode_feature_file(np.zeros((3, 2), np.float32), 8)
        assert raw[:8] == b"MVADFEAT"
        assert struct.unpack_from("<IIII", raw, 8) == (1, 3, 2, 8)
        assert len(raw) == 24 + 3 * 2 * 4

    def test_file_round_trip(self, tmp_path, rng):
        m = rng.normal(size=(5, 4)).astype(np.float32)
        io.write_feature_file(tmp_path / "x.feat", m, 16)
        assert np.array_equal(io.read_feature_file(tmp_path / "x.feat").matrix, m.astype(np.float64))
        assert io.read_feature_header(tmp_path / "x.feat") == (5, 4, 16)

    def test_truncated_payload_names_sizes(self):
        raw = io.encode_feature_file(np.ones((4, 3), np.float32))[:-5]
        with pytest.raises(TruncatedPayloadError, match="needs 48 bytes, found 43") as info:
            io.decode_feature_file(raw)
        assert info.value.offset == 24 + 43

    def test_zero_rows_rejected_on_read(self):
        raw = struct.pack("<8sIIII", b"MVADFEAT", 1, 0, 3, 16)
        with pytest.raises(FeatureFileError, match="0 snippet rows") as info:
            io.decode_feature_file(raw)
        assert info.value.offset == 12

    def test_zero_rows_rejected_on_write(self):
        with pytest.raises(FeatureFileError):
            io.encode_feature_file(np.zeros((0, 3)))

    def test_bad_magic(self):
        raw = b"NOTAFEAT" + io.encode_feature_file(np.ones((1, 1)))[8:]
        with pytest.raises(BadMagicError, match="offset 0"):
            io.decode_feature_file(raw)

    def test_version_mismatch(self):
        raw = bytearray(io.encode_feature_file(np.ones((1, 1))))
        raw[8:12] = struct.pack("<I", 2)
        with pytest.raises(VersionMismatchError, match="offset 8"):
            io.decode_feature_file(bytes(raw))

    def test_short_header(self):
        with pytest.raises(TruncatedPayloadError):
            io.decode_feature_file(b"MVADFEAT\x01\x00")

    def test_missing_file_names_path(self, tmp_path):
        with pytest.raises(FeatureFileError, match="nope.feat"):
            io.read_feature_file(tmp_path / "nope.feat")

    def test_read_error_carries_path(self, tmp_path):
        (tmp_path / "bad.feat").write_bytes(b"garbage!" * 4)
        with pytest.raises(BadMagicError, match="bad.feat"):
            io.read_feature_file(tmp_path / "bad.feat")


class TestTextFormats:
    def test_captions_byte_identical(self, tmp_path):
        samples = [
            CaptionSample("a man runs, fast", "v1", 0),
            CaptionSample("un café renversé", "v1", 3, "annotated", 0.25),
            CaptionSample("fight", None, None, "generated", 1.0, duplicate=True),
        ]
        path = tmp_path / "c.jsonl"
        io.write_captions(path, samples)
        first = path.read_bytes()
        assert io.read_captions(path) == samples
        io.write_captions(path, io.read_captions(path))
        assert path.read_bytes() == first

    def test_bad_caption_line_names_line(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"text": "ok"}\n{oops\n')
        with pytest.raises(ConfigError, match=r"c.jsonl:2"):
            io.read_captions(path)

    def test_frame_labels(self, tmp_path):
        io.write_frame_labels(tmp_path / "f.txt", [0, 1, 1, 0])
        assert (tmp_path / "f.txt").read_text() == "0\n1\n1\n0\n"
        np.testing.assert_array_equal(io.read_frame_labels(tmp_path / "f.txt"), [0, 1, 1, 0])

    def test_frame_labels_reject_other_values(self, tmp_path):
        (tmp_path / "f.txt").write_text("0\n2\n")
        with pytest.raises(ConfigError, match=":2"):
            io.read_frame_labels(tmp_path / "f.txt")

    def test_scores_round_trip(self, tmp_path):
        rows = [io.ScoreRow("v", 0, 0.1, None, 0.1), io.ScoreRow("v", 1, 1 / 3, 0.7, 0.5166666666666666)]
        path = tmp_path / "s.csv"
        io.write_scores(path, rows)
        assert path.read_text().splitlines()[0] == "video_id,snippet_index,s,p,s_hat"
        back = io.read_scores(path)
        assert back == rows
        assert io.dumps_scores(back) == path.read_text()

    def test_scores_wrong_header(self, tmp_path):
        (tmp_path / "s.csv").write_text("a,b\n1,2\n")
        with pytest.raises(ConfigError):
            io.read_scores(tmp_path / "s.csv")

    def test_loss_trace_exact(self, tmp_path):
        losses = [0.6931471805599453, 0.1 + 0.2, 1e-17]
        io.write_loss_trace(tmp_path / "l.csv", losses)
        assert io.read_loss_trace(tmp_path / "l.csv") == losses


class TestParams:
    def test_round_trip(self, rng, tmp_path):
        state = {"b": rng.normal(size=(3,)), "a.weight": rng.normal(size=(2, 4)), "s": np.array(2.5)}
        io.save_params(tmp_path / "p.bin", state, {"kind": "x"})
        back, meta = io.load_params(tmp_path / "p.bin")
        assert meta == {"kind": "x"} and set(back) == set(state)
        for k in state:
            assert np.array_equal(back[k], state[k])
        assert io.encode_params(back, meta) == (tmp_path / "p.bin").read_bytes()

    def test_truncated(self, rng):
        raw = io.encode_params({"w": rng.normal(size=(4,))})
        with pytest.raises(TruncatedPayloadError):
            io.decode_params(raw[:-1])

    def test_trailing_bytes(self):
        with pytest.raises(FeatureFileError, match="trailing"):
            io.decode_params(io.encode_params({"w": np.zeros(2)}) + b"\x00")

    def test_bad_magic(self):
        with pytest.raises(BadMagicError):
            io.decode_params(b"MVADFEAT" + b"\x00" * 8)


class TestManifest:
    def _manifest(self, root):
        return io.DatasetManifest(
            root,
            {"R": 4, "T": 3},
            [
                io.ManifestEntry("a", "train", 1, {"T": "a.T.feat", "R": "a.R.feat"}, "a.jsonl"),
                io.ManifestEntry("b", "test", None, {"R": "b.R.feat"}, None, "b.labels"),
            ],
        )

    def test_round_trip(self, tmp_path):
        m = self._manifest(tmp_path)
        io.write_manifest(tmp_path / "m.json", m)
        back = io.read_manifest(tmp_path / "m.json")
        assert back.entries == m.entries and back.modality_dims == m.modality_dims
        assert back.to_json() == (tmp_path / "m.json").read_text()
        assert [e.id for e in back.split("test")] == ["b"]
        assert back.resolve("b.labels") == tmp_path / "b.labels"

    def test_missing(self, tmp_path):
        with pytest.raises(ConfigError, match="missing.json"):
            io.read_manifest(tmp_path / "missing.json")

    def test_unlabelled_training_video(self, tmp_path):
        m = self._manifest(tmp_path)
        m.entries[0].label = None
        io.write_manifest(tmp_path / "m.json", m)
        with pytest.raises(ConfigError, match="no label"):
            io.read_manifest(tmp_path / "m.json")


class TestAtomicWrites:
    def test_no_temporaries_left(self, tmp_path):
        io.write_text_atomic(tmp_path / "out.txt", "hello")
        assert [p.name for p in tmp_path.iterdir()] == ["out.txt"]

    def test_failed_write_keeps_old_file(self, tmp_path, monkeypatch):
        path = tmp_path / "out.txt"
        io.write_text_atomic(path, "old")

        def boom(src, dst):
            raise OSError("disk full")

        monkeypatch.setattr(io.os, "replace", boom)
        with pytest.raises(OSError):
            io.write_text_atomic(path, "new")
        assert path.read_text() == "old" and len(list(tmp_path.iterdir())) == 1

    def test_concurrent_writers_leave_one_complete_version(self, tmp_path):
        path = tmp_path / "shared.feat"
        mats = [np.full((50, 20), i, np.float32) for i in range(8)]
        threads = [threading.Thread(target=io.write_feature_file, args=(path, m)) for m in mats]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        got = io.read_feature_file(path).matrix
        assert any(np.array_equal(got, m) for m in mats)
        assert [p.name for p in tmp_path.iterdir()] == ["shared.feat"]
