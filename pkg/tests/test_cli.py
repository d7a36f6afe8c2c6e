import hashlib
import json

import numpy as np
import pytest

from tgvad.cli import main
from tgvad.io import ScoreRow, read_feature_header, read_frame_labels, read_manifest, read_scores, write_scores
from tgvad.metrics import expand_to_frames

from .oracles import ap_rank_walk, auc_pairs

TINY = """\
modalities = T,R
d_embed = 16
n_heads = 2
fusion_layers = 2
bottleneck_tokens = 2
global_layers = 1
steps = 5
batch_size = 8
n_context = 4
n_samplings = 2
text_steps = 50
"""

SYNTH = ["--train-normal", "4", "--train-abnormal", "4", "--test-normal", "3", "--test-abnormal", "3",
         "--min-snippets", "8", "--max-snippets", "12"]


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_pipeline(root):
    """Every subcommand in order on a tiny dataset; returns the output paths."""
    cfg = root / "tiny.ini"
    cfg.write_text(TINY)
    data, work = root / "data", root / "work"
    m = str(data / "manifest.json")
    c = ["--config", str(cfg)]
    steps = [
        ["synth", "--out", str(data), "--seed", "3", *SYNTH],
        ["msta-summarize", "--manifest", m, "--out", str(work / "sum.jsonl"), *c],
        ["msta-annotate", "--manifest", m, "--summaries", str(work / "sum.jsonl"), "--out", str(work / "ann.jsonl"), *c],
        ["msta-generate", "--summaries", str(work / "sum.jsonl"), "--annotated", str(work / "ann.jsonl"),
         "--out", str(work / "gen.jsonl"), *c],
        ["train-text-head", "--samples", str(work / "sum.jsonl"), str(work / "ann.jsonl"), str(work / "gen.jsonl"),
         "--out", str(work / "text.prm"), *c],
        ["train", "--manifest", m, "--out", str(work / "model.prm"), "--loss-trace", str(work / "loss.csv"), *c],
        ["score", "--manifest", m, "--model", str(work / "model.prm"), "--text-head", str(work / "text.prm"),
         "--out", str(work / "scores.csv")],
    ]
    for argv in steps:
        assert main(argv) == 0, argv
    return data, work


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("cli"))


def _labels(data):
    manifest = read_manifest(data / "manifest.json")
    return {e.id: read_frame_labels(manifest.resolve(e.frame_labels)) for e in manifest.split("test")}, manifest


class TestPipeline:
    def test_eval_prints_metrics(self, pipeline, capsys):
        data, work = pipeline
        assert main(["eval", "--manifest", str(data / "manifest.json"), "--scores", str(work / "scores.csv"),
                     "--json", str(work / "eval.json")]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0].startswith("AUC=") and out[1].startswith("AP=")
        report = json.loads((work / "eval.json").read_text())
        assert f"AUC={report['auc']:.4f}" == out[0]

    def test_eval_matches_oracles(self, pipeline, capsys):
        data, work = pipeline
        labels, manifest = _labels(data)
        rows = read_scores(work / "scores.csv")
        scores, truth = [], []
        for e in manifest.split("test"):
            s = np.array([r.s_hat for r in rows if r.video_id == e.id])
            _, _, fps = read_feature_header(manifest.resolve(e.features["R"]))
            scores.append(expand_to_frames(s, fps, labels[e.id].size))
            truth.append(labels[e.id])
        s, y = np.concatenate(scores), np.concatenate(truth)
        main(["eval", "--manifest", str(data / "manifest.json"), "--scores", str(work / "scores.csv")])
        out = capsys.readouterr().out.splitlines()
        assert out == [f"AUC={auc_pairs(s, y):.4f}", f"AP={ap_rank_walk(s, y):.4f}"]

    def test_text_channel_present(self, pipeline):
        _, work = pipeline
        rows = read_scores(work / "scores.csv")
        assert all(r.p is not None for r in rows)
        for r in rows:
            assert r.s_hat == pytest.approx(0.5 * r.s + 0.5 * r.p, abs=1e-12)

    def test_perfect_scores(self, pipeline, tmp_path, capsys):
        data, _ = pipeline
        labels, manifest = _labels(data)
        rows = []
        for e in manifest.split("test"):
            per_snippet = labels[e.id][::16]
            rows += [ScoreRow(e.id, i, float(v), None, float(v)) for i, v in enumerate(per_snippet)]
        write_scores(tmp_path / "perfect.csv", rows)
        assert main(["eval", "--manifest", str(data / "manifest.json"), "--scores", str(tmp_path / "perfect.csv")]) == 0
        assert capsys.readouterr().out.splitlines() == ["AUC=1.0000", "AP=1.0000"]

    def test_eval_text_column(self, pipeline, capsys):
        data, work = pipeline
        assert main(["eval", "--manifest", str(data / "manifest.json"), "--scores", str(work / "scores.csv"),
                     "--column", "p"]) == 0
        assert capsys.readouterr().out.startswith("AUC=")

    def test_reproducible(self, pipeline, tmp_path):
        _, work = pipeline
        _, work2 = run_pipeline(tmp_path)
        for name in ("sum.jsonl", "ann.jsonl", "gen.jsonl", "text.prm", "model.prm", "loss.csv", "scores.csv"):
            assert _digest(work / name) == _digest(work2 / name), name


class TestErrors:
    def test_missing_manifest(self, tmp_path, capsys):
        missing = tmp_path / "nope.json"
        assert main(["train", "--manifest", str(missing), "--out", str(tmp_path / "m.prm")]) == 1
        err = capsys.readouterr().err
        assert err.startswith("error[config]:") and str(missing) in err

    def test_unknown_flag(self, capsys):
        assert main(["eval", "--bogus"]) == 2

    def test_missing_required(self, capsys):
        assert main(["train"]) == 2

    def test_no_subcommand(self, capsys):
        assert main([]) == 2

    def test_bad_set(self, tmp_path, capsys):
        assert main(["train", "--manifest", "x", "--out", "y", "--set", "nokey"]) == 1
        assert "key=value" in capsys.readouterr().err

    def test_unknown_config_key(self, tmp_path, capsys):
        assert main(["train", "--manifest", "x", "--out", "y", "--set", "warp=9"]) == 1
        assert "warp" in capsys.readouterr().err

    def test_unknown_variant(self, pipeline, capsys):
        data, _ = pipeline
        cfg = data.parent / "tiny.ini"
        rc = main(["ablate", "--manifest", str(data / "manifest.json"), "--config", str(cfg), "--variants", "nope"])
        assert rc == 1 and "nope" in capsys.readouterr().err
