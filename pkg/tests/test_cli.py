import json
import os
from pathlib import Path

import pytest

from formpoint.cli import main
from formpoint.docmodel import KeyIntent, load_corpus


def run_cli(*argv):
    return main([str(a) for a in argv])


TINY_MODEL_FLAGS = ["--d-model", 32, "--xy-m", 8, "--xy-n", 4,
                    "--dual-layers", 1, "--attn-heads", 2,
                    "--entity-depth", 1, "--token-depth", 1,
                    "--scorer-hidden", 16, "--epochs", 2,
                    "--batch-size", 16, "--learning-rate", 0.05]


@pytest.fixture(scope="module")
def gen_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    code = run_cli("generate", "--out", out, "--seed", 7,
                   "--train", 6, "--val", 2, "--digital", 2,
                   "--printed", 2, "--handwritten", 2,
                   "--char-noise", 0.0, "--bbox-jitter", 0.0,
                   "--rotation", 0.0, "--flip-alignment", 0.0,
                   "--value-drop", 0.1)
    assert code == 0
    return out


@pytest.fixture(scope="module")
def trained_dir(gen_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    code = run_cli("train", "--corpus", gen_dir / "corpus", "--out", out,
                   "--seed", 0, *TINY_MODEL_FLAGS)
    assert code == 0
    return out


class TestGenerate:
    def test_outputs_and_manifest(self, gen_dir):
        corpus_dir = gen_dir / "corpus"
        names = {p.name for p in corpus_dir.glob("*.json")}
        assert names == {"train.json", "val.json", "test_digital.json",
                         "test_printed.json", "test_handwritten.json",
                         "manifest.json"}
        manifest = json.loads((corpus_dir / "manifest.json").read_text())
        assert manifest["counts"] == {"train": 6, "val": 2, "test_digital": 2,
                                      "test_printed": 2,
                                      "test_handwritten": 2}
        assert manifest["master_seed"] == 7
        assert (gen_dir / "config-echo").exists()

    def test_profile_override_recorded(self, gen_dir):
        manifest = json.loads((gen_dir / "corpus/manifest.json").read_text())
        for profile in manifest["profiles"].values():
            assert profile["value_drop_rate"] == 0.1

    def test_rerun_is_byte_identical(self, gen_dir, tmp_path):
        out2 = tmp_path / "again"
        assert run_cli("generate", "--out", out2, "--seed", 7,
                       "--train", 6, "--val", 2, "--digital", 2,
                       "--printed", 2, "--handwritten", 2,
                       "--char-noise", 0.0, "--bbox-jitter", 0.0,
                       "--rotation", 0.0, "--flip-alignment", 0.0,
                       "--value-drop", 0.1) == 0
        for name in ("train.json", "test_handwritten.json"):
            assert (out2 / "corpus" / name).read_bytes() == \
                (gen_dir / "corpus" / name).read_bytes()

    def test_counting(self, gen_dir):
        docs = load_corpus(gen_dir / "corpus/train.json")
        assert len(docs) == 6


class TestTrain:
    def test_artifacts(self, trained_dir):
        assert (trained_dir / "params/model.fpnt").exists()
        log = (trained_dir / "reports/training-log.txt").read_text()
        assert log.count("epoch=") == 2
        echo = json.loads((trained_dir / "config-echo").read_text())
        assert echo["model"]["d_model"] == 32

    def test_missing_corpus_exits_2(self, tmp_path):
        code = run_cli("train", "--corpus", tmp_path / "nope",
                       "--out", tmp_path / "out")
        assert code == 2

    def test_aspect_flag_parsing(self, gen_dir, tmp_path):
        out = tmp_path / "vtp"
        code = run_cli("train", "--corpus", gen_dir / "corpus", "--out", out,
                       "--seed", 0, "--aspects", "VTP", *TINY_MODEL_FLAGS)
        assert code == 0
        echo = json.loads((out / "config-echo").read_text())
        assert echo["model"]["aspect_flags"] == ["V", "T", "P"]

    def test_rerun_same_hash(self, gen_dir, trained_dir, tmp_path):
        out2 = tmp_path / "train2"
        assert run_cli("train", "--corpus", gen_dir / "corpus",
                       "--out", out2, "--seed", 0, *TINY_MODEL_FLAGS) == 0
        assert (out2 / "params/model.fpnt").read_bytes() == \
            (trained_dir / "params/model.fpnt").read_bytes()


class TestEvaluate:
    def test_reports_per_nature(self, gen_dir, trained_dir, tmp_path):
        out = tmp_path / "eval"
        code = run_cli("evaluate", "--corpus", gen_dir / "corpus",
                       "--params", trained_dir / "params/model.fpnt",
                       "--out", out)
        assert code == 0
        names = {p.name for p in (out / "reports").glob("eval-*.txt")}
        assert names == {"eval-test_digital.txt", "eval-test_printed.txt",
                         "eval-test_handwritten.txt"}

    def test_parser_mode(self, gen_dir, trained_dir, tmp_path):
        out = tmp_path / "pm"
        code = run_cli("evaluate", "--corpus", gen_dir / "corpus",
                       "--params", trained_dir / "params/model.fpnt",
                       "--out", out, "--parser-mode", "--iou", 0.5,
                       "--merge-rate", 0.0, "--split-rate", 0.0)
        assert code == 0
        text = (out / "reports/parser-test_digital.txt").read_text()
        assert "accuracy" in text

    def test_ablation_matrix(self, gen_dir, tmp_path):
        out = tmp_path / "abl"
        code = run_cli("evaluate", "--corpus", gen_dir / "corpus",
                       "--out", out, "--seed", 0,
                       "--ablation", "VTP,VTPDG", *TINY_MODEL_FLAGS)
        assert code == 0
        table = (out / "reports/ablation-table.txt").read_text()
        assert "VTP" in table and "VTPDG" in table

    def test_requires_params_without_ablation(self, gen_dir, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run_cli("evaluate", "--corpus", gen_dir / "corpus",
                    "--out", tmp_path / "x")
        assert exc.value.code == 2


class TestStats:
    def test_counts_match_manifest(self, gen_dir, tmp_path, capsys):
        out = tmp_path / "stats"
        assert run_cli("stats", "--corpus", gen_dir / "corpus",
                       "--out", out) == 0
        lines = (out / "reports/stats.txt").read_text().splitlines()
        counts = {}
        for line in lines:
            parts = line.split("\t")
            if parts[0] == "counts" and parts[2] == "documents":
                counts[parts[1]] = int(parts[3])
        manifest = json.loads((gen_dir / "corpus/manifest.json").read_text())
        assert counts == manifest["counts"]

    def test_relation_ratios_sum_to_100(self, gen_dir, tmp_path):
        out = tmp_path / "stats2"
        assert run_cli("stats", "--corpus", gen_dir / "corpus",
                       "--out", out) == 0
        by_intent = {}
        for line in (out / "reports/stats.txt").read_text().splitlines():
            parts = line.split("\t")
            if parts[0] == "relation":
                h = float(parts[2].split("=")[1])
                v = float(parts[3].split("=")[1])
                by_intent[parts[1]] = h + v
        assert by_intent
        for total in by_intent.values():
            assert total == pytest.approx(100.0)

    def test_agreement_identity(self, gen_dir, tmp_path):
        out = tmp_path / "agree"
        train_file = gen_dir / "corpus/train.json"
        assert run_cli("stats", "--out", out,
                       "--agreement", train_file, train_file) == 0
        text = (out / "reports/agreement.txt").read_text()
        assert "cohen_kappa\t1.000000" in text
        assert "hamming_loss\t0.000000" in text


class TestPredict:
    def test_known_intent_finds_value(self, gen_dir, trained_dir, capsys):
        code = run_cli("predict",
                       "--params", trained_dir / "params/model.fpnt",
                       "--document", gen_dir / "corpus/train.json",
                       "--index", 0, "--key", "com_nm")
        assert code == 0
        out = capsys.readouterr().out.strip()
        assert out == "NO_VALUE" or out.startswith("segment ")

    def test_unknown_intent_usage_error(self, gen_dir, trained_dir, capsys):
        with pytest.raises(SystemExit) as exc:
            run_cli("predict",
                    "--params", trained_dir / "params/model.fpnt",
                    "--document", gen_dir / "corpus/train.json",
                    "--key", "bogus_intent")
        assert exc.value.code == 2
        err = capsys.readouterr().err
        for intent in KeyIntent:
            assert intent.value in err

    def test_malformed_document_exits_2(self, trained_dir, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"documents": [{"page_w": -5}]}')
        code = run_cli("predict",
                       "--params", trained_dir / "params/model.fpnt",
                       "--document", bad, "--key", "com_nm")
        assert code == 2
