"""End-to-end CLI lifecycle: exit codes, config-file precedence, manifests,
determinism, and a tiny gen-data -> pretrain -> finetune -> translate ->
evaluate -> inspect-cache -> sweep run."""

import json
from pathlib import Path

import pytest

from cachenmt.cli import run


GEN_ARGS = ["gen-data", "--train-docs", "6", "--tune-docs", "2",
            "--test-docs", "3", "--src-vocab", "26", "--tgt-vocab", "34",
            "--sentences-per-doc", "3", "--len-min", "2", "--len-max", "4",
            "--ambiguous-types", "3", "--seed", "0"]


def gen_data(out_dir) -> Path:
    out = Path(out_dir)
    assert run(GEN_ARGS + ["--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One shared tiny run: data, base checkpoint, tuned checkpoint."""
    root = tmp_path_factory.mktemp("cli")
    data = gen_data(root / "data")
    base = root / "base.ckpt"
    assert run(["pretrain", "--data", str(data / "train.txt"),
                "--out", str(base), "--epochs", "40", "--lr", "1.0",
                "--dims", "8", "--emb-dim", "6",
                "--vocab-size", "64", "--max-sentence-len", "20",
                "--cache-size", "5", "--beam", "2", "--seed", "0"]) == 0
    tuned = root / "tuned.ckpt"
    assert run(["finetune", "--data", str(data / "train.txt"),
                "--model", str(base), "--out", str(tuned),
                "--fusion", "deep", "--cache-size", "5",
                "--epochs", "1", "--seed", "0"]) == 0
    return root, data, base, tuned


class TestExitCodes:
    def test_unknown_flag_is_usage_error(self, capsys):
        assert run(["gen-data", "--no-such-flag"]) == 1

    def test_no_subcommand_is_usage_error(self):
        assert run([]) == 1

    def test_missing_required_flag_is_usage_error(self):
        assert run(["pretrain"]) == 1

    def test_missing_file_is_data_error(self):
        assert run(["pretrain", "--data", "/nonexistent/file.txt"]) == 2

    def test_malformed_corpus_is_data_error(self, tmp_path):
        bad = tmp_path / "bad.txt"
        bad.write_text("no tab separator here\n\n")
        assert run(["pretrain", "--data", str(bad)]) == 2

    def test_bad_choice_is_usage_error(self, pipeline, tmp_path):
        _, data, base, _ = pipeline
        assert run(["translate", "--model", str(base),
                    "--input", str(data / "test.txt"),
                    "--fusion", "sideways"]) == 1


class TestGenData:
    def test_outputs_and_manifest(self, tmp_path):
        out = gen_data(tmp_path / "data")
        for name in ("train.txt", "tune.txt", "test.txt", "lexicon.tsv",
                     "manifest.json"):
            assert (out / name).exists(), name
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["subcommand"] == "gen-data"
        assert manifest["seed"] == 0
        assert str(out / "train.txt") in manifest["outputs"]

    def test_deterministic_across_runs(self, tmp_path):
        a = gen_data(tmp_path / "a")
        b = gen_data(tmp_path / "b")
        assert (a / "train.txt").read_bytes() == (b / "train.txt").read_bytes()
        assert (a / "lexicon.tsv").read_bytes() == (b / "lexicon.tsv").read_bytes()

    def test_seed_changes_output(self, tmp_path):
        a = gen_data(tmp_path / "a")
        out_b = tmp_path / "b"
        assert run(GEN_ARGS[:-2] + ["--seed", "1", "--out", str(out_b)]) == 0
        assert (a / "train.txt").read_bytes() != (out_b / "train.txt").read_bytes()

    def test_config_file_with_flag_override(self, tmp_path):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({
            "train_docs": 2, "tune_docs": 1, "test_docs": 1,
            "src_vocab": 26, "tgt_vocab": 34, "sentences_per_doc": 3,
            "len_min": 2, "len_max": 4, "ambiguous_types": 3, "seed": 5}))
        out = tmp_path / "data"
        assert run(["gen-data", "--config", str(cfg_file), "--seed", "9",
                    "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["seed"] == 9       # flag beats file
        assert manifest["config"]["train_docs"] == 2  # file beats default


class TestTrainingCommands:
    def test_pretrain_artifacts(self, pipeline):
        root, _, base, _ = pipeline
        assert base.exists()
        log = base.with_name(base.name + ".log.jsonl")
        records = [json.loads(l) for l in log.read_text().splitlines()]
        assert len(records) == 40
        assert all(r["pass"] == "pretrain" for r in records)
        manifest = json.loads(
            base.with_name(base.name + ".manifest.json").read_text())
        assert manifest["subcommand"] == "pretrain"

    def test_finetune_artifacts(self, pipeline):
        _, _, _, tuned = pipeline
        assert tuned.exists()
        log = tuned.with_name(tuned.name + ".log.jsonl")
        records = [json.loads(l) for l in log.read_text().splitlines()]
        assert records and records[0]["pass"] == "finetune-deep"

    def test_finetuned_checkpoint_has_gate_parameters(self, pipeline):
        from cachenmt.model import load_checkpoint
        _, _, _, tuned = pipeline
        _, _, _, store, meta = load_checkpoint(tuned)
        assert meta["fusion"] == "deep"
        assert "gamma.U" in store


class TestTranslateEvaluate:
    def test_translate_writes_document_shaped_output(self, pipeline, tmp_path):
        _, data, _, tuned = pipeline
        out = tmp_path / "hyp.txt"
        assert run(["translate", "--model", str(tuned),
                    "--input", str(data / "test.txt"), "--out", str(out),
                    "--fusion", "deep", "--beam", "2", "--max-len", "8"]) == 0
        blocks = out.read_text().strip("\n").split("\n\n")
        assert len(blocks) == 3  # one block per test document

    def test_translate_deterministic(self, pipeline, tmp_path):
        _, data, _, tuned = pipeline
        outs = []
        for name in ("a.txt", "b.txt"):
            out = tmp_path / name
            assert run(["translate", "--model", str(tuned),
                        "--input", str(data / "test.txt"), "--out", str(out),
                        "--fusion", "deep", "--beam", "2",
                        "--max-len", "8"]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_histogram_file_emitted(self, pipeline, tmp_path):
        _, data, _, tuned = pipeline
        out = tmp_path / "hyp.txt"
        hist = tmp_path / "hist.tsv"
        assert run(["translate", "--model", str(tuned),
                    "--input", str(data / "test.txt"), "--out", str(out),
                    "--fusion", "deep", "--beam", "2", "--max-len", "8",
                    "--histogram", str(hist)]) == 0
        masses = [float(l.split("\t")[1])
                  for l in hist.read_text().splitlines()]
        assert sum(masses) == pytest.approx(1.0, abs=1e-6)

    def test_evaluate_emits_metrics(self, pipeline, tmp_path):
        _, data, _, tuned = pipeline
        hyp = tmp_path / "hyp.txt"
        assert run(["translate", "--model", str(tuned),
                    "--input", str(data / "test.txt"), "--out", str(hyp),
                    "--fusion", "deep", "--beam", "2", "--max-len", "8"]) == 0
        out = tmp_path / "metrics.jsonl"
        assert run(["evaluate", "--src", str(data / "test.txt"),
                    "--hyp", str(hyp), "--ref", str(data / "test.txt"),
                    "--lexicon", str(data / "lexicon.tsv"),
                    "--out", str(out)]) == 0
        record = json.loads(out.read_text())
        assert 0.0 <= record["bleu"] <= 1.0
        assert "consistency_rate" in record
        assert "ambiguous_later_accuracy" in record


class TestInspectAndSweep:
    def test_inspect_cache_dump(self, pipeline, tmp_path):
        _, data, _, tuned = pipeline
        out = tmp_path / "dump.jsonl"
        assert run(["inspect-cache", "--model", str(tuned),
                    "--input", str(data / "test.txt"), "--doc-index", "0",
                    "--out", str(out), "--beam", "2", "--max-len", "8"]) == 0
        records = [json.loads(l) for l in out.read_text().splitlines()]
        assert records
        assert all("indicator" in r and "last_touched" in r for r in records)

    def test_inspect_cache_bad_doc_index(self, pipeline, tmp_path):
        _, data, _, tuned = pipeline
        assert run(["inspect-cache", "--model", str(tuned),
                    "--input", str(data / "test.txt"),
                    "--doc-index", "99"]) == 2

    def test_sweep_over_cache_sizes(self, pipeline, tmp_path):
        _, data, _, tuned = pipeline
        out = tmp_path / "sweep.jsonl"
        assert run(["sweep", "--model", str(tuned),
                    "--input", str(data / "test.txt"),
                    "--ref", str(data / "test.txt"),
                    "--lexicon", str(data / "lexicon.tsv"),
                    "--cache-sizes", "0,2,5", "--beam", "2",
                    "--max-len", "8", "--out", str(out)]) == 0
        records = [json.loads(l) for l in out.read_text().splitlines()]
        assert [r["cache_size"] for r in records] == [0, 2, 5]
        assert all("bleu" in r for r in records)
