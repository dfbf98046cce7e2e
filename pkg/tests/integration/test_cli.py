"""This module contains end-to-end tests for the dmlm command-line workflow on a toy treebank."""
import csv
import json
import math

import numpy as np
import pytest

from dmlm.core.config import settings
from dmlm.crud.checkpoint_store import load_checkpoint
from dmlm.crud.dataset_store import load_splits
from dmlm.main import main

from conftest import TOY_SENTENCES, conllu_block

TRAIN_SENTENCES = TOY_SENTENCES + [
    ("the big cats eat food", [2, 3, 4, 0, 4]),
    ("a dog sleeps", [2, 3, 0]),
]
VALID_SENTENCES = [("the dog eats", [2, 3, 0]), ("birds run", [2, 0])]
MODEL_FLAGS = ["--embed-dim", "8", "--hidden-dim", "8", "--num-layers", "1", "--batch-size", "2",
               "--max-epochs", "2", "--seed", "7"]


def _write_conllu(path, sentences):
    path.write_text("".join(conllu_block(text.split(), heads) for text, heads in sentences), encoding="utf-8")
    return path


@pytest.fixture(autouse=True)
def log_to_tmp(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "LOG_FILE_PATH", str(tmp_path / "dmlm.log"))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def dataset(workdir):
    train = _write_conllu(workdir / "train.conllu", TRAIN_SENTENCES)
    valid = _write_conllu(workdir / "valid.conllu", VALID_SENTENCES)
    out = workdir / "toy.dmlm"
    assert main(["prepare", "--conllu", str(train), "--valid-conllu", str(valid), "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def dep_checkpoint(workdir, dataset):
    out = workdir / "dep.ckpt"
    code = main(["train", "--data", str(dataset), "--backbone", "recurrent", "--flavor", "dmlm", "--phase", "dep",
                 "--out", str(out)] + MODEL_FLAGS)
    assert code == 0
    return out


def _log_rows(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


# --- prepare ---

def test_prepare_writes_dataset_and_stats(dataset):
    splits, vocab, _ = load_splits(dataset)
    assert len(splits["train"]) == len(TRAIN_SENTENCES)
    assert len(splits["valid"]) == len(VALID_SENTENCES)
    assert vocab.encode("dog") != vocab.encode("zebra")
    stats = json.loads(dataset.with_name(dataset.name + ".stats.json").read_text())
    assert stats["sentences_kept"] == len(TRAIN_SENTENCES) + len(VALID_SENTENCES)
    assert stats["skipped_too_long"] == 0
    assert stats["mean_target_size"] == pytest.approx(1.0)
    assert {"empty_target_rate", "unk_rate", "splits"} <= set(stats)


def test_prepare_counts_skipped_sentences(tmp_path):
    corpus = _write_conllu(tmp_path / "c.conllu", [("a b c d e f", [0, 1, 2, 3, 4, 5]), ("a b", [0, 1])])
    out = tmp_path / "c.dmlm"
    assert main(["prepare", "--conllu", str(corpus), "--out", str(out), "--max-len", "5"]) == 0
    stats = json.loads((tmp_path / "c.dmlm.stats.json").read_text())
    assert stats["skipped_too_long"] == 1
    assert stats["sentences_kept"] == 1


def test_prepare_missing_file(tmp_path, capsys):
    missing = tmp_path / "nowhere.conllu"
    assert main(["prepare", "--conllu", str(missing), "--out", str(tmp_path / "x.dmlm")]) == 2
    assert str(missing) in capsys.readouterr().err


def test_prepare_malformed_file(tmp_path, capsys):
    bad = tmp_path / "bad.conllu"
    bad.write_text("1\tdog\tdog\n\n", encoding="utf-8")
    assert main(["prepare", "--conllu", str(bad), "--out", str(tmp_path / "x.dmlm")]) == 2
    assert "bad.conllu:1" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, dataset):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"learning_rate": 0.1}), encoding="utf-8")
    assert main(["train", "--config", str(config), "--data", str(dataset), "--out", str(tmp_path / "m.ckpt")]) == 2


# --- train ---

def test_dep_phase_writes_checkpoint_and_log(dep_checkpoint):
    checkpoint = load_checkpoint(dep_checkpoint)
    assert checkpoint.phase == "dep_modeling"
    assert checkpoint.flavor == "dmlm"
    assert checkpoint.vocab[:4] == ["<pad>", "<bos>", "<eos>", "<unk>"]
    rows = _log_rows(dep_checkpoint.with_name(dep_checkpoint.name + ".log.jsonl"))
    assert [r["epoch"] for r in rows] == [0, 1, 2]


def test_finetune_without_init_is_a_contract_violation(tmp_path, dataset):
    code = main(["train", "--data", str(dataset), "--flavor", "dmlm", "--phase", "finetune",
                 "--out", str(tmp_path / "ft.ckpt")] + MODEL_FLAGS)
    assert code == 3


def test_finetune_from_dependency_checkpoint(tmp_path, dataset, dep_checkpoint):
    out, log = tmp_path / "ft.ckpt", tmp_path / "ft.jsonl"
    code = main(["train", "--data", str(dataset), "--phase", "finetune", "--init", str(dep_checkpoint),
                 "--out", str(out), "--log", str(log), "--max-epochs", "1", "--seed", "7"])
    assert code == 0
    rows = _log_rows(log)
    assert rows[0]["epoch"] == 0 and rows[0]["phase"] == "mixture_finetune"
    assert math.isfinite(rows[0]["val_loss"])
    assert load_checkpoint(out).phase == "mixture_finetune"


def test_paired_flavors_log_identical_data_order(tmp_path, dataset):
    logs = {}
    for flavor, phase in (("baseline", "baseline"), ("dmlm", "dep")):
        logs[flavor] = tmp_path / f"{flavor}.jsonl"
        code = main(["train", "--data", str(dataset), "--flavor", flavor, "--phase", phase,
                     "--out", str(tmp_path / f"{flavor}.ckpt"), "--log", str(logs[flavor])] + MODEL_FLAGS)
        assert code == 0
    hashes = {flavor: [r["data_order_hash"] for r in _log_rows(path)] for flavor, path in logs.items()}
    assert hashes["baseline"] == hashes["dmlm"]
    assert all(hashes["dmlm"][1:])


def test_transformer_training(tmp_path, dataset):
    out = tmp_path / "tf.ckpt"
    code = main(["train", "--data", str(dataset), "--backbone", "transformer", "--flavor", "dmlm", "--phase", "dep",
                 "--model-dim", "8", "--num-heads", "2", "--num-layers", "2", "--ffn-dim", "16",
                 "--max-epochs", "1", "--out", str(out)])
    assert code == 0
    assert load_checkpoint(out).model_kind == "transformer"


# --- generate ---

def test_generate_writes_one_line_per_sample(tmp_path, dep_checkpoint):
    out = tmp_path / "samples.txt"
    code = main(["generate", "--ckpt", str(dep_checkpoint), "--n-samples", "3", "--p", "0.9", "--max-len", "6",
                 "--out", str(out)])
    assert code == 0
    assert len(out.read_text().splitlines()) == 3
    report = json.loads((tmp_path / "samples.json").read_text())
    assert report["settings"]["p"] == 0.9
    assert len(report["samples"]) == 3


def test_generate_is_reproducible(tmp_path, dep_checkpoint):
    texts = []
    for name in ("a.txt", "b.txt"):
        main(["generate", "--ckpt", str(dep_checkpoint), "--n-samples", "4", "--seed", "3", "--out",
              str(tmp_path / name)])
        texts.append((tmp_path / name).read_text())
    assert texts[0] == texts[1]


def test_generate_with_prompts(tmp_path, dep_checkpoint):
    prompts = tmp_path / "prompts.txt"
    prompts.write_text("the dog\n", encoding="utf-8")
    out = tmp_path / "cond.txt"
    code = main(["generate", "--ckpt", str(dep_checkpoint), "--prompt-file", str(prompts), "--n-samples", "3",
                 "--out", str(out)])
    assert code == 0
    assert all(line.split()[:2] == ["the", "dog"] for line in out.read_text().splitlines())


def test_generate_warns_about_substituted_prompt_words(tmp_path, dep_checkpoint, caplog):
    prompts = tmp_path / "prompts.txt"
    prompts.write_text("The DOG zebra\n", encoding="utf-8")
    out = tmp_path / "cond.txt"
    code = main(["generate", "--ckpt", str(dep_checkpoint), "--prompt-file", str(prompts), "--n-samples", "2",
                 "--out", str(out)])
    assert code == 0
    warnings = [r.getMessage() for r in caplog.records if r.levelname == "WARNING"]
    assert any("'The'" in m and "'the'" in m for m in warnings)
    assert any("'DOG'" in m and "'dog'" in m for m in warnings)
    assert any("'zebra'" in m and "<unk>" in m for m in warnings)
    assert all(line.split()[:2] == ["the", "dog"] for line in out.read_text().splitlines())


def test_generate_p_sweep(tmp_path, dep_checkpoint):
    out = tmp_path / "sweep.txt"
    code = main(["generate", "--ckpt", str(dep_checkpoint), "--p-sweep", "0.3,0.5,1.0", "--n-samples", "2",
                 "--out", str(out)])
    assert code == 0
    for p in ("0.3", "0.5", "1"):
        assert len((tmp_path / f"sweep.p{p}.txt").read_text().splitlines()) == 2
        assert (tmp_path / f"sweep.p{p}.json").exists()


# --- eval ---

def test_eval_report_has_one_entry_per_metric(tmp_path, dataset, dep_checkpoint):
    samples = tmp_path / "samples.txt"
    samples.write_text("the dog runs\nthe cats sleep\na big dog eats food\n", encoding="utf-8")
    out = tmp_path / "report.json"
    code = main(["eval", "--ckpt", str(dep_checkpoint), "--data", str(dataset), "--samples", str(samples),
                 "--refs", str(samples), "--metrics", "ppl,lm,bleu,distinct,self-bleu", "--out", str(out)])
    assert code == 0
    metrics = json.loads(out.read_text())["metrics"]
    assert set(metrics) == {"ppl", "lm", "bleu-1", "bleu-2", "distinct-2", "distinct-3", "self-bleu-2",
                            "self-bleu-3"}
    assert metrics["bleu-1"] == pytest.approx(1.0)
    assert metrics["ppl"] > 1.0


def test_eval_on_empty_samples(tmp_path, dep_checkpoint):
    samples = tmp_path / "empty.txt"
    samples.write_text("\n", encoding="utf-8")
    code = main(["eval", "--ckpt", str(dep_checkpoint), "--samples", str(samples), "--metrics", "distinct",
                 "--out", str(tmp_path / "r.json")])
    assert code == 2


def test_eval_rlm_needs_enough_samples(tmp_path, dataset, dep_checkpoint):
    samples = tmp_path / "few.txt"
    samples.write_text("the dog runs\n", encoding="utf-8")
    code = main(["eval", "--ckpt", str(dep_checkpoint), "--data", str(dataset), "--samples", str(samples),
                 "--metrics", "rlm", "--out", str(tmp_path / "r.json")])
    assert code == 2


# --- attn-dump ---

def test_attention_dump_is_lower_triangular(tmp_path, dep_checkpoint):
    out = tmp_path / "attn.csv"
    code = main(["attn-dump", "--ckpt", str(dep_checkpoint), "--sentence", "the dog runs", "--out", str(out)])
    assert code == 0
    rows = list(csv.reader(out.read_text().splitlines()))
    assert rows[0] == ["token", "<bos>", "the", "dog"]
    assert [r[0] for r in rows[1:]] == ["the", "dog", "runs"]
    weights = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    np.testing.assert_allclose(weights[0], [1.0, 0.0, 0.0])
    assert np.all(weights[np.triu_indices(3, k=1)] == 0.0)
    np.testing.assert_allclose(weights.sum(axis=1), np.ones(3), atol=1e-5)


def test_attention_dump_unknown_word_becomes_unk(tmp_path, dep_checkpoint, caplog):
    out = tmp_path / "attn.csv"
    code = main(["attn-dump", "--ckpt", str(dep_checkpoint), "--sentence", "the zebra runs", "--out", str(out)])
    assert code == 0
    assert "zebra" in caplog.text
    assert len(out.read_text().splitlines()) == 4
