# tests/unit/test_stores.py
import numpy as np
import pytest

from dmlm.core.errors import ChecksumMismatch, IoError, VersionMismatch
from dmlm.crud import files
from dmlm.crud.checkpoint_store import Checkpoint, load_checkpoint, save_checkpoint
from dmlm.crud.dataset_store import deserialize_dataset, load_splits, serialize_dataset
from dmlm.services.corpus_service import build_vocab, derive_dependency_targets, parse_conllu
from dmlm.services.synthetic_service import agreement_corpus

IDS = [1, 5, 7, 4, 9, 2]


# --- dataset files ---

def test_dataset_round_trip(tmp_path, toy_sequences, toy_vocab):
    path = tmp_path / "toy.dmlm"
    header = serialize_dataset(toy_sequences, toy_vocab, path, config={"max_len": 64})
    seqs, vocab = deserialize_dataset(path)
    assert seqs == toy_sequences
    assert vocab == toy_vocab
    assert header["counts"]["sequences"] == 4
    assert header["counts"]["target_items"] == sum(s.num_target_items for s in toy_sequences)
    assert header["config"] == {"max_len": 64}


def test_splits_round_trip(tmp_path, toy_sequences, toy_vocab):
    path = tmp_path / "toy.dmlm"
    serialize_dataset(toy_sequences, toy_vocab, path, split_sizes={"train": 2, "valid": 1, "test": 1})
    splits, _, header = load_splits(path)
    assert splits["train"] == toy_sequences[:2]
    assert splits["valid"] == toy_sequences[2:3]
    assert splits["test"] == toy_sequences[3:]
    assert header["counts"]["splits"] == {"train": 2, "valid": 1, "test": 1}


def test_split_sizes_must_add_up(tmp_path, toy_sequences, toy_vocab):
    with pytest.raises(ValueError):
        serialize_dataset(toy_sequences, toy_vocab, tmp_path / "x.dmlm", split_sizes={"train": 1})


def test_synthetic_corpus_counts_survive_a_round_trip(tmp_path):
    sentences = parse_conllu(agreement_corpus(1000, seed=3))
    vocab = build_vocab(sentences)
    seqs = [derive_dependency_targets(s, vocab) for s in sentences]
    path = tmp_path / "agree.dmlm"
    header = serialize_dataset(seqs, vocab, path)
    loaded, _ = deserialize_dataset(path)
    assert len(loaded) == 1000
    assert header["counts"]["ids"] == sum(len(s) + 2 for s in sentences)
    assert header["counts"]["target_items"] == sum(len(s) + 1 for s in sentences)
    assert loaded == seqs


def test_flipped_byte_fails_checksum(tmp_path, toy_sequences, toy_vocab):
    path = tmp_path / "toy.dmlm"
    serialize_dataset(toy_sequences, toy_vocab, path)
    data = bytearray(path.read_bytes())
    data[-10] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(ChecksumMismatch):
        deserialize_dataset(path)


def test_wrong_version_or_magic(tmp_path, toy_sequences, toy_vocab):
    path = tmp_path / "toy.dmlm"
    serialize_dataset(toy_sequences, toy_vocab, path)
    data = bytearray(path.read_bytes())
    data[4] = 9
    path.write_bytes(bytes(data))
    with pytest.raises(VersionMismatch):
        deserialize_dataset(path)
    path.write_bytes(b"NOPE" + bytes(data[4:]))
    with pytest.raises(VersionMismatch):
        deserialize_dataset(path)


def test_dataset_file_is_not_a_checkpoint(tmp_path, toy_sequences, toy_vocab):
    path = tmp_path / "toy.dmlm"
    serialize_dataset(toy_sequences, toy_vocab, path)
    with pytest.raises(VersionMismatch):
        load_checkpoint(path)


def test_missing_dataset_file(tmp_path):
    with pytest.raises(IoError):
        deserialize_dataset(tmp_path / "absent.dmlm")


# --- checkpoints ---

@pytest.mark.parametrize("kind", ["recurrent", "transformer"])
def test_checkpoint_reload_is_bit_identical(kind, tmp_path, make_recurrent, make_transformer):
    model = (make_transformer if kind == "transformer" else make_recurrent)()
    path = tmp_path / "model.ckpt"
    save_checkpoint(Checkpoint.from_model(model, phase="dep_modeling", epoch=3, val_loss=1.5,
                                          vocab=["<pad>", "<bos>", "<eos>", "<unk>"]), path)
    checkpoint = load_checkpoint(path)
    restored = checkpoint.build()
    assert checkpoint.phase == "dep_modeling" and checkpoint.epoch == 3 and checkpoint.val_loss == 1.5
    assert checkpoint.parameter_count == model.num_parameters()
    assert restored.flavor == model.flavor and restored.kind == model.kind
    np.testing.assert_array_equal(restored.forward(IDS).hidden.numpy(), model.forward(IDS).hidden.numpy())


def test_checkpoint_restores_dropout_stream(tmp_path, make_recurrent):
    model = make_recurrent()
    model.dropout_rng.random(5)
    path = tmp_path / "model.ckpt"
    save_checkpoint(Checkpoint.from_model(model), path)
    restored = load_checkpoint(path).build()
    assert restored.dropout_rng.random() == model.dropout_rng.random()


def test_truncated_checkpoint(tmp_path, make_recurrent):
    path = tmp_path / "model.ckpt"
    save_checkpoint(Checkpoint.from_model(make_recurrent()), path)
    path.write_bytes(path.read_bytes()[:-20])
    with pytest.raises((ChecksumMismatch, VersionMismatch)):
        load_checkpoint(path)


# --- atomic writes ---

def test_transient_write_error_is_retried(mocker, tmp_path):
    real_replace = files.os.replace
    calls = []

    def flaky(src, dst):
        calls.append(dst)
        if len(calls) == 1:
            raise BlockingIOError("busy")
        return real_replace(src, dst)

    mocker.patch("dmlm.crud.files.os.replace", side_effect=flaky)
    files.write_text(tmp_path / "out.txt", "hello")
    assert len(calls) == 2
    assert (tmp_path / "out.txt").read_text() == "hello"


def test_persistent_write_error_becomes_io_error(mocker, tmp_path):
    mocker.patch("dmlm.crud.files.os.replace", side_effect=BlockingIOError("busy"))
    mock_logger = mocker.patch.object(files, "logger")
    with pytest.raises(IoError):
        files.write_text(tmp_path / "out.txt", "hello")
    assert files.os.replace.call_count == 3
    mock_logger.error.assert_called_once()


def test_write_creates_parent_directories(tmp_path):
    target = tmp_path / "a" / "b" / "c.txt"
    files.write_text(target, "x")
    assert target.read_text() == "x"
