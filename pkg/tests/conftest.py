"""Shared fixtures: the running-example sentence, toy corpora, tiny models and a 64-bit precision scope."""
import sys
import os
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))
import numpy as np
import pytest

from dmlm.core.numerics import precision
from dmlm.models.base import build_model
from dmlm.schemas.corpus import ParsedSentence, Vocab
from dmlm.schemas.model_config import RecurrentConfig, TransformerConfig
from dmlm.services.corpus_service import build_vocab, derive_dependency_targets

STOCKS_WORDS = "red figures on the screen indicate falling stocks".split()
STOCKS_HEADS = [2, 6, 5, 5, 2, 0, 8, 6]

STOCKS_CONLLU = """# text = red figures on the screen indicate falling stocks
1\tred\tred\tADJ\t_\t_\t2\tamod\t_\t_
2\tfigures\tfigure\tNOUN\t_\t_\t6\tnsubj\t_\t_
3\ton\ton\tADP\t_\t_\t5\tcase\t_\t_
4\tthe\tthe\tDET\t_\t_\t5\tdet\t_\t_
5\tscreen\tscreen\tNOUN\t_\t_\t2\tnmod\t_\t_
6\tindicate\tindicate\tVERB\t_\t_\t0\troot\t_\t_
7\tfalling\tfall\tVERB\t_\t_\t8\tamod\t_\t_
8\tstocks\tstock\tNOUN\t_\t_\t6\tobj\t_\t_

"""

TOY_SENTENCES = [
    ("the dog runs", [2, 3, 0]),
    ("the cats sleep", [2, 3, 0]),
    ("a big dog eats food", [3, 3, 4, 0, 4]),
    ("birds sing", [2, 0]),
]


def random_heads(rng: np.random.Generator, T: int) -> list:
    """A uniformly ordered random single-rooted tree over positions 1..T."""
    order = rng.permutation(T) + 1
    heads = [0] * T
    for k, node in enumerate(order[1:], start=1):
        heads[node - 1] = int(order[rng.integers(0, k)])
    return heads


def conllu_block(words, heads) -> str:
    lines = [f"{i}\t{w}\t{w}\tX\t_\t_\t{h}\tdep\t_\t_" for i, (w, h) in enumerate(zip(words, heads), start=1)]
    return "\n".join(lines) + "\n\n"


@pytest.fixture
def stocks_sentence():
    return ParsedSentence.from_heads(STOCKS_WORDS, STOCKS_HEADS)


@pytest.fixture
def stocks_vocab(stocks_sentence):
    return build_vocab([stocks_sentence])


@pytest.fixture
def toy_sentences():
    return [ParsedSentence.from_heads(text.split(), heads) for text, heads in TOY_SENTENCES]


@pytest.fixture
def toy_vocab(toy_sentences):
    return build_vocab(toy_sentences)


@pytest.fixture
def toy_sequences(toy_sentences, toy_vocab):
    return [derive_dependency_targets(s, toy_vocab) for s in toy_sentences]


@pytest.fixture
def float64():
    with precision(np.float64):
        yield


def tiny_recurrent(vocab_size: int = 12, flavor: str = "dmlm", seed: int = 0, dim: int = 6, layers: int = 1):
    config = RecurrentConfig(vocab_size=vocab_size, embed_dim=dim, hidden_dim=dim, num_layers=layers,
                             dropout_rate=0.0)
    return build_model(config, flavor=flavor, seed=seed)


def tiny_transformer(vocab_size: int = 12, flavor: str = "dmlm", seed: int = 0, dim: int = 8, layers: int = 2):
    config = TransformerConfig(vocab_size=vocab_size, model_dim=dim, num_heads=2, num_layers=layers,
                               ffn_dim=2 * dim, dropout_rate=0.0, max_len=16)
    return build_model(config, flavor=flavor, seed=seed)


def zero_backbone(model):
    """Zero every parameter except the output bias, so the head emits softmax(bias) everywhere."""
    for name, p in model.params.items():
        if name != "decoder.bias":
            p.values[...] = 0.0
    return model


def uniform_model(vocab_size: int, flavor: str = "dmlm", kind: str = "recurrent"):
    factory = tiny_transformer if kind == "transformer" else tiny_recurrent
    model = zero_backbone(factory(vocab_size=vocab_size, flavor=flavor))
    model.params["decoder.bias"].values[...] = 0.0
    return model


@pytest.fixture
def make_recurrent():
    return tiny_recurrent


@pytest.fixture
def make_transformer():
    return tiny_transformer


@pytest.fixture
def make_uniform():
    return uniform_model


@pytest.fixture
def make_random_heads():
    return random_heads


@pytest.fixture
def make_conllu():
    return conllu_block


@pytest.fixture
def zeroed():
    return zero_backbone
