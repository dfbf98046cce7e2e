"""Shared machinery for the language models: parameter tables, init, dropout and the output head."""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, Literal, Optional

import numpy as np

from dmlm.core import numerics as nx
from dmlm.core.errors import ConfigError, IdOutOfRange, ShapeMismatch
from dmlm.core.numerics import Tensor

logger = logging.getLogger(__name__)

Flavor = Literal["baseline", "dmlm"]
FLAVORS = ("baseline", "dmlm")


@dataclass
class BackboneOutput:
    """hidden[j] summarizes ids[0..j]; attn_rows is the transformer's head-averaged attention."""
    hidden: Tensor
    attn_rows: Optional[Tensor] = None


class LanguageModel:
    """
    A backbone plus a softmax output head. With flavor "dmlm" the output head is
    read as the dependency distribution and next-token probabilities come from
    the attention-weighted mixture (see dmlm.models.mixture).
    """
    kind: str = ""

    def __init__(self, config, flavor: Flavor = "baseline", seed: int = 1234):
        if flavor not in FLAVORS:
            raise ConfigError(f"unknown model flavor {flavor!r}; expected one of {FLAVORS}")
        self.config = config
        self.flavor = flavor
        self.seed = seed
        self.training = False
        self.params: Dict[str, Tensor] = {}
        self._init_rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
        self.dropout_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))

    # --- parameter table ---

    def _add(self, name: str, values: np.ndarray) -> Tensor:
        tensor = Tensor(values, requires_grad=True, name=name)
        self.params[name] = tensor
        return tensor

    def _uniform(self, name: str, shape, bound: float = 0.1) -> Tensor:
        return self._add(name, self._init_rng.uniform(-bound, bound, size=shape))

    def _xavier(self, name: str, shape) -> Tensor:
        fan_in, fan_out = shape
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        return self._add(name, self._init_rng.uniform(-bound, bound, size=shape))

    def _zeros(self, name: str, shape) -> Tensor:
        return self._add(name, np.zeros(shape))

    def _init_head(self, width: int, tie: bool) -> None:
        if not tie:
            self._xavier("decoder.weight", (width, self.config.vocab_size))
        self._zeros("decoder.bias", (self.config.vocab_size,))

    def _init_dependency_attention(self) -> None:
        """
        W_q and W_k for the recurrent dmlm flavor; created last so earlier draws
        match the baseline. Both start from the same Xavier draw, so W_q W_k^T is
        positive semi-definite and no position starts out scoring itself below
        an earlier position of equal or smaller norm.
        """
        H = self.config.output_dim
        wq = self._xavier("attention.wq", (H, H))
        self._add("attention.wk", wq.values.copy())

    @property
    def has_dependency_attention(self) -> bool:
        return "attention.wq" in self.params

    def parameters(self) -> Iterable[Tensor]:
        return self.params.values()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {name: p.values.copy() for name, p in self.params.items()}

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        unexpected = set(arrays) - set(self.params)
        if missing or unexpected:
            raise ConfigError(f"parameter names differ: missing {sorted(missing)}, unexpected {sorted(unexpected)}")
        for name, values in arrays.items():
            target = self.params[name]
            if target.shape != values.shape:
                raise ShapeMismatch(f"parameter {name}: expected {target.shape}, got {values.shape}")
            target.values = np.array(values, dtype=target.values.dtype)
            target.zero_grad()

    def train(self) -> "LanguageModel":
        self.training = True
        return self

    def eval(self) -> "LanguageModel":
        self.training = False
        return self

    # --- forward pieces ---

    def check_ids(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 1 or ids.size == 0:
            raise IdOutOfRange(f"expected a non-empty 1-D id sequence, got shape {ids.shape}")
        bad = ids[(ids < 0) | (ids >= self.config.vocab_size)]
        if bad.size:
            raise IdOutOfRange(f"ids {sorted(set(bad.tolist()))} outside vocabulary of size {self.config.vocab_size}")
        return ids

    def dropout(self, x: Tensor, rate: float) -> Tensor:
        if not self.training or rate <= 0.0:
            return x
        keep = (self.dropout_rng.random(x.shape) >= rate).astype(x.values.dtype) / (1.0 - rate)
        return nx.mul(x, nx.constant(keep, dtype=x.values.dtype))

    def output_weight(self) -> Tensor:
        """(width x vocab) projection; the transposed embedding when tied."""
        if "decoder.weight" in self.params:
            return self.params["decoder.weight"]
        return nx.transpose(self.params["embedding.weight"])

    def dep_distributions(self, hidden: Tensor) -> Tensor:
        """Row-wise softmax(h W + b) over the vocabulary."""
        logits = nx.add(nx.matmul(hidden, self.output_weight()),
                        nx.broadcast_rows(self.params["decoder.bias"], hidden.shape[0]))
        return nx.softmax_lastdim(logits)

    def dep_distribution(self, hidden_row: Tensor) -> Tensor:
        """Single-row version of `dep_distributions` for a length-H vector."""
        if hidden_row.values.ndim != 1:
            raise ShapeMismatch(f"dep_distribution expects a vector, got {hidden_row.shape}")
        return self.dep_distributions(hidden_row[None, :])[0]

    def forward(self, ids) -> BackboneOutput:
        raise NotImplementedError

    def initial_state(self):
        raise NotImplementedError

    def step(self, state, token_id: int):
        """Advance one token. Returns (hidden row as a 1 x H tensor, attention row or None, new state)."""
        raise NotImplementedError


def build_model(config, flavor: Flavor = "baseline", seed: int = 1234) -> LanguageModel:
    from dmlm.models.recurrent import RecurrentLM
    from dmlm.models.transformer import TransformerLM

    if config.kind == "recurrent":
        model = RecurrentLM(config, flavor=flavor, seed=seed)
    elif config.kind == "transformer":
        model = TransformerLM(config, flavor=flavor, seed=seed)
    else:
        raise ConfigError(f"unknown backbone {config.kind!r}")
    logger.debug(f"Built {config.kind}/{flavor} model with {model.num_parameters()} parameters")
    return model


def parameter_groups(model: LanguageModel) -> Dict[str, int]:
    """Parameter counts grouped by the name prefix before the first dot (layers keep their index)."""
    groups: Dict[str, int] = {}
    for name, p in model.params.items():
        parts = name.split(".")
        key = ".".join(parts[:2]) if parts[0] in ("lstm", "layers") else parts[0]
        groups[key] = groups.get(key, 0) + p.size
    return groups


def count_parameters(model: LanguageModel) -> int:
    return model.num_parameters()
