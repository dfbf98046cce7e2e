"""Stacked LSTM language model with inter-layer dropout."""
import logging
from typing import List, Tuple

import numpy as np

from dmlm.core import numerics as nx
from dmlm.core.numerics import Tensor
from dmlm.models.base import BackboneOutput, LanguageModel
from dmlm.schemas.model_config import RecurrentConfig

logger = logging.getLogger(__name__)

LayerState = Tuple[Tensor, Tensor]  # (h, c), each 1 x hidden


class RecurrentLM(LanguageModel):
    kind = "recurrent"

    def __init__(self, config: RecurrentConfig, flavor="baseline", seed: int = 1234):
        super().__init__(config, flavor=flavor, seed=seed)
        self._uniform("embedding.weight", (config.vocab_size, config.embed_dim))
        for layer, (in_dim, out_dim) in enumerate(config.layer_sizes()):
            # gate order along the 4*out_dim axis: input, forget, candidate, output
            self._xavier(f"lstm.{layer}.w_ih", (in_dim, 4 * out_dim))
            self._xavier(f"lstm.{layer}.w_hh", (out_dim, 4 * out_dim))
            self._zeros(f"lstm.{layer}.bias", (4 * out_dim,))
        self._init_head(config.output_dim, tie=config.tie_embeddings)
        if flavor == "dmlm":
            self._init_dependency_attention()

    def _cell(self, layer: int, x_proj: Tensor, state: LayerState) -> LayerState:
        """One LSTM step given the precomputed input projection x W_ih + b (1 x 4h)."""
        h_prev, c_prev = state
        n = h_prev.shape[1]
        gates = nx.add(x_proj, nx.matmul(h_prev, self.params[f"lstm.{layer}.w_hh"]))
        i = nx.sigmoid(gates[:, 0:n])
        f = nx.sigmoid(gates[:, n:2 * n])
        g = nx.tanh(gates[:, 2 * n:3 * n])
        o = nx.sigmoid(gates[:, 3 * n:4 * n])
        c = nx.add(nx.mul(f, c_prev), nx.mul(i, g))
        h = nx.mul(o, nx.tanh(c))
        return h, c

    def _project(self, layer: int, x: Tensor) -> Tensor:
        return nx.add(nx.matmul(x, self.params[f"lstm.{layer}.w_ih"]),
                      nx.broadcast_rows(self.params[f"lstm.{layer}.bias"], x.shape[0]))

    def initial_state(self) -> List[LayerState]:
        dtype = self.params["embedding.weight"].values.dtype
        return [(nx.constant(np.zeros((1, out_dim)), dtype=dtype), nx.constant(np.zeros((1, out_dim)), dtype=dtype))
                for _, out_dim in self.config.layer_sizes()]

    def forward(self, ids) -> BackboneOutput:
        ids = self.check_ids(ids)
        rate = self.config.dropout_rate
        x = self.dropout(nx.embedding_gather(self.params["embedding.weight"], ids), rate)
        state = self.initial_state()
        for layer in range(self.config.num_layers):
            x_proj = self._project(layer, x)
            rows = []
            h_c = state[layer]
            for t in range(len(ids)):
                h_c = self._cell(layer, x_proj[t:t + 1], h_c)
                rows.append(h_c[0])
            x = self.dropout(nx.concat(rows, axis=0), rate)
        return BackboneOutput(hidden=x)

    def step(self, state: List[LayerState], token_id: int):
        ids = self.check_ids([token_id])
        rate = self.config.dropout_rate
        x = self.dropout(nx.embedding_gather(self.params["embedding.weight"], ids), rate)
        new_state = []
        for layer in range(self.config.num_layers):
            h, c = self._cell(layer, self._project(layer, x), state[layer])
            new_state.append((h, c))
            x = self.dropout(h, rate)
        return x, None, new_state
