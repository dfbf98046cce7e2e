"""Causal pre-LN transformer language model with learned absolute positions."""
import logging
import math

import numpy as np

from dmlm.core import numerics as nx
from dmlm.core.errors import IdOutOfRange
from dmlm.core.numerics import Tensor
from dmlm.models.base import BackboneOutput, LanguageModel
from dmlm.schemas.model_config import TransformerConfig

logger = logging.getLogger(__name__)


def causal_mask(n: int, dtype) -> np.ndarray:
    """0 on and below the diagonal, -inf strictly above."""
    mask = np.zeros((n, n), dtype=dtype)
    mask[np.triu_indices(n, k=1)] = -np.inf
    return mask


class TransformerLM(LanguageModel):
    kind = "transformer"

    def __init__(self, config: TransformerConfig, flavor="baseline", seed: int = 1234):
        super().__init__(config, flavor=flavor, seed=seed)
        D, F = config.model_dim, config.ffn_dim
        self._uniform("embedding.weight", (config.vocab_size, D))
        self._uniform("position.weight", (config.max_len, D))
        for layer in range(config.num_layers):
            for proj in ("wq", "wk", "wv", "wo"):
                self._xavier(f"layers.{layer}.attn.{proj}", (D, D))
            self._zeros(f"layers.{layer}.attn.bo", (D,))
            self._xavier(f"layers.{layer}.ffn.w1", (D, F))
            self._zeros(f"layers.{layer}.ffn.b1", (F,))
            self._xavier(f"layers.{layer}.ffn.w2", (F, D))
            self._zeros(f"layers.{layer}.ffn.b2", (D,))
        self._init_head(D, tie=True)
        # the dmlm flavor reuses the backbone's own attention: no extra parameters

    def _linear(self, x: Tensor, weight: str, bias: str = None) -> Tensor:
        out = nx.matmul(x, self.params[weight])
        if bias is not None:
            out = nx.add(out, nx.broadcast_rows(self.params[bias], x.shape[0]))
        return out

    def _self_attention(self, layer: int, x: Tensor, mask: Tensor):
        cfg = self.config
        prefix = f"layers.{layer}.attn"
        q = self._linear(x, f"{prefix}.wq")
        k = self._linear(x, f"{prefix}.wk")
        v = self._linear(x, f"{prefix}.wv")
        dh = cfg.head_dim
        heads, probs = [], []
        for head in range(cfg.num_heads):
            cols = slice(head * dh, (head + 1) * dh)
            scores = nx.scale(nx.matmul(q[:, cols], nx.transpose(k[:, cols])), 1.0 / math.sqrt(dh))
            p = nx.softmax_lastdim(nx.add(scores, mask))
            probs.append(p)
            heads.append(nx.matmul(p, v[:, cols]))
        out = self._linear(nx.concat(heads, axis=1), f"{prefix}.wo", f"{prefix}.bo")
        mean_probs = probs[0]
        for p in probs[1:]:
            mean_probs = nx.add(mean_probs, p)
        return out, nx.scale(mean_probs, 1.0 / cfg.num_heads)

    def forward(self, ids) -> BackboneOutput:
        ids = self.check_ids(ids)
        cfg = self.config
        n = len(ids)
        if n > cfg.max_len:
            raise IdOutOfRange(f"sequence length {n} exceeds the position table ({cfg.max_len})")
        rate = cfg.dropout_rate
        x = nx.add(nx.embedding_gather(self.params["embedding.weight"], ids),
                   nx.embedding_gather(self.params["position.weight"], np.arange(n)))
        x = self.dropout(x, rate)
        mask = nx.constant(causal_mask(n, x.values.dtype))
        attn_rows = None
        for layer in range(cfg.num_layers):
            attn_out, mean_probs = self._self_attention(layer, nx.layer_norm(x), mask)
            if layer + 1 == cfg.attention_source_layer:
                attn_rows = mean_probs
            x = nx.add(x, self.dropout(attn_out, rate))
            prefix = f"layers.{layer}.ffn"
            ffn = self._linear(nx.relu(self._linear(nx.layer_norm(x), f"{prefix}.w1", f"{prefix}.b1")),
                               f"{prefix}.w2", f"{prefix}.b2")
            x = nx.add(x, self.dropout(ffn, rate))
        return BackboneOutput(hidden=nx.layer_norm(x), attn_rows=attn_rows)

    def initial_state(self) -> list:
        return []

    def step(self, state: list, token_id: int):
        """Re-encodes the whole prefix; the state is the list of ids consumed so far."""
        prefix = list(state) + [int(token_id)]
        out = self.forward(prefix)
        last = len(prefix) - 1
        return out.hidden[last:last + 1], out.attn_rows[last], prefix
