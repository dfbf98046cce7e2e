"""
Dependency attention over stored dependency distributions, their convex
mixture, and the stateful decoder that keeps the distributions in a window.
"""
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, List, Optional, Sequence, Union

import numpy as np

from dmlm.core import numerics as nx
from dmlm.core.errors import ConfigError, EmptyBuffer, IdOutOfRange, LengthMismatch
from dmlm.core.numerics import Tensor
from dmlm.models.base import LanguageModel

logger = logging.getLogger(__name__)

EPSILON = 1e-12


class DistributionBuffer:
    """(hidden row, dependency distribution) pairs, oldest evicted first. capacity 0 means unbounded."""

    def __init__(self, capacity: int = 64):
        if capacity < 0:
            raise ConfigError(f"buffer capacity must be >= 0, got {capacity}")
        self.capacity = capacity
        self._entries: deque = deque(maxlen=capacity or None)

    def append(self, hidden: Optional[Tensor], dist: Tensor) -> None:
        self._entries.append((hidden, dist))

    @property
    def hidden(self) -> List[Tensor]:
        return [h for h, _ in self._entries]

    @property
    def dists(self) -> List[Tensor]:
        return [d for _, d in self._entries]

    def __len__(self) -> int:
        return len(self._entries)


def _as_row(v: Tensor) -> Tensor:
    return v[None, :] if v.values.ndim == 1 else v


def _stack(rows: Sequence[Tensor]) -> Tensor:
    return nx.concat([_as_row(r) for r in rows], axis=0)


def dependency_attention(wq: Tensor, wk: Tensor, h_current: Tensor, buffered_hidden: Sequence[Tensor]) -> Tensor:
    """
    softmax over buffered positions of (h W_q) . (h_i W_k) / sqrt(H). The buffer
    must already hold the hidden row of the current position.
    """
    if not buffered_hidden:
        raise EmptyBuffer("dependency attention needs at least one buffered position")
    q = nx.matmul(_as_row(h_current), wq)
    k = nx.matmul(_stack(buffered_hidden), wk)
    H = q.shape[1]
    scores = nx.scale(nx.matmul(q, nx.transpose(k)), 1.0 / math.sqrt(H))
    return nx.softmax_lastdim(scores)[0]


def mix_distributions(a: Tensor, dists: Union[Tensor, Sequence[Tensor]]) -> Tensor:
    """sum_i a_i d_i, in probability space."""
    D = dists if isinstance(dists, Tensor) else _stack(dists)
    if a.values.ndim != 1 or a.shape[0] != D.shape[0]:
        raise LengthMismatch(f"{a.shape[0] if a.values.ndim else 0} attention weights for {D.shape[0]} distributions")
    return nx.matmul(a[None, :], D)[0]


@dataclass
class DecodingState:
    backbone: Any
    buffer: DistributionBuffer
    steps: int = 0
    history: List[int] = field(default_factory=list)


def start_decoding(model: LanguageModel, window: int = 64) -> DecodingState:
    return DecodingState(backbone=model.initial_state(), buffer=DistributionBuffer(window))


def inference_step(model: LanguageModel, state: DecodingState, next_input_id: int):
    """
    Consume one token and return (next-token distribution, state). The state is
    updated in place. The baseline flavor returns the output head directly.
    """
    hidden_row, attn_row, state.backbone = model.step(state.backbone, next_input_id)
    state.steps += 1
    state.history.append(int(next_input_id))
    d_new = model.dep_distributions(hidden_row)[0]
    if model.flavor == "baseline":
        return d_new, state

    if model.has_dependency_attention:
        state.buffer.append(hidden_row, d_new)
        a = dependency_attention(model.params["attention.wq"], model.params["attention.wk"],
                                 hidden_row, state.buffer.hidden)
    else:
        state.buffer.append(None, d_new)
        a = _restrict(attn_row, len(state.buffer))
    return mix_distributions(a, state.buffer.dists), state


def _restrict(attn_row: Tensor, keep: int) -> Tensor:
    """Last `keep` entries of an attention row, renormalized when anything was cut."""
    n = attn_row.shape[0]
    if keep >= n:
        return attn_row
    tail = attn_row[n - keep:]
    return nx.normalize_rows(tail[None, :])[0]


def window_band(m: int, window: int) -> np.ndarray:
    """Boolean m x m matrix, True where column k is visible from row j (j-L < k <= j)."""
    rows = np.arange(m)[:, None]
    cols = np.arange(m)[None, :]
    visible = cols <= rows
    if 0 < window < m:
        visible &= cols > rows - window
    return visible


def mixture_weights(model: LanguageModel, hidden: Tensor, attn_rows: Optional[Tensor], window: int) -> Tensor:
    """Rows of mixing weights a^(t) over positions 0..t for every t, restricted to the window."""
    m = hidden.shape[0]
    visible = window_band(m, window)
    if model.has_dependency_attention:
        q = nx.matmul(hidden, model.params["attention.wq"])
        k = nx.matmul(hidden, model.params["attention.wk"])
        scores = nx.scale(nx.matmul(q, nx.transpose(k)), 1.0 / math.sqrt(q.shape[1]))
        mask = np.where(visible, 0.0, -np.inf).astype(scores.values.dtype)
        return nx.softmax_lastdim(nx.add(scores, nx.constant(mask, dtype=scores.values.dtype)))
    if attn_rows is None:
        raise ConfigError("this model has no dependency attention to mix with")
    if 0 < window < m:
        band = nx.constant(visible.astype(attn_rows.values.dtype), dtype=attn_rows.values.dtype)
        return nx.normalize_rows(nx.mul(attn_rows, band))
    return attn_rows


def next_token_distributions(model: LanguageModel, context_ids, window: int = 64) -> Tensor:
    """Row j is p(. | context_ids[0..j]): the mixture for dmlm, the output head for baseline."""
    out = model.forward(context_ids)
    D = model.dep_distributions(out.hidden)
    if model.flavor == "baseline":
        return D
    A = mixture_weights(model, out.hidden, out.attn_rows, window)
    return nx.matmul(A, D)


def sequence_log_probs(model: LanguageModel, ids, window: int = 64) -> Tensor:
    """log(p(ids[t] | ids[<t]) + eps) for t = 1..n-1, teacher-forced in one pass."""
    ids = model.check_ids(ids)
    if len(ids) < 2:
        raise IdOutOfRange("need at least BOS and one more id to score")
    P = next_token_distributions(model, ids[:-1], window)
    picked = nx.pick(P, np.arange(len(ids) - 1), ids[1:])
    return nx.log(nx.add(picked, EPSILON))


def attention_matrix(model: LanguageModel, context_ids, window: int = 64) -> np.ndarray:
    """Lower-triangular matrix of mixing weights; row t covers context positions 0..t."""
    out = model.forward(context_ids)
    if model.flavor == "baseline" and out.attn_rows is None:
        raise ConfigError("a baseline recurrent model has no attention to export")
    return mixture_weights(model, out.hidden, out.attn_rows, window).numpy().copy()
