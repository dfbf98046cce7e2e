"""
Objectives, optimizer loop and gradient verification for the two-phase
regime (dependency modeling, then mixture finetuning) and the MLE baseline.
"""
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from dmlm.core import numerics as nx
from dmlm.core.errors import ConfigError, EmptyBatch, NonFiniteLoss, PhaseOrderViolation
from dmlm.core.gradcheck import finite_difference_check
from dmlm.core.numerics import Tape, Tensor, precision
from dmlm.crud.checkpoint_store import Checkpoint
from dmlm.models.base import LanguageModel
from dmlm.models.mixture import EPSILON, sequence_log_probs
from dmlm.schemas.corpus import TargetedSequence
from dmlm.schemas.training import EpochLog, TrainConfig

logger = logging.getLogger(__name__)

GRADCHECK_TOLERANCE = 1e-4


# --- objectives ---

def _check_batch(batch: Sequence[TargetedSequence]) -> None:
    if not batch:
        raise EmptyBatch("loss requested on an empty batch")


def _negative_mean(pieces: List[Tensor], dtype) -> Tensor:
    pieces = [p for p in pieces if p.size]
    if not pieces:
        return nx.constant(np.asarray(0.0), dtype=dtype)
    return nx.scale(nx.reduce_mean(nx.concat(pieces, axis=0)), -1.0)


def _model_dtype(model: LanguageModel):
    return next(iter(model.params.values())).values.dtype


def dependency_modeling_loss(model: LanguageModel, batch: Sequence[TargetedSequence]) -> Tensor:
    """Mean over every (position, target) pair of -log d_j(z); empty target sets add nothing."""
    _check_batch(batch)
    pieces = []
    for seq in batch:
        rows = [j for j, z in enumerate(seq.targets) for _ in z]
        if not rows:
            continue
        cols = [t for z in seq.targets for t in z]
        hidden = model.forward(seq.ids[:-1]).hidden
        D = model.dep_distributions(hidden)
        pieces.append(nx.log(nx.add(nx.pick(D, rows, cols), EPSILON)))
    return _negative_mean(pieces, _model_dtype(model))


def mixture_lm_loss(model: LanguageModel, batch: Sequence[TargetedSequence], window: int = 64) -> Tensor:
    """Mean next-token NLL under the attention-weighted mixture."""
    _check_batch(batch)
    return _negative_mean([sequence_log_probs(model, seq.ids, window) for seq in batch], _model_dtype(model))


def baseline_lm_loss(model: LanguageModel, batch: Sequence[TargetedSequence]) -> Tensor:
    """Mean next-token NLL with the output head used directly as the LM head."""
    _check_batch(batch)
    pieces = []
    for seq in batch:
        ids = model.check_ids(seq.ids)
        D = model.dep_distributions(model.forward(ids[:-1]).hidden)
        pieces.append(nx.log(nx.add(nx.pick(D, np.arange(len(ids) - 1), ids[1:]), EPSILON)))
    return _negative_mean(pieces, _model_dtype(model))


def phase_loss(phase: str, model: LanguageModel, batch: Sequence[TargetedSequence], window: int = 64) -> Tensor:
    if phase == "dep_modeling":
        return dependency_modeling_loss(model, batch)
    if phase == "mixture_finetune":
        return mixture_lm_loss(model, batch, window)
    if phase == "baseline":
        return baseline_lm_loss(model, batch)
    raise ConfigError(f"unknown phase {phase!r}")


def evaluate_loss(model: LanguageModel, seqs: Sequence[TargetedSequence], phase: str, window: int = 64,
                  batch_size: int = 64) -> float:
    """Term-weighted mean of the phase objective, dropout off, no tape."""
    was_training = model.training
    model.eval()
    try:
        total, terms = 0.0, 0
        for start in range(0, len(seqs), batch_size):
            batch = seqs[start:start + batch_size]
            n = _term_count(phase, batch)
            if n:
                total += phase_loss(phase, model, batch, window).item() * n
                terms += n
        return total / terms if terms else 0.0
    finally:
        model.training = was_training


def _term_count(phase: str, batch: Sequence[TargetedSequence]) -> int:
    if phase == "dep_modeling":
        return sum(seq.num_target_items for seq in batch)
    return sum(len(seq.ids) - 1 for seq in batch)


# --- optimizer ---

def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm. Returns the pre-clip norm."""
    total = math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params if p.grad is not None))
    if total > max_norm:
        factor = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad *= p.grad.dtype.type(factor)
    return total


class Adam:
    """Adam with L2 weight decay folded into the gradient."""

    def __init__(self, params: Dict[str, Tensor], lr: float, beta1: float = 0.9, beta2: float = 0.98,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps, self.weight_decay = lr, beta1, beta2, eps, weight_decay
        self.t = 0
        self.m = {name: np.zeros_like(p.values) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.values) for name, p in params.items()}

    def step(self) -> None:
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.values if self.weight_decay else p.grad
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            update = self.lr * (self.m[name] / bias1) / (np.sqrt(self.v[name] / bias2) + self.eps)
            p.values = (p.values - update).astype(p.values.dtype, copy=False)


# --- training loop ---

@dataclass
class TrainingResult:
    checkpoint: Checkpoint
    log: List[EpochLog] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False


def data_rng(seed: int) -> np.random.Generator:
    """Shuffling stream; independent of model flavor so paired runs see the same order."""
    return np.random.default_rng(np.random.SeedSequence([seed, 2]))


def order_hash(order: np.ndarray) -> str:
    return hashlib.sha256(np.asarray(order, dtype="<u4").tobytes()).hexdigest()[:16]


def check_phase_order(config: TrainConfig, model: LanguageModel, init_phase: Optional[str]) -> None:
    if config.phase == "mixture_finetune":
        if model.flavor != "dmlm":
            raise ConfigError("mixture finetuning needs a dmlm-flavor model")
        if init_phase != "dep_modeling" and not config.allow_from_scratch:
            raise PhaseOrderViolation(
                "mixture_finetune must start from a dep_modeling checkpoint "
                f"(got {init_phase or 'no checkpoint'}); pass the override flag to train from scratch")


def _append_log(path: Optional[Path], row: EpochLog) -> None:
    logger.info(f"[{row.phase}] epoch {row.epoch}: train_loss={row.train_loss} val_loss={row.val_loss:.4f} "
                f"({row.wall_time:.2f}s)")
    if path is not None:
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(row.model_dump()) + "\n")


def _param_diagnostics(model: LanguageModel) -> str:
    parts = []
    for name, p in model.params.items():
        bad = int(np.size(p.values) - np.count_nonzero(np.isfinite(p.values)))
        parts.append(f"{name}: |w|={float(np.linalg.norm(p.values)):.3e} nonfinite={bad}")
    return "; ".join(parts)


def run_training(config: TrainConfig, train_seqs: Sequence[TargetedSequence],
                 valid_seqs: Sequence[TargetedSequence], model: LanguageModel,
                 init_phase: Optional[str] = None, log_path=None, vocab: Optional[list] = None,
                 on_epoch: Optional[Callable[[EpochLog], None]] = None) -> TrainingResult:
    """
    Train `model` in place on the configured phase and return the checkpoint of
    the epoch with the lowest validation loss (the model is left holding it).
    """
    check_phase_order(config, model, init_phase)
    if not train_seqs:
        raise EmptyBatch("no training sequences")
    valid_seqs = valid_seqs or train_seqs
    log_path = Path(log_path) if log_path else None
    phase, window = config.phase, config.context_window
    lr = config.resolved_lr(model.kind)
    optimizer = Adam(model.params, lr=lr, beta1=config.beta1, beta2=config.beta2,
                     eps=config.adam_eps, weight_decay=config.weight_decay)
    rng = data_rng(config.seed)
    model.dropout_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    logger.info(f"Training {model.kind}/{model.flavor} phase={phase} lr={lr} on {len(train_seqs)} sequences "
                f"({len(valid_seqs)} validation), {model.num_parameters()} parameters")

    history: List[EpochLog] = []

    def record(row: EpochLog) -> None:
        history.append(row)
        _append_log(log_path, row)
        if on_epoch:
            on_epoch(row)

    started = time.perf_counter()
    record(EpochLog(phase=phase, epoch=0, val_loss=evaluate_loss(model, valid_seqs, phase, window),
                    wall_time=time.perf_counter() - started))

    best_val, best_epoch, best_arrays, best_rng = math.inf, 0, model.state_arrays(), None
    stale, stopped_early = 0, False
    for epoch in range(1, config.max_epochs + 1):
        epoch_start = time.perf_counter()
        order = rng.permutation(len(train_seqs))
        model.train()
        losses = []
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            batch = [train_seqs[i] for i in order[start:start + config.batch_size]]
            with Tape() as tape:
                loss = phase_loss(phase, model, batch, window)
            if not nx.all_finite(loss):
                logger.error(f"Non-finite loss at epoch {epoch}, batch {b}: {_param_diagnostics(model)}")
                raise NonFiniteLoss(f"loss became {loss.item()} at epoch {epoch}, batch {b}")
            model.zero_grad()
            tape.backward(loss)
            clip_grad_norm(list(model.parameters()), config.grad_clip_norm)
            optimizer.step()
            losses.append(loss.item())
        model.eval()
        val = evaluate_loss(model, valid_seqs, phase, window)
        record(EpochLog(phase=phase, epoch=epoch, train_loss=float(np.mean(losses)), val_loss=val,
                        wall_time=time.perf_counter() - epoch_start, data_order_hash=order_hash(order)))
        if not math.isfinite(val):
            raise NonFiniteLoss(f"validation loss became {val} at epoch {epoch}: {_param_diagnostics(model)}")

        if val < best_val:
            best_val, best_epoch, best_arrays = val, epoch, model.state_arrays()
            best_rng = {"dropout": model.dropout_rng.bit_generator.state, "data": rng.bit_generator.state}
            stale = 0
        else:
            stale += 1
            if stale >= config.early_stop_patience:
                logger.info(f"Early stop after epoch {epoch}: no validation improvement for {stale} epochs")
                stopped_early = True
                break

    model.load_arrays(best_arrays)
    model.eval()
    checkpoint = Checkpoint.from_model(model, phase=phase, epoch=best_epoch,
                                       val_loss=best_val if math.isfinite(best_val) else None,
                                       rng_state=best_rng, vocab=vocab)
    logger.info(f"Best epoch {best_epoch} (val_loss={best_val:.4f})")
    return TrainingResult(checkpoint=checkpoint, log=history, best_epoch=best_epoch, stopped_early=stopped_early)


# --- gradient verification ---

@dataclass
class GradientCheckReport:
    loss_kind: str
    errors: Dict[str, float]
    grad_norms: Dict[str, float]
    tolerance: float = GRADCHECK_TOLERANCE

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.errors.values())


def gradient_check(model_factory: Callable[[], LanguageModel], loss_kind: str,
                   batch: Sequence[TargetedSequence], window: int = 64) -> GradientCheckReport:
    """
    Finite-difference check of one objective, parameter by parameter, in 64-bit
    mode with dropout disabled. `loss_kind` is a phase name.
    """
    with precision(np.float64):
        model = model_factory().eval()
        errors, norms = {}, {}
        for name in list(model.params):
            original = model.params[name]

            def f(leaf: Tensor, name=name) -> Tensor:
                model.params[name] = leaf
                try:
                    return phase_loss(loss_kind, model, batch, window)
                finally:
                    model.params[name] = original

            errors[name] = finite_difference_check(f, original.values)

        model.zero_grad()
        with Tape() as tape:
            loss = phase_loss(loss_kind, model, batch, window)
        tape.backward(loss)
        norms = {name: float(np.linalg.norm(p.grad)) for name, p in model.params.items()}

    report = GradientCheckReport(loss_kind=loss_kind, errors=errors, grad_norms=norms)
    logger.info(f"Gradient check [{loss_kind}]: max relative error {report.max_error:.2e} "
                f"({'pass' if report.passed else 'FAIL'})")
    return report
