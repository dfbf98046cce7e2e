"""Automatic evaluation: perplexity, BLEU, Self-BLEU, Distinct-n, LM and RLM scores."""
import logging
import math
from collections import Counter
from fractions import Fraction
from typing import Dict, Hashable, List, Optional, Sequence

import numpy as np
from nltk.translate.bleu_score import SmoothingFunction
from nltk.translate.bleu_score import corpus_bleu as nltk_corpus_bleu
from nltk.util import ngrams as nltk_ngrams

from dmlm.core.config import settings
from dmlm.core.errors import (
    ConfigError, EmptyCorpus, EmptySamples, InsufficientSamples, LengthMismatch, NoNgrams, TooFewSamples,
)
from dmlm.models.base import LanguageModel, build_model
from dmlm.models.mixture import sequence_log_probs
from dmlm.schemas.corpus import BOS, EOS, TargetedSequence
from dmlm.schemas.training import TrainConfig
from dmlm.services.training_service import evaluate_loss, run_training

logger = logging.getLogger(__name__)

Tokens = Sequence[Hashable]


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(nltk_ngrams(tokens, n))


def distinct_n(samples: Sequence[Tokens], n: int) -> float:
    """Unique n-grams over total n-grams, pooled across samples."""
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    pooled = Counter()
    for sample in samples:
        pooled.update(ngrams(sample, n))
    total = sum(pooled.values())
    if total == 0:
        raise NoNgrams(f"no sample has {n} or more tokens")
    return len(pooled) / total


class AddOneSmoothing(SmoothingFunction):
    def add_one_on_zero_higher_orders(self, p_n, *args, **kwargs):
        """A zero numerator for n >= 2 becomes 1 / (total + 1); unigram precision stays raw."""
        return [Fraction(1, p.denominator + 1) if i and p.numerator == 0 else p for i, p in enumerate(p_n)]


_SMOOTHING = AddOneSmoothing().add_one_on_zero_higher_orders


def corpus_bleu(hyps: Sequence[Tokens], refs: Sequence[Sequence[Tokens]], max_n: int = 4) -> float:
    """
    Corpus BLEU (nltk) with uniform weights over n = 1..max_n, clipped counts and
    a brevity penalty against the closest reference length.
    """
    if len(hyps) != len(refs):
        raise LengthMismatch(f"{len(hyps)} hypotheses but {len(refs)} reference sets")
    if max_n < 1:
        raise ConfigError(f"max_n must be >= 1, got {max_n}")
    if any(not ref_set for ref_set in refs):
        raise LengthMismatch("every hypothesis needs at least one reference")
    if sum(len(h) for h in hyps) == 0:
        return 0.0
    weights = (1.0 / max_n,) * max_n
    return float(nltk_corpus_bleu([list(r) for r in refs], list(hyps), weights=weights, smoothing_function=_SMOOTHING))


def self_bleu(samples: Sequence[Tokens], max_n: int = 4) -> float:
    """Mean BLEU of each sample against all the others."""
    if len(samples) < 2:
        raise TooFewSamples(f"self-BLEU needs at least 2 samples, got {len(samples)}")
    scores = [corpus_bleu([s], [[o for j, o in enumerate(samples) if j != i]], max_n)
              for i, s in enumerate(samples)]
    return float(np.mean(scores))


def _token_nlls(model: LanguageModel, seqs: Sequence[Sequence[int]], window: int) -> List[float]:
    model.eval()
    nlls: List[float] = []
    for ids in seqs:
        nlls.extend((-sequence_log_probs(model, ids, window).numpy()).tolist())
    return nlls


def perplexity(model: LanguageModel, corpus: Sequence[TargetedSequence], window: int = 64) -> float:
    """exp of the mean next-token NLL pooled over every position, EOS included."""
    if not corpus:
        raise EmptyCorpus("perplexity needs at least one sequence")
    nlls = _token_nlls(model, [seq.ids for seq in corpus], window)
    return math.exp(float(np.mean(nlls)))


def lm_score(oracle_model: LanguageModel, samples: Sequence[Sequence[int]], window: int = 64) -> float:
    """Mean per-token NLL of generated id sequences (BOS prepended) under an oracle model."""
    seqs = [[BOS] + list(s) for s in samples if len(s)]
    if not seqs:
        raise EmptySamples("no non-empty samples to score")
    return float(np.mean(_token_nlls(oracle_model, seqs, window)))


def as_training_sequence(sample: Sequence[int]) -> TargetedSequence:
    """Wrap a generated sample for MLE training; the dependency targets are left empty."""
    ids = [BOS] + [int(i) for i in sample]
    if ids[-1] != EOS:
        ids.append(EOS)
    return TargetedSequence(ids=tuple(ids), targets=tuple(() for _ in range(len(ids) - 1)))


def rlm_score(samples: Sequence[Sequence[int]], heldout: Sequence[TargetedSequence], model_config,
              train_config: Optional[TrainConfig] = None, min_samples: Optional[int] = None,
              seed: int = 1234) -> float:
    """
    Train a fresh baseline model on the samples, then report its mean per-token
    NLL on the held-out corpus.
    """
    min_samples = settings.RLM_MIN_SAMPLES if min_samples is None else min_samples
    usable = [s for s in samples if len(s)]
    if not usable:
        raise EmptySamples("no non-empty samples to train on")
    if len(usable) < min_samples:
        raise InsufficientSamples(f"RLM score needs at least {min_samples} samples, got {len(usable)}")
    if not heldout:
        raise EmptyCorpus("RLM score needs a held-out corpus")
    train_config = (train_config or TrainConfig(seed=seed)).model_copy(update={"phase": "baseline"})
    model = build_model(model_config, flavor="baseline", seed=train_config.seed)
    train_seqs = [as_training_sequence(s) for s in usable]
    run_training(train_config, train_seqs, train_seqs, model)
    score = evaluate_loss(model, heldout, "baseline")
    logger.info(f"RLM score {score:.4f} from {len(train_seqs)} samples")
    return score


def metric_orders(raw: str) -> List[int]:
    try:
        orders = [int(x) for x in raw.split(",") if x.strip()]
    except ValueError as e:
        raise ConfigError(f"bad metric order list {raw!r}") from e
    if not orders or min(orders) < 1:
        raise ConfigError(f"metric orders must be positive integers, got {raw!r}")
    return orders


def text_metrics(samples: Sequence[Tokens], metrics: Sequence[str], refs: Optional[Sequence[Tokens]] = None,
                 bleu_orders=(1, 2), distinct_orders=(2, 3), self_bleu_orders=(2, 3)) -> Dict[str, float]:
    """
    Surface-level metrics over whitespace tokens. BLEU scores the i-th sample
    against the i-th reference when the counts match, else every sample
    against the whole reference list.
    """
    if not samples:
        raise EmptySamples("no samples to evaluate")
    out: Dict[str, float] = {}
    if "bleu" in metrics:
        if not refs:
            raise EmptySamples("BLEU needs a references file")
        ref_sets = [[r] for r in refs] if len(refs) == len(samples) else [list(refs)] * len(samples)
        for n in bleu_orders:
            out[f"bleu-{n}"] = corpus_bleu(samples, ref_sets, max_n=n)
    if "distinct" in metrics:
        for n in distinct_orders:
            out[f"distinct-{n}"] = distinct_n(samples, n)
    if "self-bleu" in metrics:
        for n in self_bleu_orders:
            out[f"self-bleu-{n}"] = self_bleu(samples, max_n=n)
    return out
