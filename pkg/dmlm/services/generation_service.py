"""Nucleus sampling and incremental generation."""
import asyncio
import logging
from typing import List, Optional, Sequence

import numpy as np

from dmlm.core.config import settings
from dmlm.core.errors import ConfigError, DegenerateDistribution, IdOutOfRange
from dmlm.core.numerics import Tensor
from dmlm.models.base import LanguageModel
from dmlm.models.mixture import inference_step, start_decoding
from dmlm.schemas.corpus import BOS, EOS

logger = logging.getLogger(__name__)

# cumulative sums like 0.6 + 0.3 land a hair under 0.9
_MASS_TOLERANCE = 1e-9


def nucleus_set(dist, p: float) -> np.ndarray:
    """Smallest prefix of ids sorted by (probability desc, id asc) holding mass >= p."""
    if not 0.0 < p <= 1.0:
        raise ConfigError(f"nucleus p must be in (0, 1], got {p}")
    probs = np.maximum(np.asarray(dist.values if isinstance(dist, Tensor) else dist, dtype=np.float64), 0.0)
    total = float(probs.sum())
    if not np.isfinite(total) or total <= 0.0:
        raise DegenerateDistribution("distribution has no positive mass")
    probs = probs / total
    order = np.lexsort((np.arange(probs.size), -probs))
    cumulative = np.cumsum(probs[order])
    cut = int(np.searchsorted(cumulative, p - _MASS_TOLERANCE, side="left"))
    return order[:min(cut, probs.size - 1) + 1]


def nucleus_sample(dist, p: float, rng: np.random.Generator) -> int:
    probs = np.maximum(np.asarray(dist.values if isinstance(dist, Tensor) else dist, dtype=np.float64), 0.0)
    members = nucleus_set(probs, p)
    weights = probs[members] / probs[members].sum()
    pick = int(np.searchsorted(np.cumsum(weights), rng.random(), side="right"))
    return int(members[min(pick, len(members) - 1)])


def generate(model: LanguageModel, prompt_ids: Optional[Sequence[int]], p: float, max_len: int, seed,
             window: int = 64) -> List[int]:
    """
    Sample until EOS or `max_len` new tokens. The returned ids start with the
    prompt (BOS is not included) and end with EOS when one was drawn.
    """
    if max_len < 1:
        raise ConfigError(f"max_len must be >= 1, got {max_len}")
    prompt = [int(i) for i in (prompt_ids or [])]
    model.check_ids([BOS] + prompt)
    limit = getattr(model.config, "max_len", None)
    if limit is not None:
        room = limit - 1 - len(prompt)
        if room < 1:
            raise IdOutOfRange(f"prompt of {len(prompt)} tokens leaves no room in a {limit}-position model")
        max_len = min(max_len, room)

    rng = np.random.default_rng(seed)
    model.eval()
    state = start_decoding(model, window)
    dist = None
    for token in [BOS] + prompt:
        dist, state = inference_step(model, state, token)

    generated: List[int] = []
    while True:
        token = nucleus_sample(dist, p, rng)
        generated.append(token)
        if token == EOS or len(generated) >= max_len:
            break
        dist, state = inference_step(model, state, token)
    return prompt + generated


async def generate_samples(model: LanguageModel, n: int, p: float, max_len: int, seed: int,
                           prompts: Optional[Sequence[Sequence[int]]] = None, window: int = 64,
                           max_workers: Optional[int] = None) -> List[List[int]]:
    """
    `n` independent samples on worker threads. Sample i uses the i-th child of
    SeedSequence(seed) and prompt i modulo len(prompts), so results do not
    depend on the worker count.
    """
    seeds = np.random.SeedSequence(seed).spawn(n)
    semaphore = asyncio.Semaphore(max_workers or settings.DMLM_THREADS)

    async def one(i: int):
        prompt = prompts[i % len(prompts)] if prompts else None
        async with semaphore:
            return await asyncio.to_thread(generate, model, prompt, p, max_len, seeds[i], window)

    samples = await asyncio.gather(*(one(i) for i in range(n)))
    logger.info(f"Generated {len(samples)} samples (p={p}, max_len={max_len})")
    return list(samples)
