"""
Treebank ingestion: CoNLL-U parsing, vocabulary building and derivation of
future-dependent-token targets.
"""
import asyncio
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from conllu.exceptions import ParseException
from conllu.parser import DEFAULT_FIELD_PARSERS, parse_line

from dmlm.core.config import settings
from dmlm.core.errors import ConfigError, EmptyCorpus, InvalidTree, IoError, MalformedLine
from dmlm.schemas.corpus import (
    BOS, EOS, NUM_RESERVED, RESERVED_SURFACES, UNK,
    ParsedSentence, ParsedToken, PrepareStats, TargetedSequence, Vocab, tree_problem,
)

logger = logging.getLogger(__name__)

# Only ID, FORM and HEAD are consumed; FEATS is kept raw so odd feature strings never fail a line.
_FIELDS = ("id", "form", "lemma", "upos", "xpos", "feats", "head")
_FIELD_PARSERS = {**DEFAULT_FIELD_PARSERS, "feats": lambda line, i: line[i]}
MIN_FIELDS = 8


def parse_conllu(text: str, path: Optional[str] = None) -> List[ParsedSentence]:
    """
    Parse CoNLL-U text into sentences. Multiword ranges ("1-2") and empty nodes
    ("1.1") are skipped, comments ignored. Sentence indices in errors are 0-based.
    """
    sentences: List[ParsedSentence] = []
    block: list = []  # (line_number, id, form, head)
    block_start = 0

    def close_block():
        nonlocal block
        if block:
            sentences.append(_build_sentence(block, len(sentences), block_start, path))
        block = []

    for line_number, raw in enumerate(text.split("\n"), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            close_block()
            continue
        if line.startswith("#"):
            continue
        if not block:
            block_start = line_number
        columns = line.split("\t")
        if len(columns) < MIN_FIELDS:
            raise MalformedLine(f"expected at least {MIN_FIELDS} tab-separated fields, got {len(columns)}",
                                len(sentences), line_number, path)
        try:
            token = parse_line(line, fields=_FIELDS, field_parsers=_FIELD_PARSERS)
        except ParseException as e:
            raise MalformedLine(str(e), len(sentences), line_number, path) from e
        token_id = token["id"]
        if isinstance(token_id, tuple):
            logger.debug(f"Skipping multiword/empty node {columns[0]!r} at line {line_number}")
            continue
        if token_id is None or token["head"] is None:
            raise MalformedLine(f"ID and HEAD must be integers, got {columns[0]!r} / {columns[6]!r}",
                                len(sentences), line_number, path)
        block.append((line_number, token_id, token["form"], token["head"]))
    close_block()

    logger.debug(f"Parsed {len(sentences)} sentences from {path or 'text'}")
    return sentences


def _build_sentence(block, index: int, line_number: int, path: Optional[str]) -> ParsedSentence:
    positions = [position for _, position, _, _ in block]
    if positions != list(range(1, len(block) + 1)):
        raise InvalidTree(f"token ids must run 1..{len(block)}, got {positions}", index, line_number, path)
    heads = [head for _, _, _, head in block]
    problem = tree_problem(heads)
    if problem:
        raise InvalidTree(problem, index, line_number, path)
    return ParsedSentence(tokens=tuple(
        ParsedToken(surface=form, position=position, head=head) for _, position, form, head in block
    ))


def read_conllu_file(path) -> List[ParsedSentence]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as e:
        raise IoError(f"CoNLL-U file not found: {path}") from e
    except (OSError, UnicodeDecodeError) as e:
        raise IoError(f"Cannot read {path}: {e}") from e
    return parse_conllu(text, path=str(path))


def lowercased(sentence: ParsedSentence) -> ParsedSentence:
    return ParsedSentence(tokens=tuple(
        ParsedToken(surface=t.surface.lower(), position=t.position, head=t.head) for t in sentence.tokens
    ))


def build_vocab(sentences: Sequence[ParsedSentence], min_count: int = 1, max_size: int = 32000) -> Vocab:
    """Keep surfaces seen at least `min_count` times, ranked by (frequency desc, surface asc)."""
    if min_count < 1:
        raise ConfigError(f"min_count must be >= 1, got {min_count}")
    if max_size <= NUM_RESERVED:
        raise ConfigError(f"max_size must exceed {NUM_RESERVED} reserved entries, got {max_size}")
    if not sentences:
        raise EmptyCorpus("cannot build a vocabulary from zero sentences")

    reserved = set(RESERVED_SURFACES)
    freqs = Counter(s for sentence in sentences for s in sentence.surfaces if s not in reserved)
    if not freqs:
        raise EmptyCorpus("corpus contains no tokens")
    kept = [(s, c) for s, c in freqs.items() if c >= min_count]
    kept.sort(key=lambda item: (-item[1], item[0]))
    kept = kept[:max_size - NUM_RESERVED]
    logger.info(f"Vocabulary: {len(kept)} of {len(freqs)} surface types kept (min_count={min_count}, max_size={max_size})")
    return Vocab.from_surfaces([s for s, _ in kept])


def derive_dependency_targets(sentence: ParsedSentence, vocab: Vocab) -> TargetedSequence:
    """
    Each tree edge is attributed to its earlier endpoint: the later endpoint is
    a future dependent of the earlier one. BOS stands in for ROOT, so the root
    word is BOS's target, and the root word's (past) ROOT parent maps to EOS.
    """
    T = len(sentence)
    ids = [BOS] + vocab.encode_all(sentence.surfaces) + [EOS]
    targets: List[List[int]] = [[] for _ in range(T + 1)]
    for position, head in enumerate(sentence.heads, start=1):
        if head == 0:
            targets[0].append(ids[position])
            targets[position].append(EOS)
        elif head > position:
            targets[position].append(ids[head])
        else:
            targets[head].append(ids[position])
    return TargetedSequence(ids=tuple(ids), targets=tuple(tuple(z) for z in targets))


def _derive_chunk(chunk: Sequence[ParsedSentence], vocab: Vocab) -> List[TargetedSequence]:
    return [derive_dependency_targets(sentence, vocab) for sentence in chunk]


async def derive_all(sentences: Sequence[ParsedSentence], vocab: Vocab,
                     max_workers: Optional[int] = None) -> List[TargetedSequence]:
    """Derive targets in worker threads; output keeps input order."""
    if not sentences:
        return []
    max_workers = max_workers or settings.DMLM_THREADS
    semaphore = asyncio.Semaphore(max_workers)
    chunk_size = max(1, -(-len(sentences) // (max_workers * 4)))
    chunks = [sentences[i:i + chunk_size] for i in range(0, len(sentences), chunk_size)]

    async def run(chunk):
        async with semaphore:
            return await asyncio.to_thread(_derive_chunk, chunk, vocab)

    results = await asyncio.gather(*(run(chunk) for chunk in chunks))
    return [seq for chunk_result in results for seq in chunk_result]


@dataclass
class PreparedCorpus:
    vocab: Vocab
    splits: Dict[str, List[TargetedSequence]]
    stats: PrepareStats
    config: dict = field(default_factory=dict)

    @property
    def sequences(self) -> List[TargetedSequence]:
        return [seq for split in self.splits.values() for seq in split]


def _filter_length(sentences: Sequence[ParsedSentence], max_len: int):
    kept = [s for s in sentences if len(s) <= max_len]
    skipped = len(sentences) - len(kept)
    if skipped:
        logger.warning(f"Skipped {skipped} sentences longer than {max_len} tokens")
    return kept, skipped


async def prepare_corpus(split_sentences: Dict[str, Sequence[ParsedSentence]], min_count: int = None,
                         max_size: int = None, max_len: int = None, lowercase: bool = None,
                         max_workers: Optional[int] = None) -> PreparedCorpus:
    """
    Lowercase, drop over-long sentences (never truncate), build the vocabulary
    on the "train" split and derive targets for every split.
    """
    min_count = settings.MIN_COUNT if min_count is None else min_count
    max_size = settings.MAX_VOCAB_SIZE if max_size is None else max_size
    max_len = settings.MAX_SENTENCE_LENGTH if max_len is None else max_len
    lowercase = settings.LOWERCASE if lowercase is None else lowercase
    if "train" not in split_sentences:
        raise ConfigError("a 'train' split is required to build the vocabulary")

    stats = PrepareStats()
    kept_splits: Dict[str, List[ParsedSentence]] = {}
    for name, sentences in split_sentences.items():
        stats.sentences_read += len(sentences)
        if lowercase:
            sentences = [lowercased(s) for s in sentences]
        kept, skipped = _filter_length(sentences, max_len)
        stats.skipped_too_long += skipped
        kept_splits[name] = kept

    vocab = build_vocab(kept_splits["train"], min_count=min_count, max_size=max_size)

    splits: Dict[str, List[TargetedSequence]] = {}
    for name, sentences in kept_splits.items():
        splits[name] = await derive_all(sentences, vocab, max_workers=max_workers)

    all_seqs = [seq for seqs in splits.values() for seq in seqs]
    stats.sentences_kept = len(all_seqs)
    stats.vocab_size = vocab.size
    stats.splits = {name: len(seqs) for name, seqs in splits.items()}
    word_ids = [i for seq in all_seqs for i in seq.ids[1:-1]]
    stats.tokens = len(word_ids)
    stats.unk_rate = (sum(1 for i in word_ids if i == UNK) / len(word_ids)) if word_ids else 0.0
    target_sets = [z for seq in all_seqs for z in seq.targets]
    if target_sets:
        stats.empty_target_rate = sum(1 for z in target_sets if not z) / len(target_sets)
        stats.mean_target_size = sum(len(z) for z in target_sets) / len(target_sets)

    config = {"min_count": min_count, "max_size": max_size, "max_len": max_len, "lowercase": lowercase}
    logger.info(f"Prepared {stats.sentences_kept}/{stats.sentences_read} sentences "
                f"({stats.skipped_too_long} too long), vocab size {vocab.size}")
    return PreparedCorpus(vocab=vocab, splits=splits, stats=stats, config=config)
