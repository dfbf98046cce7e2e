"""
Synthetic long-range agreement treebank: a sentence-final verb must agree in
number with an early subject noun, with prepositional distractors in between
whose nouns carry random number.
"""
import logging
from typing import List, Tuple

import numpy as np

logger = logging.getLogger(__name__)

NOUNS = {
    "sg": ("dog", "cat", "bird", "horse", "fox", "wolf", "child", "farmer"),
    "pl": ("dogs", "cats", "birds", "horses", "foxes", "wolves", "children", "farmers"),
}
VERBS = {
    "sg": ("runs", "sleeps", "eats", "jumps", "sings", "waits"),
    "pl": ("run", "sleep", "eat", "jump", "sing", "wait"),
}
ADJECTIVES = ("big", "small", "old", "young", "quiet")
PREPOSITIONS = ("near", "with", "behind", "beside")


def _conllu_line(position: int, form: str, upos: str, head: int, deprel: str) -> str:
    return "\t".join([str(position), form, form, upos, "_", "_", str(head), deprel, "_", "_"])


def agreement_sentence(rng: np.random.Generator, min_distractors: int = 1,
                       max_distractors: int = 3) -> Tuple[List[str], List[int]]:
    """One sentence as (surfaces, heads); heads are 1-based with 0 for the root verb."""
    number = "sg" if rng.random() < 0.5 else "pl"
    words: List[str] = ["the"]
    if rng.random() < 0.3:
        words.append(str(rng.choice(ADJECTIVES)))
    words.append(str(rng.choice(NOUNS[number])))
    subject = len(words)

    heads: List[int] = [subject] * len(words)
    for _ in range(int(rng.integers(min_distractors, max_distractors + 1))):
        distractor_number = "sg" if rng.random() < 0.5 else "pl"
        start = len(words) + 1
        words.extend([str(rng.choice(PREPOSITIONS)), "the", str(rng.choice(NOUNS[distractor_number]))])
        noun = start + 2
        heads.extend([noun, noun, subject])

    words.append(str(rng.choice(VERBS[number])))
    verb = len(words)
    words.append(".")
    heads.extend([0, verb])
    heads[subject - 1] = verb
    return words, heads


def agreement_corpus(n: int, seed: int = 1234, min_distractors: int = 1, max_distractors: int = 3) -> str:
    """CoNLL-U text of `n` agreement sentences, deterministic in `seed`."""
    rng = np.random.default_rng(seed)
    blocks = []
    for index in range(n):
        surfaces, heads = agreement_sentence(rng, min_distractors, max_distractors)
        upos = _upos_of(surfaces)
        lines = [f"# sent_id = agree-{index}", f"# text = {' '.join(surfaces)}"]
        for position, (form, head) in enumerate(zip(surfaces, heads), start=1):
            lines.append(_conllu_line(position, form, upos[position - 1], head, "root" if head == 0 else "dep"))
        blocks.append("\n".join(lines))
    logger.info(f"Built {n} synthetic agreement sentences (seed={seed})")
    return "\n\n".join(blocks) + "\n\n"


def _upos_of(surfaces: List[str]) -> List[str]:
    nouns = set(NOUNS["sg"] + NOUNS["pl"])
    verbs = set(VERBS["sg"] + VERBS["pl"])
    tags = []
    for s in surfaces:
        if s in nouns:
            tags.append("NOUN")
        elif s in verbs:
            tags.append("VERB")
        elif s in ADJECTIVES:
            tags.append("ADJ")
        elif s in PREPOSITIONS:
            tags.append("ADP")
        elif s == ".":
            tags.append("PUNCT")
        else:
            tags.append("DET")
    return tags
