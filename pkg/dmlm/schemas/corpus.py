"""Data contracts for parsed treebanks, vocabularies and targeted training sequences."""
from collections import Counter
from typing import Dict, List, Optional, Sequence, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED_SURFACES = ("<pad>", "<bos>", "<eos>", "<unk>")
NUM_RESERVED = len(RESERVED_SURFACES)


def tree_problem(heads: Sequence[int]) -> Optional[str]:
    """Describe why `heads` (1-based positions, 0 = ROOT) is not a single rooted tree, or None."""
    n = len(heads)
    roots = [i + 1 for i, h in enumerate(heads) if h == 0]
    for position, head in enumerate(heads, start=1):
        if head == position:
            return f"token {position} is its own head"
        if head < 0 or head > n:
            return f"token {position} has head {head} outside 0..{n}"
    if len(roots) != 1:
        return f"expected exactly one root, found {len(roots)}"
    # every token must reach ROOT without revisiting a node
    state = [0] * (n + 1)  # 0 unvisited, 1 on current path, 2 reaches root
    state[0] = 2
    for start in range(1, n + 1):
        path = []
        node = start
        while state[node] == 0:
            state[node] = 1
            path.append(node)
            node = heads[node - 1]
        if state[node] == 1:
            return f"cycle through token {node}"
        for visited in path:
            state[visited] = 2
    return None


class ParsedToken(BaseModel):
    surface: str = Field(..., examples=["figures"])
    position: int = Field(..., ge=1, examples=[2])
    head: int = Field(..., ge=0, examples=[6])

    class Config:
        frozen = True

    @model_validator(mode="after")
    def no_self_loop(self):
        if self.head == self.position:
            raise ValueError(f"token {self.position} cannot be its own head")
        return self


class ParsedSentence(BaseModel):
    tokens: Tuple[ParsedToken, ...]

    class Config:
        frozen = True

    @model_validator(mode="after")
    def single_rooted_tree(self):
        if not self.tokens:
            raise ValueError("a sentence needs at least one token")
        positions = [t.position for t in self.tokens]
        if positions != list(range(1, len(positions) + 1)):
            raise ValueError(f"positions must be 1..{len(positions)} in order, got {positions}")
        problem = tree_problem([t.head for t in self.tokens])
        if problem:
            raise ValueError(problem)
        return self

    @property
    def surfaces(self) -> List[str]:
        return [t.surface for t in self.tokens]

    @property
    def heads(self) -> List[int]:
        return [t.head for t in self.tokens]

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def from_heads(cls, surfaces: Sequence[str], heads: Sequence[int]) -> "ParsedSentence":
        return cls(tokens=tuple(
            ParsedToken(surface=s, position=i, head=h)
            for i, (s, h) in enumerate(zip(surfaces, heads), start=1)
        ))


class Vocab(BaseModel):
    """Bidirectional surface <-> id map. Ids 0..3 are PAD, BOS, EOS, UNK."""
    surface_of: Tuple[str, ...]
    id_of: Dict[str, int] = Field(default_factory=dict)

    class Config:
        frozen = True

    @model_validator(mode="after")
    def consistent_maps(self):
        if tuple(self.surface_of[:NUM_RESERVED]) != RESERVED_SURFACES:
            raise ValueError(f"the first {NUM_RESERVED} surfaces must be {RESERVED_SURFACES}")
        if len(set(self.surface_of)) != len(self.surface_of):
            raise ValueError("duplicate surfaces in vocabulary")
        expected = {s: i for i, s in enumerate(self.surface_of)}
        if not self.id_of:
            self.id_of.update(expected)
        elif self.id_of != expected:
            raise ValueError("id_of does not mirror surface_of")
        return self

    @classmethod
    def from_surfaces(cls, surfaces: Sequence[str]) -> "Vocab":
        return cls(surface_of=RESERVED_SURFACES + tuple(surfaces))

    def __len__(self) -> int:
        return len(self.surface_of)

    @property
    def size(self) -> int:
        return len(self.surface_of)

    def encode(self, surface: str) -> int:
        """Corpus text spelling a reserved surface (e.g. "<eos>") encodes as UNK."""
        token_id = self.id_of.get(surface, UNK)
        return UNK if token_id < NUM_RESERVED else token_id

    def decode(self, token_id: int) -> str:
        return self.surface_of[token_id]

    def encode_all(self, surfaces: Sequence[str]) -> List[int]:
        return [self.encode(s) for s in surfaces]

    def decode_all(self, ids: Sequence[int], strip_reserved: bool = True) -> List[str]:
        if strip_reserved:
            return [self.surface_of[i] for i in ids if i not in (PAD, BOS, EOS)]
        return [self.surface_of[i] for i in ids]


class TargetedSequence(BaseModel):
    """
    ids = [BOS, x_1..x_T, EOS]; targets[j] is the future-dependent multiset of
    ids[j] (sorted ids, repeats kept), i.e. what the prediction made after
    reading ids[0..j] is supervised with.
    """
    ids: Tuple[int, ...]
    targets: Tuple[Tuple[int, ...], ...]

    class Config:
        frozen = True

    @field_validator("targets")
    @classmethod
    def sorted_multisets(cls, v):
        return tuple(tuple(sorted(z)) for z in v)

    @model_validator(mode="after")
    def targets_lie_in_the_future(self):
        if len(self.ids) < 2:
            raise ValueError("a targeted sequence needs at least BOS and EOS")
        if len(self.targets) != len(self.ids) - 1:
            raise ValueError(f"expected {len(self.ids) - 1} target sets, got {len(self.targets)}")
        for j, z in enumerate(self.targets):
            future = set(self.ids[j + 1:])
            missing = [t for t in z if t not in future]
            if missing:
                raise ValueError(f"targets[{j}] contains ids {missing} that do not occur after position {j}")
        return self

    def counts(self, j: int) -> Counter:
        return Counter(self.targets[j])

    @property
    def num_target_items(self) -> int:
        return sum(len(z) for z in self.targets)

    def __len__(self) -> int:
        return len(self.ids)


class PrepareStats(BaseModel):
    sentences_read: int = 0
    sentences_kept: int = 0
    skipped_too_long: int = 0
    tokens: int = 0
    vocab_size: int = 0
    unk_rate: float = 0.0
    empty_target_rate: float = 0.0
    mean_target_size: float = 0.0
    splits: Dict[str, int] = Field(default_factory=dict)
