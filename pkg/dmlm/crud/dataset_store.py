"""Binary persistence of targeted training sequences."""
import logging
import struct
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from dmlm.core.errors import ChecksumMismatch
from dmlm.crud.files import CRC_SIZE, check_envelope, envelope, read_bytes, with_crc, write_bytes
from dmlm.schemas.corpus import TargetedSequence, Vocab

logger = logging.getLogger(__name__)

MAGIC = b"DMLM"
FORMAT_VERSION = 1
SPLIT_ORDER = ("train", "valid", "test")

_U32 = np.dtype("<u4")


def _pack_ids(ids: Sequence[int]) -> bytes:
    return struct.pack("<I", len(ids)) + np.asarray(ids, dtype=_U32).tobytes()


def serialize_dataset(seqs: Sequence[TargetedSequence], vocab: Vocab, path, config: Optional[dict] = None,
                      split_sizes: Optional[Dict[str, int]] = None) -> dict:
    """
    Write sequences in order. `split_sizes` (train/valid/test counts, in that
    order) lets readers cut the flat list back into splits. Returns the header.
    """
    split_sizes = split_sizes or {"train": len(seqs)}
    if sum(split_sizes.values()) != len(seqs):
        raise ValueError(f"split sizes {split_sizes} do not add up to {len(seqs)} sequences")
    header = {
        "vocab": list(vocab.surface_of),
        "config": config or {},
        "counts": {
            "sequences": len(seqs),
            "ids": sum(len(s.ids) for s in seqs),
            "target_items": sum(s.num_target_items for s in seqs),
            "splits": {name: split_sizes[name] for name in SPLIT_ORDER if name in split_sizes},
        },
    }
    out = envelope(MAGIC, FORMAT_VERSION, header)
    for seq in seqs:
        out += _pack_ids(seq.ids)
        for z in seq.targets:
            out += _pack_ids(z)
    write_bytes(path, with_crc(bytes(out)))
    logger.info(f"Serialized {len(seqs)} sequences ({header['counts']['target_items']} target items) to {path}")
    return header


def _read(path) -> Tuple[List[TargetedSequence], Vocab, dict]:
    data = read_bytes(path)
    header, offset = check_envelope(data, MAGIC, FORMAT_VERSION, path)
    end = len(data) - CRC_SIZE

    def take_ids():
        nonlocal offset
        if offset + 4 > end:
            raise ChecksumMismatch(f"{path}: truncated sequence record at byte {offset}")
        (n,) = struct.unpack_from("<I", data, offset)
        offset += 4
        if offset + 4 * n > end:
            raise ChecksumMismatch(f"{path}: id array of length {n} runs past the payload")
        ids = np.frombuffer(data, dtype=_U32, count=n, offset=offset)
        offset += 4 * n
        return tuple(int(i) for i in ids)

    seqs = []
    for _ in range(header["counts"]["sequences"]):
        ids = take_ids()
        targets = tuple(take_ids() for _ in range(len(ids) - 1))
        seqs.append(TargetedSequence(ids=ids, targets=targets))
    if offset != end:
        raise ChecksumMismatch(f"{path}: {end - offset} unexpected trailing bytes")
    vocab = Vocab(surface_of=tuple(header["vocab"]))
    logger.debug(f"Read {len(seqs)} sequences from {path}")
    return seqs, vocab, header


def deserialize_dataset(path) -> Tuple[List[TargetedSequence], Vocab]:
    seqs, vocab, _ = _read(path)
    return seqs, vocab


def load_splits(path) -> Tuple[Dict[str, List[TargetedSequence]], Vocab, dict]:
    """Sequences cut into named splits per the header counts (all under "train" if none recorded)."""
    seqs, vocab, header = _read(path)
    sizes = header["counts"].get("splits") or {"train": len(seqs)}
    splits, start = {}, 0
    for name in SPLIT_ORDER:
        if name in sizes:
            splits[name] = seqs[start:start + sizes[name]]
            start += sizes[name]
    return splits, vocab, header
