"""Versioned checkpoint files: JSON header plus named little-endian parameter blobs."""
import logging
import struct
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from dmlm.core.errors import ChecksumMismatch, ConfigError
from dmlm.crud.files import CRC_SIZE, check_envelope, envelope, read_bytes, with_crc, write_bytes
from dmlm.models.base import LanguageModel, build_model
from dmlm.schemas.model_config import model_config_from_dict

logger = logging.getLogger(__name__)

MAGIC = b"DMCK"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    model_kind: str
    flavor: str
    config: dict
    params: Dict[str, np.ndarray]
    phase: Optional[str] = None
    epoch: int = 0
    val_loss: Optional[float] = None
    rng_state: dict = field(default_factory=dict)
    parameter_count: int = 0
    vocab: Optional[list] = None
    version: int = FORMAT_VERSION

    @classmethod
    def from_model(cls, model: LanguageModel, phase: Optional[str] = None, epoch: int = 0,
                   val_loss: Optional[float] = None, rng_state: Optional[dict] = None,
                   vocab: Optional[list] = None) -> "Checkpoint":
        return cls(model_kind=model.kind, flavor=model.flavor, config=model.config.model_dump(),
                   params=model.state_arrays(), phase=phase, epoch=epoch, val_loss=val_loss,
                   rng_state=rng_state or {"dropout": model.dropout_rng.bit_generator.state},
                   parameter_count=model.num_parameters(), vocab=vocab)

    def header(self) -> dict:
        return {"model_kind": self.model_kind, "flavor": self.flavor, "config": self.config,
                "phase": self.phase, "epoch": self.epoch, "val_loss": self.val_loss,
                "rng_state": self.rng_state, "parameter_count": self.parameter_count, "vocab": self.vocab}

    def build(self, seed: int = 0) -> LanguageModel:
        """Instantiate the model described by this checkpoint and load its parameters."""
        config = model_config_from_dict(self.config)
        if config.kind != self.model_kind:
            raise ConfigError(f"checkpoint kind {self.model_kind!r} disagrees with config kind {config.kind!r}")
        model = build_model(config, flavor=self.flavor, seed=seed)
        model.load_arrays(self.params)
        dropout_state = self.rng_state.get("dropout")
        if dropout_state:
            model.dropout_rng.bit_generator.state = dropout_state
        return model


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    out = envelope(MAGIC, FORMAT_VERSION, checkpoint.header())
    out += struct.pack("<I", len(checkpoint.params))
    for name, values in checkpoint.params.items():
        values = np.asarray(values)
        data = values.astype(values.dtype.newbyteorder("<"), copy=False)
        encoded_name = name.encode("utf-8")
        dtype = data.dtype.str.encode("ascii")
        out += struct.pack("<H", len(encoded_name)) + encoded_name
        out += struct.pack("<B", len(dtype)) + dtype
        out += struct.pack("<B", data.ndim) + struct.pack(f"<{data.ndim}I", *data.shape)
        out += np.ascontiguousarray(data).tobytes()
    write_bytes(path, with_crc(bytes(out)))
    logger.info(f"Saved {checkpoint.model_kind}/{checkpoint.flavor} checkpoint "
                f"(phase={checkpoint.phase}, epoch={checkpoint.epoch}) to {path}")


def load_checkpoint(path) -> Checkpoint:
    data = read_bytes(path)
    header, offset = check_envelope(data, MAGIC, FORMAT_VERSION, path)
    end = len(data) - CRC_SIZE

    def take(fmt: str):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > end:
            raise ChecksumMismatch(f"{path}: truncated parameter table at byte {offset}")
        values = struct.unpack_from(fmt, data, offset)
        offset += size
        return values

    def take_bytes(n: int) -> bytes:
        nonlocal offset
        if offset + n > end:
            raise ChecksumMismatch(f"{path}: truncated parameter table at byte {offset}")
        chunk = data[offset:offset + n]
        offset += n
        return chunk

    (count,) = take("<I")
    params: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<H")
        name = take_bytes(name_len).decode("utf-8")
        (dtype_len,) = take("<B")
        dtype = np.dtype(take_bytes(dtype_len).decode("ascii"))
        (ndim,) = take("<B")
        shape = take(f"<{ndim}I") if ndim else ()
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        params[name] = np.frombuffer(take_bytes(nbytes), dtype=dtype).reshape(shape).copy()
    if offset != end:
        raise ChecksumMismatch(f"{path}: {end - offset} unexpected trailing bytes")

    logger.debug(f"Loaded checkpoint {path} with {len(params)} parameter arrays")
    return Checkpoint(model_kind=header["model_kind"], flavor=header["flavor"], config=header["config"],
                      params=params, phase=header.get("phase"), epoch=header.get("epoch", 0),
                      val_loss=header.get("val_loss"), rng_state=header.get("rng_state") or {},
                      parameter_count=header.get("parameter_count", 0), vocab=header.get("vocab"))
