"""Shared helpers for the little-endian, CRC-trailed artifact files."""
import json
import logging
import os
import struct
import zlib
from pathlib import Path
from typing import Tuple

from tenacity import retry, retry_if_exception_type, stop_after_attempt, wait_fixed

from dmlm.core.config import settings
from dmlm.core.errors import ChecksumMismatch, IoError, VersionMismatch

logger = logging.getLogger(__name__)

CRC_SIZE = 4


@retry(wait=wait_fixed(0.05), stop=stop_after_attempt(settings.WRITE_RETRY_ATTEMPTS),
       retry=retry_if_exception_type((BlockingIOError, InterruptedError)), reraise=True)
def _write_replace(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def write_bytes(path, payload: bytes) -> Path:
    """Write via a temp file and rename; transient errors are retried, anything left becomes IoError."""
    path = Path(path)
    try:
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
        _write_replace(path, payload)
    except OSError as e:
        logger.error(f"Failed to write {path}: {e}", exc_info=True)
        raise IoError(f"Cannot write {path}: {e}") from e
    logger.debug(f"Wrote {len(payload)} bytes to {path}")
    return path


def write_text(path, text: str) -> Path:
    return write_bytes(path, text.encode("utf-8"))


def read_bytes(path) -> bytes:
    path = Path(path)
    try:
        return path.read_bytes()
    except FileNotFoundError as e:
        raise IoError(f"File not found: {path}") from e
    except OSError as e:
        raise IoError(f"Cannot read {path}: {e}") from e


def with_crc(body: bytes) -> bytes:
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def check_envelope(data: bytes, magic: bytes, version: int, path) -> Tuple[dict, int]:
    """
    Validate magic, version and trailing CRC32. Returns the JSON header and the
    offset of the first byte after it.
    """
    prefix = len(magic) + 2 + 4
    if len(data) < prefix + CRC_SIZE or data[:len(magic)] != magic:
        raise VersionMismatch(f"{path}: not a {magic.decode()} file (bad magic bytes)")
    (found_version,) = struct.unpack_from("<H", data, len(magic))
    if found_version != version:
        raise VersionMismatch(f"{path}: format version {found_version}, expected {version}")
    body, (stored_crc,) = data[:-CRC_SIZE], struct.unpack("<I", data[-CRC_SIZE:])
    actual_crc = zlib.crc32(body) & 0xFFFFFFFF
    if actual_crc != stored_crc:
        raise ChecksumMismatch(f"{path}: CRC32 {actual_crc:08x} does not match stored {stored_crc:08x}")
    (header_len,) = struct.unpack_from("<I", data, len(magic) + 2)
    start = prefix
    end = start + header_len
    if end > len(body):
        raise ChecksumMismatch(f"{path}: header length {header_len} runs past the payload")
    try:
        header = json.loads(body[start:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ChecksumMismatch(f"{path}: unreadable JSON header: {e}") from e
    return header, end


def envelope(magic: bytes, version: int, header: dict) -> bytearray:
    encoded = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = bytearray(magic)
    out += struct.pack("<HI", version, len(encoded))
    out += encoded
    return out
