"""Self-describing binary container for named arrays.

Layout: 4-byte magic, little-endian u32 format version, u32 header length,
UTF-8 JSON header, raw payload. The header carries an entry table (name,
shape, dtype, byte offset into the payload), the payload size, and a CRC32 of
the payload so silent corruption is caught on load. Arrays are stored
little-endian regardless of host order; float32 payloads round-trip
bit-exactly.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

MAGIC = b"STRC"
FORMAT_VERSION = 1

_DTYPES = {"f32": np.dtype("<f4"), "i64": np.dtype("<i8")}
_DTYPE_TAGS = {np.dtype(np.float32): "f32", np.dtype(np.int64): "i64"}


class CheckpointError(Exception):
    """Base for all container failures."""


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedFileError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class MissingEntryError(CheckpointError):
    pass


class UnknownEntryError(CheckpointError):
    pass


def save_arrays(path: str, arrays: dict[str, np.ndarray]) -> None:
    """Write named float32/int64 arrays; anything else is an invalid argument."""
    entries = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)  # tobytes() copies to C order on its own
        tag = _DTYPE_TAGS.get(arr.dtype)
        if tag is None:
            raise ValueError(f"entry {name!r} has unsupported dtype {arr.dtype}")
        raw = arr.astype(_DTYPES[tag], copy=False).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": tag, "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = json.dumps(
        {
            "endian": "little",
            "entries": entries,
            "payload_size": len(payload),
            "crc32": zlib.crc32(payload),
        }
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header)))
        fh.write(header)
        fh.write(payload)


def load_arrays(path: str) -> dict[str, np.ndarray]:
    """Read a container back; every failure mode gets its own error type."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12:
        raise TruncatedFileError(f"{path}: {len(blob)} bytes is shorter than any valid file")
    if blob[:4] != MAGIC:
        raise BadMagicError(f"{path}: magic {blob[:4]!r} != {MAGIC!r}")
    version, header_len = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: format version {version} != {FORMAT_VERSION}")
    if len(blob) < 12 + header_len:
        raise TruncatedFileError(f"{path}: header truncated")
    try:
        header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TruncatedFileError(f"{path}: header unreadable: {exc}") from exc
    payload = blob[12 + header_len :]
    if len(payload) != header["payload_size"]:
        raise TruncatedFileError(
            f"{path}: payload is {len(payload)} bytes, header promises {header['payload_size']}"
        )
    if zlib.crc32(payload) != header["crc32"]:
        raise ChecksumError(f"{path}: payload checksum mismatch")
    out = {}
    for entry in header["entries"]:
        dt = _DTYPES[entry["dtype"]]
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype=dt, count=count, offset=start).reshape(shape)
        # Native-order writable copy; the buffer above aliases the file blob.
        out[entry["name"]] = arr.astype(dt.newbyteorder("="), copy=True)
    return out


def check_exact_names(found: dict[str, np.ndarray], expected: list[str], path: str) -> None:
    """Strict loading: the stored name set must match the model's exactly."""
    missing = [n for n in expected if n not in found]
    if missing:
        raise MissingEntryError(f"{path}: missing entry {missing[0]!r}")
    known = set(expected)
    unknown = [n for n in found if n not in known]
    if unknown:
        raise UnknownEntryError(f"{path}: unknown entry {unknown[0]!r}")
