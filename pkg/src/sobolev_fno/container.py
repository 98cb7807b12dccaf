"""Binary container shared by datasets and checkpoints.

Layout::

    MAGIC (8 bytes) | header length (uint64 LE) | JSON header (utf-8) | payload

The payload is the declared arrays back to back as little-endian float64;
complex arrays are stored as interleaved (re, im) pairs. The header lists
each array's name, shape and kind along with a SHA-256 of the payload.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SOBFNO\x00\x01"
FORMAT_VERSION = 1


class ContainerError(ValueError):
    """Base class for unreadable container files."""


class MalformedFileError(ContainerError):
    pass


class VersionMismatchError(ContainerError):
    pass


class ChecksumError(ContainerError):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _encode(arr: np.ndarray) -> tuple[dict, bytes]:
    arr = np.asarray(arr)
    is_complex = np.iscomplexobj(arr)
    data = np.ascontiguousarray(arr, dtype="<c16" if is_complex else "<f8")
    spec = {"shape": list(arr.shape), "complex": bool(is_complex)}
    return spec, data.tobytes()


def write_container(path, kind: str, meta: dict, arrays: dict[str, np.ndarray],
                    version: int = FORMAT_VERSION) -> Path:
    path = Path(path)
    specs, chunks = [], []
    for name, arr in arrays.items():
        spec, raw = _encode(arr)
        specs.append({"name": name, **spec})
        chunks.append(raw)
    payload = b"".join(chunks)
    header = {
        "format_version": version,
        "kind": kind,
        "meta": meta,
        "arrays": specs,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    head = json.dumps(header, sort_keys=True, indent=1).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        fh.write(payload)
    return path


def read_container(path, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(meta, arrays)``; raises a :class:`ContainerError` subclass on bad input."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 8 or raw[:len(MAGIC)] != MAGIC:
        raise MalformedFileError(f"{path}: not a container file (bad magic)")
    (head_len,) = struct.unpack("<Q", raw[len(MAGIC):len(MAGIC) + 8])
    start = len(MAGIC) + 8
    if start + head_len > len(raw):
        raise ChecksumError(f"{path}: file truncated inside the header")
    try:
        header = json.loads(raw[start:start + head_len].decode("utf-8"))
        version = header["format_version"]
        specs = header["arrays"]
        expected_hash = header["payload_sha256"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise MalformedFileError(f"{path}: unreadable header ({exc})") from exc
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"{path}: format version {version}, this build reads version {FORMAT_VERSION}")
    if kind is not None and header.get("kind") != kind:
        raise MalformedFileError(f"{path}: expected a {kind} file, found {header.get('kind')!r}")
    payload = raw[start + head_len:]
    if hashlib.sha256(payload).hexdigest() != expected_hash:
        raise ChecksumError(f"{path}: payload checksum mismatch (file truncated or corrupted)")

    arrays, offset = {}, 0
    try:
        for spec in specs:
            dtype = np.dtype("<c16" if spec["complex"] else "<f8")
            shape = tuple(spec["shape"])
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            chunk = payload[offset:offset + nbytes]
            if len(chunk) != nbytes:
                raise MalformedFileError(f"{path}: payload shorter than declared arrays")
            arrays[spec["name"]] = np.frombuffer(chunk, dtype=dtype).reshape(shape).astype(
                np.complex128 if spec["complex"] else np.float64)
            offset += nbytes
    except (KeyError, TypeError) as exc:
        raise MalformedFileError(f"{path}: bad array declaration ({exc})") from exc
    if offset != len(payload):
        raise MalformedFileError(f"{path}: trailing bytes after declared arrays")
    return header["meta"], arrays
