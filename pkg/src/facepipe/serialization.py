"""Binary container: JSON header followed by little-endian float64 blocks.

Layout::

    magic (8 bytes) | version (1 byte) | header length (uint32 LE) | header JSON
    | float64 blocks in header order | SHA-256 of everything before it
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .errors import CorruptFile, VersionMismatch

MAGIC = b"FACEPIPE"
VERSION = 1
_DIGEST = 32


def pack(kind: str, header: dict, blocks: dict) -> bytes:
    arrays = [(name, np.asarray(a, dtype="<f8")) for name, a in blocks.items()]
    meta = dict(header)
    meta["kind"] = kind
    meta["blocks"] = [{"name": name, "shape": list(a.shape)} for name, a in arrays]
    head = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(
        [MAGIC, bytes([VERSION]), struct.pack("<I", len(head)), head]
        + [np.ascontiguousarray(a).tobytes() for _, a in arrays]
    )
    return body + hashlib.sha256(body).digest()


def unpack(raw: bytes, kind: str | None = None):
    """Inverse of :func:`pack`. Returns ``(header, {name: array})``."""
    prefix = len(MAGIC) + 1 + 4
    if len(raw) < prefix + _DIGEST or not raw.startswith(MAGIC):
        raise CorruptFile("not a facepipe container or truncated header")
    version = raw[len(MAGIC)]
    if version != VERSION:
        raise VersionMismatch(f"container version {version}, this build reads {VERSION}")
    body, digest = raw[:-_DIGEST], raw[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptFile("checksum mismatch (file truncated or modified)")
    (hlen,) = struct.unpack("<I", body[len(MAGIC) + 1 : prefix])
    try:
        header = json.loads(body[prefix : prefix + hlen].decode("utf-8"))
    except ValueError as exc:
        raise CorruptFile(f"bad header: {exc}") from exc
    if kind is not None and header.get("kind") != kind:
        raise CorruptFile(f"expected a {kind!r} container, found {header.get('kind')!r}")
    blocks = {}
    pos = prefix + hlen
    for spec in header.pop("blocks"):
        count = int(np.prod(spec["shape"], dtype=np.int64))
        end = pos + 8 * count
        if end > len(body):
            raise CorruptFile(f"block {spec['name']!r} runs past end of file")
        blocks[spec["name"]] = np.frombuffer(body[pos:end], dtype="<f8").reshape(spec["shape"]).copy()
        pos = end
    if pos != len(body):
        raise CorruptFile("trailing bytes after last block")
    return header, blocks
