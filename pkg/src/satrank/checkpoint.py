"""Single-file model checkpoints.

Layout::

    b"SATRANK-CKPT\\n"
    uint64 little-endian header length
    header: compact, key-sorted UTF-8 JSON
    tensor blocks: little-endian float64, in header order

The header lists every tensor's name, shape and byte offset. Tensors are
stored in name order and the JSON is canonical, so save -> load -> save
reproduces the file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from satrank.errors import DataError

MAGIC = b"SATRANK-CKPT\n"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    kind: str
    vocab_hash: str
    embedding_dim: int
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def to_bytes(self) -> bytes:
        entries, blocks, offset = [], [], 0
        for name in sorted(self.tensors):
            arr = np.asarray(self.tensors[name], dtype="<f8", order="C")
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            raw = arr.tobytes()
            blocks.append(raw)
            offset += len(raw)
        header = {"version": self.version, "kind": self.kind, "vocab_hash": self.vocab_hash,
                  "embedding_dim": self.embedding_dim, "tensors": entries, "meta": self.meta}
        hbytes = json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()
        return MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + b"".join(blocks)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if not data.startswith(MAGIC):
            raise DataError("not a satrank checkpoint (bad magic)")
        pos = len(MAGIC)
        try:
            (hlen,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            header = json.loads(data[pos: pos + hlen])
        except (struct.error, json.JSONDecodeError) as exc:
            raise DataError(f"corrupt checkpoint header: {exc}") from None
        if header.get("version") != FORMAT_VERSION:
            raise DataError(f"unsupported checkpoint version {header.get('version')}")
        body = data[pos + hlen:]
        tensors = {}
        for e in header["tensors"]:
            count = int(np.prod(e["shape"], dtype=np.int64))
            start, stop = e["offset"], e["offset"] + 8 * count
            if stop > len(body):
                raise DataError(f"checkpoint truncated in tensor {e['name']!r}")
            tensors[e["name"]] = np.frombuffer(body[start:stop], dtype="<f8").reshape(tuple(e["shape"])).astype(np.float64)
        return cls(header["kind"], header["vocab_hash"], header["embedding_dim"], tensors,
                   header.get("meta", {}), header["version"])


def save(ckpt: Checkpoint, path) -> str:
    """Write atomically (temp file + rename); returns the content hash."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = ckpt.to_bytes()
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return content_hash(data)


def load(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}") from None
    return Checkpoint.from_bytes(data)


def content_hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


def file_hash(path) -> str:
    return content_hash(Path(path).read_bytes())
