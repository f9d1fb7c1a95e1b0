"""Binary model checkpoints.

Layout::

    8 bytes   magic b"CSLMCKP" + format version byte
    8 bytes   little-endian uint64 length of the JSON header
    header    UTF-8 JSON: vocab_size, hidden, vocab_hash, arrays [{name, shape}], meta
    payload   each array as little-endian float64, row-major, in header order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .corpus import Vocabulary
from .model import ModelParams

MAGIC = b"CSLMCKP"
VERSION = 1
ARRAY_ORDER = ("emb", "lstm_w", "lstm_b", "W")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, params: ModelParams, vocab: Vocabulary, meta: dict | None = None) -> None:
    if params.vocab_size != len(vocab):
        raise CheckpointError(f"model has {params.vocab_size} rows but vocabulary has {len(vocab)}")
    arrays = params.arrays()
    header = {
        "vocab_size": params.vocab_size,
        "hidden": params.hidden,
        "vocab_hash": vocab.fingerprint(),
        "arrays": [{"name": k, "shape": list(arrays[k].shape)} for k in ARRAY_ORDER],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC + bytes([VERSION]))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for k in ARRAY_ORDER:
            f.write(np.ascontiguousarray(arrays[k], dtype="<f8").tobytes())
    tmp.replace(path)


def read_header(path: str | Path) -> dict:
    with open(path, "rb") as f:
        return _read_header(f, path)


def _read_header(f, path) -> dict:
    magic = f.read(8)
    if magic[:7] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if magic[7] != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {magic[7]}")
    (n,) = struct.unpack("<Q", f.read(8))
    return json.loads(f.read(n).decode("utf-8"))


def load_checkpoint(path: str | Path, vocab: Vocabulary | None = None,
                    hidden: int | None = None) -> tuple[ModelParams, dict]:
    """Load params and header; reject a vocabulary or size that does not match."""
    with open(path, "rb") as f:
        header = _read_header(f, path)
        if vocab is not None:
            if header["vocab_size"] != len(vocab):
                raise CheckpointError(
                    f"{path}: checkpoint vocabulary size {header['vocab_size']} != supplied {len(vocab)}")
            if header["vocab_hash"] != vocab.fingerprint():
                raise CheckpointError(f"{path}: vocabulary hash mismatch")
        if hidden is not None and header["hidden"] != hidden:
            raise CheckpointError(f"{path}: hidden size {header['hidden']} != expected {hidden}")
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape))
            buf = f.read(8 * count)
            if len(buf) != 8 * count:
                raise CheckpointError(f"{path}: truncated array {entry['name']}")
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
    params = ModelParams(**arrays)
    if params.vocab_size != header["vocab_size"] or params.hidden != header["hidden"]:
        raise CheckpointError(f"{path}: array shapes disagree with header")
    return params, header
