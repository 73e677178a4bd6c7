"""Binary checkpoint files.

Layout: the magic line ``TRANSE-NMM-CKPT\\n``, an 8-byte little-endian
header length, a UTF-8 JSON header, then little-endian float64 arrays in
the order entity vectors, relation vectors, alpha, beta.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from .graph import KnowledgeGraph
from .model import ModelParams

MAGIC = b"TRANSE-NMM-CKPT\n"
FORMAT_VERSION = 1
_F64 = np.dtype("<f8")


class CheckpointError(ValueError):
    pass


def vocab_hash(graph_or_names, relations=None) -> str:
    """Content hash over the ordered entity and relation vocabularies."""
    if isinstance(graph_or_names, KnowledgeGraph):
        entities, relations = graph_or_names.entities.names, graph_or_names.relations.names
    else:
        entities = graph_or_names
    h = hashlib.sha256()
    for part in (entities, relations):
        h.update(len(part).to_bytes(8, "little"))
        for name in part:
            h.update(name.encode("utf-8") + b"\0")
    return h.hexdigest()


def save_checkpoint(params: ModelParams, meta: dict, path) -> None:
    """Write params and metadata; ``meta`` must be JSON-serializable.

    The file is written under a ``.partial`` name and renamed on success.
    """
    header = dict(meta)
    header.update(format_version=FORMAT_VERSION, k=params.k,
                  n_entities=params.n_entities, n_relations=params.n_relations)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".partial")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for arr in (params.ent, params.rel, params.alpha, params.beta):
            fh.write(np.ascontiguousarray(arr, dtype=_F64).tobytes())
    os.replace(tmp, path)


def load_checkpoint(path, expected_vocab_hash: str | None = None,
                    expected_k: int | None = None) -> tuple[ModelParams, dict]:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic bytes)")
    pos = len(MAGIC)
    if len(data) < pos + 8:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    try:
        header = json.loads(data[pos:pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    pos += hlen
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {header.get('format_version')} != {FORMAT_VERSION}")
    k, ne, nr = header["k"], header["n_entities"], header["n_relations"]
    if expected_k is not None and k != expected_k:
        raise CheckpointError(f"{path}: dimension mismatch, checkpoint k={k}, expected k={expected_k}")
    if expected_vocab_hash is not None and header.get("vocab_hash") != expected_vocab_hash:
        raise CheckpointError(f"{path}: vocabulary hash mismatch with dataset")
    shapes = [(ne, k), (nr, k), (ne,), (2 * nr, 2 * nr)]
    need = sum(int(np.prod(s)) for s in shapes) * _F64.itemsize
    if len(data) - pos != need:
        raise CheckpointError(f"{path}: expected {need} bytes of arrays, found {len(data) - pos}")
    arrays = []
    for shape in shapes:
        n = int(np.prod(shape))
        arr = np.frombuffer(data, dtype=_F64, count=n, offset=pos).reshape(shape)
        arrays.append(arr.astype(np.float64))
        pos += n * _F64.itemsize
    return ModelParams(*arrays), header
