"""EMB1 / FMP1 binary container writers (and readers for self-checks).

Byte layout, little-endian throughout:

  EMB1: magic "EMB1", version u32 = 1, count u32, dim u32;
        per record: name-length u16, UTF-8 name, dim x f32.
  FMP1: magic "FMP1", version u32 = 1, count u32, dim u32 = 0;
        per record: name-length u16, UTF-8 name,
        layer-id u16, C u16, H u16, W u16, then C*H*W x f32.

These files are the interchange format with the matching/training pipeline,
which has its own independent reader; keep this module dependency-free.
"""

from __future__ import annotations

import struct

import numpy as np

EMB_MAGIC = b"EMB1"
FMP_MAGIC = b"FMP1"
VERSION = 1


def write_embeddings(records, path) -> None:
    """records: iterable of (name, 1-D float vector); one common dimension."""
    records = [(name, np.asarray(vec, dtype="<f4").ravel()) for name, vec in records]
    dim = records[0][1].size if records else 0
    if any(vec.size != dim for _, vec in records):
        raise ValueError("all embedding vectors must share one dimension")
    names = [name for name, _ in records]
    if len(set(names)) != len(names):
        raise ValueError("duplicate record names")
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<III", VERSION, len(records), dim))
        for name, vec in records:
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(vec.tobytes())


def read_embeddings(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != EMB_MAGIC:
        raise ValueError(f"{path}: not an EMB1 container")
    version, count, dim = struct.unpack_from("<III", data, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    off = 16
    out = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + nlen].decode("utf-8")
        off += nlen
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=off).copy()
        off += 4 * dim
        out.append((name, vec))
    return out


def write_feature_maps(records, path) -> None:
    """records: iterable of (name, layer_id, (C, H, W) float tensor)."""
    with open(path, "wb") as fh:
        fh.write(FMP_MAGIC)
        records = list(records)
        fh.write(struct.pack("<III", VERSION, len(records), 0))
        for name, layer_id, tensor in records:
            tensor = np.asarray(tensor, dtype="<f4")
            if tensor.ndim != 3:
                raise ValueError(f"feature map {name!r} must be (C, H, W)")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            c, h, w = tensor.shape
            fh.write(struct.pack("<HHHH", layer_id, c, h, w))
            fh.write(tensor.tobytes())


def read_feature_maps(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != FMP_MAGIC:
        raise ValueError(f"{path}: not an FMP1 container")
    version, count, _ = struct.unpack_from("<III", data, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    off = 16
    out = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + nlen].decode("utf-8")
        off += nlen
        layer_id, c, h, w = struct.unpack_from("<HHHH", data, off)
        off += 8
        tensor = np.frombuffer(data, dtype="<f4", count=c * h * w, offset=off).copy()
        off += 4 * c * h * w
        out.append((name, layer_id, tensor.reshape(c, h, w)))
    return out
