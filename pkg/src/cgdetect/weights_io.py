"""Reader/writer for the CGF1 tensor container and feature-set files.

Layout (all integers little-endian)::

    b"CGF1" | u32 header_len | header (UTF-8 JSON) | payload | u32 crc32(payload)

The header is a JSON object ``{"version": 1, "metadata": {...},
"tensors": [{"name", "dtype", "shape", "byte_offset", "byte_length"}, ...]}``
with offsets relative to the start of the payload.  Tensors are raw
little-endian float32 (``"f32"``); opaque byte blobs use ``"u8"``.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from .errors import CorruptionError, FormatError, ShapeError

MAGIC = b"CGF1"
VERSION = 1
FEATURE_DIM = 2048

_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}


@dataclass
class WeightStore:
    entries: Dict[str, np.ndarray] = field(default_factory=dict)
    metadata: Dict[str, str] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def digest(self) -> str:
        """SHA-256 over names, shapes, data and metadata."""
        h = hashlib.sha256()
        for k in sorted(self.metadata):
            h.update(f"{k}={self.metadata[k]}\n".encode())
        for name in sorted(self.entries):
            arr = self.entries[name]
            h.update(name.encode())
            h.update(str(arr.shape).encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


@dataclass
class FeatureSet:
    features: np.ndarray  # (n, d) float32
    labels: np.ndarray  # (n,) int, 1 = CG, 0 = PG
    ids: List[str]

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        if self.features.ndim != 2:
            if self.features.size == 0:
                self.features = self.features.reshape(0, FEATURE_DIM)
            else:
                raise ShapeError(f"features must be 2-D, got {self.features.shape}")
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        self.ids = [str(i) for i in self.ids]
        n = self.features.shape[0]
        if self.labels.shape[0] != n or len(self.ids) != n:
            raise ShapeError(
                f"inconsistent row counts: features={n} labels={self.labels.shape[0]} ids={len(self.ids)}"
            )
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 (PG) or 1 (CG)")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx: Sequence[int]) -> "FeatureSet":
        idx = np.asarray(idx, dtype=np.int64)
        return FeatureSet(self.features[idx], self.labels[idx], [self.ids[i] for i in idx])


def encode(store: WeightStore) -> bytes:
    manifest = []
    chunks = []
    offset = 0
    for name, arr in store.entries.items():
        if not isinstance(name, str) or not name.isascii():
            raise ValueError(f"tensor names must be ASCII strings: {name!r}")
        a = np.asarray(arr)
        dtype = "u8" if a.dtype == np.uint8 else "f32"
        raw = np.ascontiguousarray(a, dtype=_DTYPES[dtype]).tobytes()
        manifest.append({
            "name": name,
            "dtype": dtype,
            "shape": list(a.shape),
            "byte_offset": offset,
            "byte_length": len(raw),
        })
        chunks.append(raw)
        offset += len(raw)
    header = {
        "version": VERSION,
        "metadata": {str(k): str(v) for k, v in store.metadata.items()},
        "tensors": manifest,
    }
    hbytes = json.dumps(header, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    payload = b"".join(chunks)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    return b"".join([MAGIC, struct.pack("<I", len(hbytes)), hbytes, payload, struct.pack("<I", crc)])


def decode(buf: bytes) -> WeightStore:
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise FormatError(f"not a CGF1 container (magic {bytes(buf[:4])!r})")
    (hlen,) = struct.unpack_from("<I", buf, 4)
    if 8 + hlen > len(buf):
        raise CorruptionError(f"header length {hlen} exceeds file size {len(buf)}")
    try:
        header = json.loads(bytes(buf[8:8 + hlen]).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"unreadable header: {e}") from e
    if not isinstance(header, dict) or header.get("version") != VERSION:
        raise FormatError(f"unsupported container version {header.get('version') if isinstance(header, dict) else None!r}")

    payload_start = 8 + hlen
    if len(buf) < payload_start + 4:
        raise CorruptionError("file truncated before checksum")
    payload_end = len(buf) - 4
    payload = memoryview(buf)[payload_start:payload_end]

    entries: Dict[str, np.ndarray] = {}
    try:
        tensors = list(header["tensors"])
        metadata = dict(header["metadata"])
    except (KeyError, TypeError) as e:
        raise FormatError(f"header missing field: {e}") from e
    for t in tensors:
        name, dtype, shape = t["name"], t["dtype"], tuple(int(s) for s in t["shape"])
        off, length = int(t["byte_offset"]), int(t["byte_length"])
        if dtype not in _DTYPES:
            raise FormatError(f"tensor {name!r}: unsupported dtype {dtype!r}")
        if name in entries:
            raise FormatError(f"duplicate tensor name {name!r}")
        if off < 0 or off + length > len(payload):
            raise CorruptionError(
                f"tensor {name!r}: bytes [{off}, {off + length}) beyond payload of {len(payload)} bytes"
            )
        dt = _DTYPES[dtype]
        if length != int(np.prod(shape, dtype=np.int64)) * dt.itemsize:
            raise CorruptionError(f"tensor {name!r}: byte_length {length} does not match shape {shape}")
        arr = np.frombuffer(payload[off:off + length], dtype=dt).reshape(shape)
        entries[name] = arr.astype(dt.newbyteorder("="), copy=True)
        entries[name].setflags(write=False)

    (crc,) = struct.unpack_from("<I", buf, payload_end)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CorruptionError("payload checksum mismatch")
    return WeightStore(entries, metadata)


def save_weights(store: WeightStore, path) -> None:
    path = Path(path)
    data = encode(store)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except OSError as e:
        raise OSError(f"cannot write {path}: {e}") from e


def load_weights(path) -> WeightStore:
    path = Path(path)
    with open(path, "rb") as f:
        buf = f.read()
    try:
        return decode(buf)
    except FormatError as e:
        raise type(e)(f"{path}: {e}") from e


def _encode_ids(ids: Sequence[str]) -> np.ndarray:
    parts = []
    for s in ids:
        b = s.encode("utf-8")
        parts.append(struct.pack("<I", len(b)))
        parts.append(b)
    return np.frombuffer(b"".join(parts), dtype=np.uint8).copy()


def _decode_ids(blob: np.ndarray, n: int) -> List[str]:
    raw = blob.tobytes()
    ids = []
    pos = 0
    while pos < len(raw):
        if pos + 4 > len(raw):
            raise FormatError("ids blob truncated")
        (k,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        if pos + k > len(raw):
            raise FormatError("ids blob truncated")
        ids.append(raw[pos:pos + k].decode("utf-8"))
        pos += k
    if len(ids) != n:
        raise FormatError(f"ids blob holds {len(ids)} entries, features hold {n} rows")
    return ids


def features_to_store(fs: FeatureSet, metadata: Dict[str, str] | None = None) -> WeightStore:
    md = {"kind": "features"}
    md.update(metadata or {})
    return WeightStore(
        {
            "features": fs.features.astype(np.float32),
            "labels": fs.labels.astype(np.float32),
            "ids": _encode_ids(fs.ids),
        },
        md,
    )


def store_to_features(store: WeightStore) -> FeatureSet:
    for name in ("features", "labels", "ids"):
        if name not in store:
            raise FormatError(f"feature file lacks {name!r} entry")
    feats = store["features"]
    labels = store["labels"]
    if feats.ndim != 2:
        raise FormatError(f"features entry must be 2-D, got shape {feats.shape}")
    n = feats.shape[0]
    if labels.shape != (n,):
        raise FormatError(f"labels shape {labels.shape} inconsistent with {n} feature rows")
    if not np.isin(labels, (0.0, 1.0)).all():
        raise FormatError("labels must be 0 or 1")
    ids = _decode_ids(store["ids"], n)
    return FeatureSet(feats.copy(), labels.astype(np.int64), ids)


def save_features(fs: FeatureSet, path, metadata: Dict[str, str] | None = None) -> None:
    save_weights(features_to_store(fs, metadata), path)


def load_features(path) -> FeatureSet:
    store = load_weights(path)
    try:
        return store_to_features(store)
    except FormatError as e:
        raise FormatError(f"{path}: {e}") from e
