"""Checkpoint weight container: read/write single-file tensor archives and
index every tensor by transformer layer and component class.

The on-disk layout is the safetensors container: an 8-byte little-endian
header length, a UTF-8 JSON header mapping tensor names to dtype/shape/byte
ranges, then the raw little-endian row-major tensor bytes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np


class StoreFormatError(ValueError):
    """Raised when a weight file violates the container format."""


class ComponentClass(Enum):
    MLP = "mlp"
    ATT = "att"
    NORM = "norm"
    GLOBAL = "global"


SUPPORTED_DTYPES = ("f32", "f16", "bf16")

_DTYPE_TO_WIRE = {"f32": "F32", "f16": "F16", "bf16": "BF16"}
_WIRE_TO_DTYPE = {v: k for k, v in _DTYPE_TO_WIRE.items()}
_DTYPE_ITEMSIZE = {"f32": 4, "f16": 2, "bf16": 2}


def bf16_to_float32(bits: np.ndarray) -> np.ndarray:
    """Widen bfloat16 bit patterns (uint16) to float32. Exact for all inputs."""
    return (bits.astype(np.uint32) << np.uint32(16)).view(np.float32)


def float32_to_bf16(values: np.ndarray) -> np.ndarray:
    """Narrow float32 to bfloat16 bit patterns (uint16), round-to-nearest-even.

    NaNs are truncated rather than rounded so that payload bits survive a
    widen/narrow round trip; a NaN whose payload lives only in the low
    mantissa bits gets a quiet bit forced so it cannot decay to infinity.
    """
    bits = np.ascontiguousarray(values, dtype=np.float32).view(np.uint32)
    trunc = (bits >> np.uint32(16)).astype(np.uint16)
    lsb = ((bits >> np.uint32(16)) & np.uint32(1)).astype(np.uint32)
    rounded = ((bits + np.uint32(0x7FFF) + lsb) >> np.uint32(16)).astype(np.uint16)
    is_nan = (bits & np.uint32(0x7FFFFFFF)) > np.uint32(0x7F800000)
    nan16 = np.where(
        (trunc & np.uint16(0x007F)) == 0, trunc | np.uint16(0x0040), trunc
    )
    return np.where(is_nan, nan16, rounded)


def _decode_raw(raw: bytes, dtype: str) -> np.ndarray:
    if dtype == "f32":
        return np.frombuffer(raw, dtype="<f4").astype(np.float32, copy=False)
    if dtype == "f16":
        return np.frombuffer(raw, dtype="<f2").astype(np.float32)
    if dtype == "bf16":
        return bf16_to_float32(np.frombuffer(raw, dtype="<u2"))
    raise StoreFormatError(f"unsupported dtype {dtype!r}")


def _encode_values(values: np.ndarray, dtype: str) -> bytes:
    flat = np.ascontiguousarray(values, dtype=np.float32).reshape(-1)
    if dtype == "f32":
        return flat.astype("<f4").tobytes()
    if dtype == "f16":
        return flat.astype("<f2").tobytes()
    if dtype == "bf16":
        return float32_to_bf16(flat).astype("<u2").tobytes()
    raise StoreFormatError(f"unsupported dtype {dtype!r}")


@dataclass
class TensorRecord:
    """One named tensor: dtype tag, shape, and its little-endian payload.

    Raw bytes are the source of truth so that save/load round trips are
    bit-exact; arithmetic always happens on the float32 view.
    """

    name: str
    dtype: str
    shape: tuple[int, ...]
    raw: bytes

    def __post_init__(self) -> None:
        if self.dtype not in SUPPORTED_DTYPES:
            raise StoreFormatError(f"unsupported dtype {self.dtype!r}")
        self.shape = tuple(int(d) for d in self.shape)
        if any(d < 0 for d in self.shape):
            raise StoreFormatError(f"negative dimension in shape {self.shape}")
        expected = math.prod(self.shape) * _DTYPE_ITEMSIZE[self.dtype]
        if expected != len(self.raw):
            raise StoreFormatError(
                f"tensor {self.name!r}: {len(self.raw)} bytes "
                f"but shape {self.shape} needs {expected}"
            )

    @classmethod
    def from_array(cls, name: str, values: np.ndarray, dtype: str = "f32") -> TensorRecord:
        values = np.asarray(values)
        return cls(name, dtype, tuple(values.shape), _encode_values(values, dtype))

    @property
    def values(self) -> np.ndarray:
        """Float32 view of the payload, in the tensor's shape."""
        return _decode_raw(self.raw, self.dtype).reshape(self.shape)

    def with_values(self, values: np.ndarray) -> TensorRecord:
        """New record with the same name/dtype/shape but replaced contents."""
        values = np.asarray(values)
        if tuple(values.shape) != self.shape:
            raise ValueError(
                f"tensor {self.name!r}: replacement shape {values.shape} "
                f"!= {self.shape}"
            )
        return TensorRecord(self.name, self.dtype, self.shape, _encode_values(values, self.dtype))


def classify_parameter(name: str) -> tuple[int | None, ComponentClass]:
    """Map a parameter name to (layer index or None, component class).

    Layer index comes from the first all-digit path segment after a segment
    equal to "layers". Substring priority: mlp, then attn/attention, then
    everything else in a layer falls into NORM. Non-layer tensors are GLOBAL.
    """
    segments = name.split(".")
    layer = None
    for i in range(len(segments) - 1):
        if segments[i] == "layers" and segments[i + 1].isdigit():
            layer = int(segments[i + 1])
            break
    if layer is None:
        return None, ComponentClass.GLOBAL
    lowered = name.lower()
    if "mlp" in lowered:
        return layer, ComponentClass.MLP
    if "attn" in lowered or "attention" in lowered:
        return layer, ComponentClass.ATT
    return layer, ComponentClass.NORM


@dataclass
class WeightStore:
    """Immutable-by-convention collection of named tensors for one checkpoint."""

    model_id: str
    tensors: dict[str, TensorRecord]
    layer_count: int = 0
    index: dict[tuple[int, ComponentClass], list[str]] = field(default_factory=dict)
    globals: list[str] = field(default_factory=list)
    metadata: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_records(
        cls,
        model_id: str,
        records: list[TensorRecord],
        metadata: dict[str, str] | None = None,
    ) -> WeightStore:
        tensors: dict[str, TensorRecord] = {}
        for rec in records:
            if rec.name in tensors:
                raise StoreFormatError(f"duplicate tensor name {rec.name!r}")
            tensors[rec.name] = rec
        index: dict[tuple[int, ComponentClass], list[str]] = {}
        glob: list[str] = []
        max_layer = -1
        for name in tensors:
            layer, comp = classify_parameter(name)
            if layer is None:
                glob.append(name)
            else:
                index.setdefault((layer, comp), []).append(name)
                max_layer = max(max_layer, layer)
        return cls(
            model_id=model_id,
            tensors=tensors,
            layer_count=max_layer + 1,
            index=index,
            globals=glob,
            metadata=dict(metadata or {}),
        )

    @classmethod
    def from_arrays(
        cls, model_id: str, arrays: dict[str, np.ndarray], dtype: str = "f32"
    ) -> WeightStore:
        return cls.from_records(
            model_id, [TensorRecord.from_array(n, a, dtype) for n, a in arrays.items()]
        )

    def layer_tensor_names(self, layer: int, component: ComponentClass) -> list[str]:
        return list(self.index.get((layer, component), []))

    def values(self, name: str) -> np.ndarray:
        return self.tensors[name].values

    def replace_tensors(self, model_id: str, new_values: dict[str, np.ndarray]) -> WeightStore:
        """Same structure with some tensors' contents replaced (used by merging)."""
        records = []
        for name, rec in self.tensors.items():
            if name in new_values:
                records.append(rec.with_values(new_values[name]))
            else:
                records.append(rec)
        return WeightStore.from_records(model_id, records, self.metadata)


def load_store(path: str | Path, model_id: str | None = None) -> WeightStore:
    """Read a weight file; errors on malformed headers, bad dtypes, duplicate
    names, and overlapping byte ranges."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 8:
        raise StoreFormatError(f"{path}: file too short for header length")
    header_len = int.from_bytes(blob[:8], "little")
    if 8 + header_len > len(blob):
        raise StoreFormatError(f"{path}: header length {header_len} exceeds file size")

    def reject_duplicates(pairs):
        seen = set()
        for key, _ in pairs:
            if key in seen:
                raise StoreFormatError(f"{path}: duplicate tensor name {key!r}")
            seen.add(key)
        return dict(pairs)

    try:
        header = json.loads(
            blob[8 : 8 + header_len].decode("utf-8"), object_pairs_hook=reject_duplicates
        )
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise StoreFormatError(f"{path}: malformed JSON header: {exc}") from exc
    if not isinstance(header, dict):
        raise StoreFormatError(f"{path}: header is not a JSON object")

    data = blob[8 + header_len :]
    metadata = header.pop("__metadata__", {})
    if not isinstance(metadata, dict):
        raise StoreFormatError(f"{path}: __metadata__ is not an object")

    records: list[TensorRecord] = []
    ranges: list[tuple[int, int, str]] = []
    for name, entry in header.items():
        if not isinstance(entry, dict):
            raise StoreFormatError(f"{path}: tensor {name!r} entry is not an object")
        wire_dtype = entry.get("dtype")
        if wire_dtype not in _WIRE_TO_DTYPE:
            raise StoreFormatError(f"{path}: tensor {name!r} has dtype {wire_dtype!r}")
        shape = entry.get("shape")
        offsets = entry.get("data_offsets")
        if (
            not isinstance(shape, list)
            or not all(isinstance(d, int) and d >= 0 for d in shape)
            or not isinstance(offsets, list)
            or len(offsets) != 2
        ):
            raise StoreFormatError(f"{path}: tensor {name!r} has malformed shape/offsets")
        begin, end = offsets
        if not (0 <= begin <= end <= len(data)):
            raise StoreFormatError(
                f"{path}: tensor {name!r} byte range [{begin}, {end}) out of bounds"
            )
        dtype = _WIRE_TO_DTYPE[wire_dtype]
        records.append(TensorRecord(name, dtype, tuple(shape), data[begin:end]))
        ranges.append((begin, end, name))

    ranges.sort()
    for (b0, e0, n0), (b1, e1, n1) in zip(ranges, ranges[1:]):
        if b1 < e0:
            raise StoreFormatError(
                f"{path}: tensors {n0!r} and {n1!r} have overlapping byte ranges"
            )

    if model_id is None:
        model_id = metadata.get("model_id", path.stem)
    return WeightStore.from_records(model_id, records, metadata)


def save_store(store: WeightStore, path: str | Path) -> None:
    """Write a store; load_store(save_store(s)) reproduces s bit-exactly."""
    path = Path(path)
    header: dict[str, object] = {}
    metadata = dict(store.metadata)
    metadata.setdefault("model_id", store.model_id)
    header["__metadata__"] = metadata

    offset = 0
    chunks: list[bytes] = []
    for name, rec in store.tensors.items():
        end = offset + len(rec.raw)
        header[name] = {
            "dtype": _DTYPE_TO_WIRE[rec.dtype],
            "shape": list(rec.shape),
            "data_offsets": [offset, end],
        }
        chunks.append(rec.raw)
        offset = end

    encoded = json.dumps(header, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    # Pad the header with spaces so the data section starts 8-byte aligned,
    # matching the reference container writer.
    pad = (8 - (8 + len(encoded)) % 8) % 8
    encoded += b" " * pad
    with open(path, "wb") as fh:
        fh.write(len(encoded).to_bytes(8, "little"))
        fh.write(encoded)
        for chunk in chunks:
            fh.write(chunk)
