"""Binary tensor container for weights, activations, and quantized payloads.

Layout (all little-endian, no alignment padding):

    magic   4s   b"FLXT"
    version u8   currently 1
    count   u32  number of tensor records

followed by ``count`` records:

    name_len u16, name utf-8
    dtype    u8   see DTYPE_TAGS
    ndim     u8, shape u64 * ndim
    has_params u8; if 1:
        bits u8, symmetric u8, granularity u8 (0 tensor, 1 token, 2 channel)
        group_count u32, scales f64 * group_count, zeros f64 * group_count
    payload_nbytes u64, payload bytes

INT4 payloads pack two signed codes per byte, low nibble first, in row-major
element order; the trailing nibble of an odd-length tensor is zero.  Records
are written in sorted name order, so equal content yields identical bytes
regardless of insertion order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .quant import QuantParams, QuantizedTensor

MAGIC = b"FLXT"
VERSION = 1

DTYPE_TAGS = {
    "f64": 0,
    "f32": 1,
    "i8": 2,
    "u8": 3,
    "i16": 4,
    "i32": 5,
    "i64": 6,
    "i4": 7,  # packed nibbles, signed
}
_TAG_NAMES = {v: k for k, v in DTYPE_TAGS.items()}
_NUMPY_DTYPES = {
    "f64": np.dtype("<f8"),
    "f32": np.dtype("<f4"),
    "i8": np.dtype("<i1"),
    "u8": np.dtype("<u1"),
    "i16": np.dtype("<i2"),
    "i32": np.dtype("<i4"),
    "i64": np.dtype("<i8"),
}
_GRAN_TAGS = {"per_tensor": 0, "per_token": 1, "per_channel": 2}
_GRAN_NAMES = {v: k for k, v in _GRAN_TAGS.items()}


class TensorFormatError(Exception):
    """Malformed or truncated container."""


@dataclass
class TensorRecord:
    """One named tensor with optional quantization parameters."""

    array: np.ndarray
    params: QuantParams | None = None

    def as_quantized(self, bits: int) -> QuantizedTensor:
        if self.params is None:
            raise ValueError("record carries no quantization parameters")
        return QuantizedTensor(q=self.array.astype(np.int32), bits=bits, params=self.params)


def pack_int4(values: np.ndarray) -> bytes:
    """Pack signed 4-bit codes, two per byte, low nibble first."""
    flat = np.asarray(values).reshape(-1).astype(np.int64)
    if flat.size and (flat.min() < -8 or flat.max() > 7):
        raise ValueError("int4 values must lie in [-8, 7]")
    nibbles = (flat & 0xF).astype(np.uint8)
    if nibbles.size % 2:
        nibbles = np.concatenate([nibbles, np.zeros(1, dtype=np.uint8)])
    pairs = nibbles.reshape(-1, 2)
    return (pairs[:, 0] | (pairs[:, 1] << 4)).astype(np.uint8).tobytes()


def unpack_int4(data: bytes, count: int) -> np.ndarray:
    """Inverse of ``pack_int4``; returns int8 codes of length ``count``."""
    raw = np.frombuffer(data, dtype=np.uint8)
    if raw.size * 2 < count:
        raise TensorFormatError(f"packed int4 payload too short for {count} elements")
    low = raw & 0xF
    high = raw >> 4
    nibbles = np.empty(raw.size * 2, dtype=np.uint8)
    nibbles[0::2] = low
    nibbles[1::2] = high
    codes = nibbles[:count].astype(np.int8)
    codes[codes > 7] -= 16
    return codes


def _dtype_name(array: np.ndarray) -> str:
    for name, dt in _NUMPY_DTYPES.items():
        if array.dtype == dt:
            return name
    raise ValueError(f"unsupported array dtype {array.dtype}")


def save_tensors(
    path: str | Path,
    tensors: dict[str, TensorRecord | np.ndarray],
    int4_names: set[str] | None = None,
) -> None:
    """Write named tensors; names in ``int4_names`` are nibble-packed."""
    int4_names = int4_names or set()
    chunks: list[bytes] = [MAGIC, struct.pack("<BI", VERSION, len(tensors))]
    for name in sorted(tensors):  # canonical order: identical bytes for equal content
        record = tensors[name]
        if isinstance(record, np.ndarray):
            record = TensorRecord(array=record)
        array = np.ascontiguousarray(record.array)
        name_bytes = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name_bytes)) + name_bytes)

        if name in int4_names:
            dtype_name = "i4"
            payload = pack_int4(array)
        else:
            if array.dtype == np.float64:
                array = array.astype("<f8")
            dtype_name = _dtype_name(array)
            payload = array.astype(_NUMPY_DTYPES[dtype_name]).tobytes()
        chunks.append(struct.pack("<BB", DTYPE_TAGS[dtype_name], array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}Q", *array.shape))

        if record.params is not None:
            p = record.params
            scales = np.atleast_1d(np.asarray(p.scale, dtype="<f8"))
            zeros = np.atleast_1d(np.asarray(p.zero, dtype="<f8"))
            if scales.shape != zeros.shape:
                raise ValueError("scale and zero arrays must have matching shapes")
            chunks.append(
                struct.pack(
                    "<BBBBI",
                    1,
                    8,  # params are stored at full width; consumer reinterprets
                    1 if p.symmetry == "symmetric" else 0,
                    _GRAN_TAGS[p.granularity],
                    scales.size,
                )
            )
            chunks.append(scales.tobytes())
            chunks.append(zeros.tobytes())
        else:
            chunks.append(struct.pack("<B", 0))
        chunks.append(struct.pack("<Q", len(payload)))
        chunks.append(payload)
    Path(path).write_bytes(b"".join(chunks))


def load_tensors(path: str | Path) -> dict[str, TensorRecord]:
    """Read a container back into named records."""
    data = Path(path).read_bytes()
    view = memoryview(data)
    off = 0

    def take(n: int) -> memoryview:
        nonlocal off
        if off + n > len(view):
            raise TensorFormatError(f"truncated container at offset {off}")
        chunk = view[off : off + n]
        off += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise TensorFormatError("bad magic; not a tensor container")
    version, count = struct.unpack("<BI", take(5))
    if version != VERSION:
        raise TensorFormatError(f"unsupported container version {version}")

    out: dict[str, TensorRecord] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        dtype_tag, ndim = struct.unpack("<BB", take(2))
        if dtype_tag not in _TAG_NAMES:
            raise TensorFormatError(f"unknown dtype tag {dtype_tag}")
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim)) if ndim else ()
        (has_params,) = struct.unpack("<B", take(1))
        params = None
        if has_params:
            _bits, symmetric, gran_tag, group_count = struct.unpack("<BBBI", take(7))
            if gran_tag not in _GRAN_NAMES:
                raise TensorFormatError(f"unknown granularity tag {gran_tag}")
            scales = np.frombuffer(take(8 * group_count), dtype="<f8").copy()
            zeros = np.frombuffer(take(8 * group_count), dtype="<f8").copy()
            granularity = _GRAN_NAMES[gran_tag]
            if granularity == "per_tensor":
                scales, zeros = scales.reshape(()), zeros.reshape(())
            params = QuantParams(
                scale=scales,
                zero=zeros,
                symmetry="symmetric" if symmetric else "asymmetric",
                granularity=granularity,
            )
        (nbytes,) = struct.unpack("<Q", take(8))
        payload = bytes(take(nbytes))
        numel = int(np.prod(shape)) if shape else 1
        dtype_name = _TAG_NAMES[dtype_tag]
        if dtype_name == "i4":
            array = unpack_int4(payload, numel).reshape(shape)
        else:
            array = np.frombuffer(payload, dtype=_NUMPY_DTYPES[dtype_name]).copy().reshape(shape)
        out[name] = TensorRecord(array=array, params=params)
    if off != len(view):
        raise TensorFormatError(f"{len(view) - off} trailing bytes after last record")
    return out


def save_tensor(
    path: str | Path, array: np.ndarray, params: QuantParams | None = None, int4: bool = False
) -> None:
    """Single-tensor convenience wrapper."""
    save_tensors(path, {"tensor": TensorRecord(array=array, params=params)},
                 int4_names={"tensor"} if int4 else None)


def load_tensor(path: str | Path) -> TensorRecord:
    records = load_tensors(path)
    if len(records) != 1:
        raise TensorFormatError(f"expected a single-tensor container, found {len(records)}")
    return next(iter(records.values()))
