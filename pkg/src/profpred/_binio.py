"""Little-endian binary record helpers shared by the on-disk formats."""
from __future__ import annotations

import io
import struct

import numpy as np

from .exceptions import MalformedRecordError


def write_u32(fh, value: int) -> None:
    if not 0 <= value < 2**32:
        raise ValueError(f"value {value} outside u32 range")
    fh.write(struct.pack("<I", value))


def read_u32(fh) -> int:
    raw = fh.read(4)
    if len(raw) != 4:
        raise MalformedRecordError("truncated file: expected u32")
    return struct.unpack("<I", raw)[0]


def write_u8(fh, value: int) -> None:
    fh.write(struct.pack("<B", value))


def read_u8(fh) -> int:
    raw = fh.read(1)
    if len(raw) != 1:
        raise MalformedRecordError("truncated file: expected u8")
    return struct.unpack("<B", raw)[0]


def write_f32_array(fh, arr: np.ndarray) -> None:
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_f32_array(fh, shape: tuple[int, ...]) -> np.ndarray:
    count = int(np.prod(shape)) if shape else 1
    raw = fh.read(4 * count)
    if len(raw) != 4 * count:
        raise MalformedRecordError("truncated file: expected float32 block")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()


def write_str(fh, text: str) -> None:
    data = text.encode("utf-8")
    write_u32(fh, len(data))
    fh.write(data)


def read_str(fh) -> str:
    length = read_u32(fh)
    raw = fh.read(length)
    if len(raw) != length:
        raise MalformedRecordError("truncated file: expected string bytes")
    return raw.decode("utf-8")


def check_magic(fh, magic: bytes) -> None:
    raw = fh.read(len(magic))
    if raw != magic:
        raise MalformedRecordError(
            f"bad magic {raw!r}, expected {magic!r}"
        )


def open_bytes(data) -> io.BytesIO:
    if isinstance(data, (bytes, bytearray)):
        return io.BytesIO(data)
    return data
