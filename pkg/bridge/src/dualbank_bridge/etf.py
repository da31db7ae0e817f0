"""Standalone ETF tensor writer.

The bridge talks to the detection engine only through its file formats,
so this module re-implements the ETF byte layout from the interface
contract rather than importing the engine:

    b"ETF1" | u8 dtype (0 = f32, 1 = u8) | u8 rank | rank x u64 LE dims
    | raw little-endian row-major scalars
"""

from __future__ import annotations

import struct

import numpy as np

_CODES = {"float32": 0, "uint8": 1}


def write_etf(array: np.ndarray, path) -> None:
    array = np.asarray(array)
    code = _CODES.get(array.dtype.name)
    if code is None:
        raise ValueError(f"ETF holds float32 or uint8, got {array.dtype}")
    if not 1 <= array.ndim <= 4:
        raise ValueError(f"ETF rank must be 1..4, got {array.ndim}")
    if any(s < 1 for s in array.shape):
        raise ValueError(f"zero-sized dimension in {array.shape}")
    with open(path, "wb") as fh:
        fh.write(b"ETF1")
        fh.write(struct.pack("<BB", code, array.ndim))
        fh.write(struct.pack(f"<{array.ndim}Q", *array.shape))
        fh.write(np.ascontiguousarray(array).astype(f"<{array.dtype.str[1:]}").tobytes())


def read_etf(path) -> np.ndarray:
    """Self-check reader; the engine's reader is the interface authority."""
    raw = open(path, "rb").read()
    if raw[:4] != b"ETF1":
        raise ValueError(f"{path}: bad magic {raw[:4]!r}")
    code, rank = struct.unpack_from("<BB", raw, 4)
    shape = struct.unpack_from(f"<{rank}Q", raw, 6)
    dtype = {0: "<f4", 1: "u1"}[code]
    data = np.frombuffer(raw, dtype=dtype, count=int(np.prod(shape)), offset=6 + 8 * rank)
    return data.reshape(shape).copy()
