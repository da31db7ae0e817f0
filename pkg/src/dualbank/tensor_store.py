"""Binary tensor container (ETF) and dataset manifests.

ETF file layout, byte for byte:

    magic   b"ETF1"                      4 bytes
    dtype   u8 code (0 = f32, 1 = u8)    1 byte
    rank    u8, 1..4                     1 byte
    dims    rank x u64 little-endian     8 * rank bytes
    data    raw scalars, little-endian, row-major

Tensors are plain numpy arrays (float32 or uint8, C-contiguous). The
format is endianness-pinned so files written anywhere parse identically.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    InvalidHeaderError,
    ManifestError,
    TruncatedError,
    UnknownDtypeError,
)

ETF_MAGIC = b"ETF1"
MAX_RANK = 4

_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("u1"): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}

ROLES = ("nominal", "anomalous", "test")


def write_etf(tensor: np.ndarray, path) -> None:
    """Serialize a float32/uint8 array of rank 1..4 to `path`."""
    tensor = np.asarray(tensor)
    if not 1 <= tensor.ndim <= MAX_RANK:
        raise ValueError(f"rank {tensor.ndim} outside 1..{MAX_RANK}")
    arr = np.ascontiguousarray(tensor)
    code = _DTYPE_CODES.get(np.dtype(arr.dtype.str.replace(">", "<")))
    if code is None:
        raise ValueError(f"unsupported dtype {arr.dtype}; expected float32 or uint8")
    if any(s < 1 for s in arr.shape):
        raise ValueError(f"zero-sized dimension in shape {arr.shape}")
    header = ETF_MAGIC + struct.pack("<BB", code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_etf(path) -> np.ndarray:
    """Inverse of write_etf. Raises distinct errors for each corruption mode."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 6:
        raise TruncatedError(f"{path}: {len(raw)} bytes, header needs at least 6")
    if raw[:4] != ETF_MAGIC:
        raise BadMagicError(f"{path}: magic {raw[:4]!r} != {ETF_MAGIC!r}")
    code, rank = struct.unpack_from("<BB", raw, 4)
    if code not in _CODE_DTYPES:
        raise UnknownDtypeError(f"{path}: unknown dtype code {code}")
    if not 1 <= rank <= MAX_RANK:
        raise InvalidHeaderError(f"{path}: rank {rank} outside 1..{MAX_RANK}")
    offset = 6 + 8 * rank
    if len(raw) < offset:
        raise TruncatedError(f"{path}: header cut short at {len(raw)} bytes")
    shape = struct.unpack_from(f"<{rank}Q", raw, 6)
    if any(s < 1 for s in shape):
        raise InvalidHeaderError(f"{path}: zero-sized dimension in shape {shape}")
    dtype = _CODE_DTYPES[code]
    count = 1
    for s in shape:
        count *= s
    expected = offset + count * dtype.itemsize
    if len(raw) != expected:
        raise TruncatedError(f"{path}: {len(raw)} bytes, expected {expected}")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    return data.reshape(shape).astype(dtype.newbyteorder("="), copy=True)


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    role: str
    label: int
    feature_paths: dict[int, Path]
    image_size: tuple[int, int]
    mask_path: Path | None = None


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    root: Path = field(default_factory=Path)

    def with_role(self, role: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.role == role]

    @property
    def nominal(self) -> list[ManifestEntry]:
        return self.with_role("nominal")

    @property
    def anomalous(self) -> list[ManifestEntry]:
        return self.with_role("anomalous")

    @property
    def test(self) -> list[ManifestEntry]:
        return self.with_role("test")


def _check(cond, path: str, msg: str):
    if not cond:
        raise ManifestError(f"{path}: {msg}")


def load_manifest(path, levels=(2, 3)) -> DatasetManifest:
    """Parse and validate a manifest JSON document.

    Referenced tensor files are not opened. `levels` is the configured
    feature hierarchy; every entry must reference exactly those levels.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON ({exc})") from exc
    return parse_manifest(doc, root=path.parent, levels=levels)


def parse_manifest(doc, root: Path, levels=(2, 3)) -> DatasetManifest:
    levels = tuple(int(l) for l in levels)
    _check(isinstance(doc, dict), "$", "manifest must be a JSON object")
    _check(doc.get("version") == 1, "$.version", f"expected 1, got {doc.get('version')!r}")
    raw_entries = doc.get("entries")
    _check(isinstance(raw_entries, list), "$.entries", "must be a list")
    entries = []
    for i, raw in enumerate(raw_entries):
        loc = f"$.entries[{i}]"
        _check(isinstance(raw, dict), loc, "must be an object")
        image_id = raw.get("image_id")
        _check(isinstance(image_id, str) and image_id, f"{loc}.image_id", "non-empty string required")
        role = raw.get("role")
        _check(role in ROLES, f"{loc}.role", f"must be one of {ROLES}, got {role!r}")
        label = raw.get("label")
        _check(label in (0, 1), f"{loc}.label", f"must be 0 or 1, got {label!r}")
        if role == "nominal":
            _check(label == 0, f"{loc}.label", "nominal entries must carry label 0")
        if role == "anomalous":
            _check(label == 1, f"{loc}.label", "anomalous entries must carry label 1")
        fp = raw.get("feature_paths")
        _check(isinstance(fp, dict), f"{loc}.feature_paths", "must be an object")
        got = sorted(fp.keys())
        want = sorted(str(l) for l in levels)
        _check(
            got == want,
            f"{loc}.feature_paths",
            f"must contain exactly levels {want}, got {got}",
        )
        feature_paths = {}
        for key, value in fp.items():
            _check(
                isinstance(value, str) and value,
                f"{loc}.feature_paths.{key}",
                "non-empty path string required",
            )
            feature_paths[int(key)] = root / value
        mask = raw.get("mask_path")
        if role == "anomalous":
            _check(
                isinstance(mask, str) and mask,
                f"{loc}.mask_path",
                "anomalous entries require a mask_path",
            )
        mask_path = root / mask if isinstance(mask, str) and mask else None
        size = raw.get("image_size")
        _check(
            isinstance(size, (list, tuple)) and len(size) == 2,
            f"{loc}.image_size",
            "must be [height, width]",
        )
        _check(
            all(isinstance(v, int) and v >= 1 for v in size),
            f"{loc}.image_size",
            "entries must be positive integers",
        )
        entries.append(
            ManifestEntry(
                image_id=image_id,
                role=role,
                label=int(label),
                feature_paths=feature_paths,
                image_size=(int(size[0]), int(size[1])),
                mask_path=mask_path,
            )
        )
    return DatasetManifest(entries=entries, root=root)


def save_manifest(manifest_doc: dict, path) -> None:
    """Write a manifest document with stable key order."""
    Path(path).write_text(json.dumps(manifest_doc, indent=2, sort_keys=True) + "\n")
