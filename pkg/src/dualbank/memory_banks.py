"""Negative and positive memory banks with asymmetric subsampling.

Bank-pair file layout:

    magic    b"EXDD"                         4 bytes
    version  u16 LE (currently 1)            2 bytes
    hlen     u32 LE                          4 bytes
    header   canonical JSON, hlen bytes
    proj     f32 LE, d_star x d entries
    negative f32 LE, M_neg x bank_dim
    positive f32 LE, M_pos x bank_dim (absent when no positive bank)
    crc32    u32 LE over everything after magic+version, excluding itself

Both banks share one projection matrix and one patch configuration, so
distances compare across banks in a common space. By default banks store
the projected vectors and all scoring happens in d* space; with
store_projected=False the coreset is still chosen in projected space but
original-dimension vectors are stored.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BankChecksumError,
    BankFormatError,
    BankVersionError,
    DataError,
    EmptyPositiveSetError,
)
from .patch_features import PatchConfig
from .pipeline import defective_positions, load_mask, load_or_compute_grid, ordered_map
from .reduction import ProjectionMatrix, greedy_coreset, make_projection, project
from .tensor_store import DatasetManifest

BANK_MAGIC = b"EXDD"
BANK_VERSION = 1


@dataclass(frozen=True)
class MemoryBank:
    polarity: str  # "negative" | "positive"
    vectors: np.ndarray  # [M, bank_dim] float32, read-only
    subsample_rate: float
    projection: ProjectionMatrix
    patch_config: PatchConfig
    coreset_seed: int
    source_count: int
    store_projected: bool = True
    covering_radius: float = 0.0

    def __post_init__(self):
        self.vectors.flags.writeable = False

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class BankPair:
    negative: MemoryBank
    positive: MemoryBank | None = None
    config_echo: dict | None = None  # full run configuration, carried verbatim

    def __post_init__(self):
        if self.positive is not None:
            if self.positive.projection is not self.negative.projection and not np.array_equal(
                self.positive.projection.entries, self.negative.projection.entries
            ):
                raise ValueError("banks must share one projection matrix")
            if self.positive.patch_config != self.negative.patch_config:
                raise ValueError("banks must share one patch config")

    @property
    def projection(self) -> ProjectionMatrix:
        return self.negative.projection

    @property
    def patch_config(self) -> PatchConfig:
        return self.negative.patch_config

    @property
    def store_projected(self) -> bool:
        return self.negative.store_projected

    def project_grid(self, grid) -> np.ndarray:
        """Map a fused PatchGrid into bank space: [h*, w*, bank_dim]."""
        flat = grid.flat()
        if self.store_projected:
            out = project(self.projection, flat)
        else:
            if flat.shape[1] != self.negative.dim:
                raise ValueError(
                    f"grid dim {flat.shape[1]} != bank dim {self.negative.dim}"
                )
            out = flat.astype(np.float32, copy=False)
        return out.reshape(grid.height, grid.width, -1)


def _pool_vectors(entries, cfg, patches_dir, jobs):
    def one(entry):
        return load_or_compute_grid(entry, cfg, patches_dir).flat()

    mats = ordered_map(one, entries, jobs)
    dims = {m.shape[1] for m in mats}
    if len(dims) > 1:
        raise DataError(f"feature dimension mismatch across images: {sorted(dims)}")
    return np.concatenate(mats, axis=0)


def _pool_defective_vectors(entries, cfg, tau, patches_dir, jobs):
    def one(entry):
        grid = load_or_compute_grid(entry, cfg, patches_dir)
        mask = load_mask(entry)
        keep = defective_positions(mask, (grid.height, grid.width), cfg, tau)
        return grid.flat()[keep.reshape(-1)]

    mats = ordered_map(one, entries, jobs)
    dims = {m.shape[1] for m in mats}
    if len(dims) > 1:
        raise DataError(f"feature dimension mismatch across images: {sorted(dims)}")
    pooled = np.concatenate(mats, axis=0)
    if pooled.shape[0] == 0:
        raise EmptyPositiveSetError(
            "no patch had mask coverage >= tau in any anomalous image"
        )
    return pooled


def _subsample(pooled, projection, rate, coreset_seed, store_projected):
    projected = project(projection, pooled)
    selection = greedy_coreset(projected, rate, coreset_seed)
    source = projected if store_projected else pooled.astype(np.float32, copy=False)
    vectors = np.ascontiguousarray(source[selection.indices])
    return vectors, selection


def bank_from_vectors(
    pooled: np.ndarray,
    polarity: str,
    projection: ProjectionMatrix,
    rate: float,
    coreset_seed: int,
    patch_config: PatchConfig,
    store_projected: bool = True,
) -> MemoryBank:
    """Build one bank from an in-memory [N, d] pool of patch vectors."""
    pooled = np.asarray(pooled, dtype=np.float32)
    if pooled.ndim != 2 or pooled.shape[0] < 1:
        raise ValueError(f"expected a non-empty [N, d] pool, got shape {pooled.shape}")
    if pooled.shape[1] != projection.cols:
        raise ValueError(
            f"pool dim {pooled.shape[1]} != projection input dim {projection.cols}"
        )
    vectors, selection = _subsample(pooled, projection, rate, coreset_seed, store_projected)
    return MemoryBank(
        polarity=polarity,
        vectors=vectors,
        subsample_rate=float(rate),
        projection=projection,
        patch_config=patch_config,
        coreset_seed=int(coreset_seed),
        source_count=pooled.shape[0],
        store_projected=store_projected,
        covering_radius=selection.covering_radius,
    )


def build_negative(
    manifest: DatasetManifest,
    cfg: PatchConfig,
    proj_seed: int,
    coreset_seed: int,
    rate: float = 0.02,
    d_star: int = 128,
    store_projected: bool = True,
    patches_dir=None,
    jobs: int | None = 1,
) -> MemoryBank:
    """Pool every nominal patch, project, and coreset-subsample at `rate`."""
    entries = manifest.nominal
    if not entries:
        raise DataError("manifest has no nominal entries")
    pooled = _pool_vectors(entries, cfg, patches_dir, jobs)
    projection = make_projection(pooled.shape[1], d_star, proj_seed)
    vectors, selection = _subsample(pooled, projection, rate, coreset_seed, store_projected)
    return MemoryBank(
        polarity="negative",
        vectors=vectors,
        subsample_rate=float(rate),
        projection=projection,
        patch_config=cfg,
        coreset_seed=int(coreset_seed),
        source_count=pooled.shape[0],
        store_projected=store_projected,
        covering_radius=selection.covering_radius,
    )


def build_positive(
    manifest: DatasetManifest,
    cfg: PatchConfig,
    shared_projection: ProjectionMatrix,
    coreset_seed: int,
    rate: float = 0.10,
    mask_coverage_tau: float = 0.25,
    store_projected: bool = True,
    patches_dir=None,
    jobs: int | None = 1,
) -> MemoryBank:
    """Pool only defect-covered patches of anomalous entries, then subsample.

    A patch counts as defective when at least `mask_coverage_tau` of the
    mask pixels inside its receptive field are set.
    """
    entries = manifest.anomalous
    if not entries:
        raise DataError("manifest has no anomalous entries")
    pooled = _pool_defective_vectors(entries, cfg, mask_coverage_tau, patches_dir, jobs)
    if pooled.shape[1] != shared_projection.cols:
        raise DataError(
            f"feature dim {pooled.shape[1]} != projection input dim {shared_projection.cols}"
        )
    vectors, selection = _subsample(
        pooled, shared_projection, rate, coreset_seed, store_projected
    )
    return MemoryBank(
        polarity="positive",
        vectors=vectors,
        subsample_rate=float(rate),
        projection=shared_projection,
        patch_config=cfg,
        coreset_seed=int(coreset_seed),
        source_count=pooled.shape[0],
        store_projected=store_projected,
        covering_radius=selection.covering_radius,
    )


def _bank_meta(bank: MemoryBank | None):
    if bank is None:
        return None
    return {
        "rate": bank.subsample_rate,
        "coreset_seed": bank.coreset_seed,
        "source_count": bank.source_count,
        "count": bank.size,
        "covering_radius": bank.covering_radius,
    }


def _header_for(pair: BankPair) -> dict:
    proj = pair.projection
    return {
        "d": proj.cols,
        "d_star": proj.rows,
        "projection_seed": proj.seed,
        "patch": pair.patch_config.to_dict(),
        "store_projected": pair.store_projected,
        "bank_dim": pair.negative.dim,
        "negative": _bank_meta(pair.negative),
        "positive": _bank_meta(pair.positive),
        "config_echo": pair.config_echo,
    }


def save_bank_pair(pair: BankPair, path) -> None:
    header = json.dumps(_header_for(pair), sort_keys=True, separators=(",", ":")).encode()
    body = struct.pack("<I", len(header)) + header
    body += pair.projection.entries.astype("<f4", copy=False).tobytes(order="C")
    body += pair.negative.vectors.astype("<f4", copy=False).tobytes(order="C")
    if pair.positive is not None:
        body += pair.positive.vectors.astype("<f4", copy=False).tobytes(order="C")
    blob = BANK_MAGIC + struct.pack("<H", BANK_VERSION) + body
    blob += struct.pack("<I", zlib.crc32(body))
    Path(path).write_bytes(blob)


def load_bank_pair(path) -> BankPair:
    raw = Path(path).read_bytes()
    if len(raw) < 14:
        raise BankFormatError(f"{path}: too short ({len(raw)} bytes)")
    if raw[:4] != BANK_MAGIC:
        raise BankFormatError(f"{path}: magic {raw[:4]!r} != {BANK_MAGIC!r}")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != BANK_VERSION:
        raise BankVersionError(f"{path}: version {version}, expected {BANK_VERSION}")
    body, (stored_crc,) = raw[6:-4], struct.unpack_from("<I", raw, len(raw) - 4)
    if zlib.crc32(body) != stored_crc:
        raise BankChecksumError(f"{path}: CRC32 mismatch")
    (hlen,) = struct.unpack_from("<I", body, 0)
    if len(body) < 4 + hlen:
        raise BankFormatError(f"{path}: truncated header")
    try:
        header = json.loads(body[4 : 4 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BankFormatError(f"{path}: unreadable header ({exc})") from exc

    d, d_star = header["d"], header["d_star"]
    bank_dim = header["bank_dim"]
    cfg = PatchConfig.from_dict(header["patch"])
    store_projected = header["store_projected"]
    offset = 4 + hlen

    def take(count):
        nonlocal offset
        nbytes = count * 4
        if len(body) < offset + nbytes:
            raise BankFormatError(f"{path}: truncated payload")
        arr = np.frombuffer(body, dtype="<f4", count=count, offset=offset)
        offset += nbytes
        return arr

    entries = take(d_star * d).reshape(d_star, d).astype(np.float32, copy=True)
    entries.flags.writeable = False
    projection = ProjectionMatrix(entries=entries, seed=int(header["projection_seed"]))

    def one_bank(meta, polarity):
        vectors = take(meta["count"] * bank_dim).reshape(meta["count"], bank_dim)
        return MemoryBank(
            polarity=polarity,
            vectors=vectors.astype(np.float32, copy=True),
            subsample_rate=float(meta["rate"]),
            projection=projection,
            patch_config=cfg,
            coreset_seed=int(meta["coreset_seed"]),
            source_count=int(meta["source_count"]),
            store_projected=store_projected,
            covering_radius=float(meta["covering_radius"]),
        )

    negative = one_bank(header["negative"], "negative")
    positive = None
    if header.get("positive") is not None:
        positive = one_bank(header["positive"], "positive")
    if offset != len(body):
        raise BankFormatError(f"{path}: {len(body) - offset} trailing payload bytes")
    return BankPair(negative=negative, positive=positive, config_echo=header.get("config_echo"))
