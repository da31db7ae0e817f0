"""Manifest-driven plumbing shared by bank building, scoring and the CLI.

Patch grids persist as ETF [h*, w*, d] files plus a JSON sidecar carrying
the patch configuration and source image size.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .errors import DataError
from .patch_features import PatchConfig, PatchGrid, patchify_layers
from .tensor_store import ManifestEntry, read_etf, write_etf


def ordered_map(fn, items, jobs: int | None = None):
    """Map preserving input order; jobs<=1 stays sequential."""
    items = list(items)
    if jobs is not None and jobs <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def compute_grid(entry: ManifestEntry, cfg: PatchConfig) -> PatchGrid:
    """Load the entry's per-level feature maps and patchify + fuse them."""
    maps = {}
    for level in cfg.levels:
        path = entry.feature_paths.get(level)
        if path is None:
            raise DataError(f"{entry.image_id}: no feature path for level {level}")
        fm = read_etf(path)
        if fm.ndim != 3 or fm.dtype != np.float32:
            raise DataError(
                f"{entry.image_id}: level {level} map must be rank-3 float32, "
                f"got shape {fm.shape} dtype {fm.dtype}"
            )
        maps[level] = fm
    return patchify_layers(maps, cfg, image_size=entry.image_size)


def grid_paths(out_dir: Path, image_id: str) -> tuple[Path, Path]:
    base = Path(out_dir) / image_id
    return base.with_suffix(".etf"), base.with_suffix(".json")


def write_patch_grid(grid: PatchGrid, cfg: PatchConfig, out_dir, image_id: str) -> Path:
    etf_path, sidecar_path = grid_paths(Path(out_dir), image_id)
    etf_path.parent.mkdir(parents=True, exist_ok=True)
    write_etf(grid.vectors, etf_path)
    sidecar = {
        "p": cfg.patch_size,
        "s": cfg.stride,
        "levels": list(cfg.levels),
        "source_image_size": list(grid.source_image_size),
    }
    sidecar_path.write_text(json.dumps(sidecar, sort_keys=True) + "\n")
    return etf_path


def read_patch_grid(patches_dir, image_id: str, cfg: PatchConfig | None = None) -> PatchGrid:
    etf_path, sidecar_path = grid_paths(Path(patches_dir), image_id)
    try:
        sidecar = json.loads(sidecar_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{image_id}: unreadable patch-grid sidecar ({exc})") from exc
    if cfg is not None:
        stored = (sidecar.get("p"), sidecar.get("s"), list(sidecar.get("levels", [])))
        wanted = (cfg.patch_size, cfg.stride, list(cfg.levels))
        if stored != wanted:
            raise DataError(
                f"{image_id}: patch-grid sidecar {stored} does not match "
                f"configured (p, s, levels) {wanted}"
            )
    vectors = read_etf(etf_path)
    size = sidecar.get("source_image_size")
    return PatchGrid(vectors=vectors, source_image_size=(int(size[0]), int(size[1])))


def load_or_compute_grid(
    entry: ManifestEntry, cfg: PatchConfig, patches_dir=None
) -> PatchGrid:
    """Prefer a patchify output when present, else compute from features."""
    if patches_dir is not None:
        etf_path, sidecar_path = grid_paths(Path(patches_dir), entry.image_id)
        if etf_path.exists() and sidecar_path.exists():
            return read_patch_grid(patches_dir, entry.image_id, cfg)
    return compute_grid(entry, cfg)


def load_mask(entry: ManifestEntry) -> np.ndarray:
    """Binary defect mask [H, W] uint8 matching the entry's image size."""
    if entry.mask_path is None:
        raise DataError(f"{entry.image_id}: entry has no mask_path")
    mask = read_etf(entry.mask_path)
    if mask.ndim != 2 or mask.dtype != np.uint8:
        raise DataError(
            f"{entry.image_id}: mask must be rank-2 uint8, got shape "
            f"{mask.shape} dtype {mask.dtype}"
        )
    if mask.shape != entry.image_size:
        raise DataError(
            f"{entry.image_id}: mask shape {mask.shape} != image_size {entry.image_size}"
        )
    return mask


def defective_positions(
    mask: np.ndarray, grid_shape: tuple[int, int], cfg: PatchConfig, tau: float
) -> np.ndarray:
    """Boolean [h*, w*] of patches whose footprint is >= tau defective.

    The footprint of patch (h, w) is its own grid cell scaled to image
    resolution; coverage is the mean mask value over that pixel block, so
    a mask covering exactly one cell marks exactly one patch.
    """
    h_star, w_star = grid_shape
    img_h, img_w = mask.shape
    s = cfg.stride
    # Position of grid row gi on the pre-stride grid is gi * s.
    full_h = (h_star - 1) * s + 1
    full_w = (w_star - 1) * s + 1
    binary = (mask > 0).astype(np.float64)
    integral = np.zeros((img_h + 1, img_w + 1), dtype=np.float64)
    integral[1:, 1:] = binary.cumsum(axis=0).cumsum(axis=1)
    out = np.zeros((h_star, w_star), dtype=bool)
    for gi in range(h_star):
        h = gi * s
        y0 = (h * img_h) // full_h
        y1 = max(((h + 1) * img_h) // full_h, y0 + 1)
        for gj in range(w_star):
            w = gj * s
            x0 = (w * img_w) // full_w
            x1 = max(((w + 1) * img_w) // full_w, x0 + 1)
            area = (y1 - y0) * (x1 - x0)
            covered = (
                integral[y1, x1] - integral[y0, x1] - integral[y1, x0] + integral[y0, x0]
            )
            out[gi, gj] = covered / area >= tau
    return out
