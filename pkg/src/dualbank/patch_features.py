"""Locally aware patch features.

Per-layer backbone maps [c, h, w] are mean-pooled over clamped p x p
neighborhoods (one patch per position at stride 1), non-reference layers
are bilinearly upsampled to the reference grid, and channels concatenated.

Border policy is clamp-to-edge replication, so every position owns exactly
p^2 (possibly repeated) members and means stay unbiased at borders.
Bilinear resizing uses half-pixel centers (align_corners=false).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass(frozen=True)
class PatchConfig:
    patch_size: int = 3
    stride: int = 1
    levels: tuple[int, ...] = (2, 3)

    def __post_init__(self):
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise ValueError(f"patch_size must be odd and >= 1, got {self.patch_size}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if not self.levels:
            raise ValueError("levels must be non-empty")
        object.__setattr__(self, "levels", tuple(int(l) for l in self.levels))

    def to_dict(self) -> dict:
        return {"patch_size": self.patch_size, "stride": self.stride, "levels": list(self.levels)}

    @classmethod
    def from_dict(cls, d: dict) -> "PatchConfig":
        return cls(
            patch_size=int(d["patch_size"]),
            stride=int(d["stride"]),
            levels=tuple(d["levels"]),
        )


@dataclass
class PatchGrid:
    vectors: np.ndarray  # [h*, w*, d] float32
    source_image_size: tuple[int, int]

    def __post_init__(self):
        if self.vectors.ndim != 3:
            raise ValueError(f"patch grid must be rank 3, got {self.vectors.ndim}")
        self.source_image_size = (int(self.source_image_size[0]), int(self.source_image_size[1]))

    @property
    def height(self) -> int:
        return self.vectors.shape[0]

    @property
    def width(self) -> int:
        return self.vectors.shape[1]

    @property
    def dim(self) -> int:
        return self.vectors.shape[2]

    def flat(self) -> np.ndarray:
        """[h* x w*, d] view in row-major patch order."""
        return self.vectors.reshape(-1, self.vectors.shape[2])


def neighborhood(h: int, w: int, p: int, h_star: int, w_star: int) -> list[tuple[int, int]]:
    """The p x p index multiset around (h, w), clamped to the border.

    Always exactly p^2 entries; border positions repeat their edge
    neighbors, which makes the mean equal edge-replicated pooling.
    """
    half = p // 2
    rows = np.clip(np.arange(h - half, h + half + 1), 0, h_star - 1)
    cols = np.clip(np.arange(w - half, w + half + 1), 0, w_star - 1)
    return [(int(a), int(b)) for a in rows for b in cols]


def aggregate_patches(feature_map: np.ndarray, cfg: PatchConfig, image_size=None) -> PatchGrid:
    """Mean-pool a [c, h, w] float32 map into its patch-feature grid.

    Output position (h, w) is the channel-wise mean over
    neighborhood(h, w); with stride s only positions with h, w = 0 mod s
    are kept.
    """
    if feature_map.ndim != 3:
        raise ValueError(f"feature map must be [c, h, w], got shape {feature_map.shape}")
    if feature_map.dtype != np.float32:
        raise ValueError(f"feature map must be float32, got {feature_map.dtype}")
    p, s = cfg.patch_size, cfg.stride
    half = p // 2
    padded = np.pad(feature_map, ((0, 0), (half, half), (half, half)), mode="edge")
    windows = sliding_window_view(padded, (p, p), axis=(1, 2))  # [c, h, w, p, p]
    pooled = windows.mean(axis=(3, 4), dtype=np.float64)
    pooled = pooled[:, ::s, ::s]
    vectors = np.ascontiguousarray(pooled.transpose(1, 2, 0)).astype(np.float32)
    if image_size is None:
        image_size = (feature_map.shape[1], feature_map.shape[2])
    return PatchGrid(vectors=vectors, source_image_size=image_size)


def bilinear_resize(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize [h, w, d] with half-pixel centers, clamped at the borders."""
    in_h, in_w = grid.shape[:2]
    y = np.clip((np.arange(out_h) + 0.5) * in_h / out_h - 0.5, 0.0, in_h - 1.0)
    x = np.clip((np.arange(out_w) + 0.5) * in_w / out_w - 0.5, 0.0, in_w - 1.0)
    y0 = np.floor(y).astype(np.intp)
    x0 = np.floor(x).astype(np.intp)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    fy = (y - y0)[:, None, None]
    fx = (x - x0)[None, :, None]
    g = grid.astype(np.float64, copy=False)
    top = g[y0][:, x0] * (1 - fx) + g[y0][:, x1] * fx
    bot = g[y1][:, x0] * (1 - fx) + g[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def fuse_hierarchy(layer_grids: dict[int, PatchGrid], cfg: PatchConfig) -> PatchGrid:
    """Upsample every non-reference level to the reference grid and concat.

    The lowest configured level (level 2 by default) is the spatial
    reference; channels are concatenated in ascending level order.
    """
    missing = [l for l in cfg.levels if l not in layer_grids]
    if missing:
        raise ValueError(f"missing levels {missing}; have {sorted(layer_grids)}")
    extra = [l for l in layer_grids if l not in cfg.levels]
    if extra:
        raise ValueError(f"unexpected levels {extra}; configured {list(cfg.levels)}")
    order = sorted(cfg.levels)
    ref = layer_grids[order[0]]
    parts = []
    for level in order:
        grid = layer_grids[level]
        if grid.source_image_size != ref.source_image_size:
            raise ValueError(
                f"level {level} source_image_size {grid.source_image_size} "
                f"!= reference {ref.source_image_size}"
            )
        if (grid.height, grid.width) == (ref.height, ref.width):
            parts.append(grid.vectors.astype(np.float32, copy=False))
        else:
            up = bilinear_resize(grid.vectors, ref.height, ref.width)
            parts.append(up.astype(np.float32))
    fused = np.concatenate(parts, axis=2)
    return PatchGrid(vectors=fused, source_image_size=ref.source_image_size)


def patchify_layers(feature_maps: dict[int, np.ndarray], cfg: PatchConfig, image_size) -> PatchGrid:
    """aggregate_patches per level, then fuse_hierarchy."""
    grids = {
        level: aggregate_patches(fm, cfg, image_size=image_size)
        for level, fm in feature_maps.items()
    }
    return fuse_hierarchy(grids, cfg)
