"""Pixel-level anomaly maps.

Per-position nearest-bank distances form grid-resolution maps; the same
density weighting as image scoring is applied per position, the weighted
maps are fused as a ratio, and the fused grid is bilinearly upsampled to
image resolution and smoothed with a Gaussian (kernel truncated at radius
ceil(4 sigma), reflect padding). Upsample happens before the blur.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import MissingPositiveBankError
from .memory_banks import BankPair, MemoryBank
from .patch_features import PatchGrid, bilinear_resize
from .scoring import MODES, nearest_to_bank, neighborhood_weights


@dataclass(frozen=True)
class AnomalyMap:
    values: np.ndarray  # [H, W] float32 >= 0
    grid_values: np.ndarray  # [h*, w*] float32, pre-upsample
    sigma: float
    epsilon: float


def distance_map(patches, bank: MemoryBank) -> np.ndarray:
    """Nearest-bank distance of every patch position: [h*, w*] float64."""
    vectors = patches.vectors if isinstance(patches, PatchGrid) else np.asarray(patches)
    h_star, w_star, d = vectors.shape
    if d != bank.dim:
        raise ValueError(f"patch dim {d} != bank dim {bank.dim}")
    dists, _ = nearest_to_bank(vectors.reshape(-1, d), bank)
    return dists.reshape(h_star, w_star)


def weighted_distance_map(patches, bank: MemoryBank, b: int, polarity: str):
    """(raw, weighted) per-position maps sharing the scoring weight kernel."""
    vectors = patches.vectors if isinstance(patches, PatchGrid) else np.asarray(patches)
    h_star, w_star, d = vectors.shape
    flat = vectors.reshape(-1, d)
    dists, idx = nearest_to_bank(flat, bank)
    weights = neighborhood_weights(flat, idx, bank, b, polarity)
    raw = dists.reshape(h_star, w_star)
    return raw, (dists * weights).reshape(h_star, w_star)


def ratio_map(s_n_w: np.ndarray, s_p_w: np.ndarray, epsilon: float) -> np.ndarray:
    if s_n_w.shape != s_p_w.shape:
        raise ValueError(f"shape mismatch {s_n_w.shape} vs {s_p_w.shape}")
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    return np.asarray(s_n_w, dtype=np.float64) / (np.asarray(s_p_w, dtype=np.float64) + epsilon)


def render_map(grid: np.ndarray, image_size, sigma: float, epsilon: float = 0.0) -> AnomalyMap:
    """Bilinear upsample to image size, then Gaussian blur (sigma=0 skips)."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    grid = np.asarray(grid, dtype=np.float64)
    up = bilinear_resize(grid[:, :, None], int(image_size[0]), int(image_size[1]))[:, :, 0]
    if sigma > 0:
        up = gaussian_filter(up, sigma=sigma, mode="reflect", radius=math.ceil(4 * sigma))
    return AnomalyMap(
        values=up.astype(np.float32),
        grid_values=grid.astype(np.float32),
        sigma=float(sigma),
        epsilon=float(epsilon),
    )


def localize_image(
    patches: PatchGrid,
    banks: BankPair,
    b: int = 3,
    epsilon: float = 1e-6,
    mode: str = "ratio",
    sigma: float = 2.0,
) -> AnomalyMap:
    """Full per-image localization against a bank pair."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    in_bank_space = banks.project_grid(patches)
    _, neg_w = weighted_distance_map(in_bank_space, banks.negative, b, "negative")
    if mode == "negative_only":
        grid = neg_w
    else:
        if banks.positive is None:
            raise MissingPositiveBankError(
                "ratio mode needs a positive bank; rerun with mode=negative_only"
            )
        _, pos_w = weighted_distance_map(in_bank_space, banks.positive, b, "positive")
        grid = ratio_map(neg_w, pos_w, epsilon)
    return render_map(grid, patches.source_image_size, sigma, epsilon)


def export_heatmap_pgm(values: np.ndarray, path) -> None:
    """8-bit PGM export, min-max normalized per image."""
    v = np.asarray(values, dtype=np.float64)
    low, high = float(v.min()), float(v.max())
    if high > low:
        scaled = (v - low) / (high - low) * 255.0
    else:
        scaled = np.zeros_like(v)
    data = np.round(scaled).astype(np.uint8)
    header = f"P5\n{v.shape[1]} {v.shape[0]}\n255\n".encode()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes(order="C"))
