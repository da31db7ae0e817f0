"""Random projection and greedy coreset subsampling.

All randomness comes from numpy's Philox (a named 64-bit counter-based
generator), seeded explicitly, so banks rebuild bit-identically across
platforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def rng(seed: int) -> np.random.Generator:
    """The repo-wide PRNG: Philox4x64-10 behind numpy's Generator."""
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True)
class ProjectionMatrix:
    entries: np.ndarray  # [d*, d] float32, unit-norm rows
    seed: int

    @property
    def rows(self) -> int:
        return self.entries.shape[0]

    @property
    def cols(self) -> int:
        return self.entries.shape[1]


@dataclass(frozen=True)
class CoresetSelection:
    indices: list[int]  # in selection order
    covering_radius: float


def make_projection(d: int, d_star: int, seed: int) -> ProjectionMatrix:
    """Gaussian matrix [d*, d] with each row rescaled to unit length.

    Deterministic function of (seed, d, d*).
    """
    if not 1 <= d_star <= d:
        raise ValueError(f"need 1 <= d_star <= d, got d_star={d_star}, d={d}")
    g = rng(seed).standard_normal((d_star, d))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    entries = (g / norms).astype(np.float32)
    entries.flags.writeable = False
    return ProjectionMatrix(entries=entries, seed=int(seed))


def project(matrix: ProjectionMatrix, vectors: np.ndarray) -> np.ndarray:
    """Apply the linear map to [n, d] row vectors, giving [n, d*] float32."""
    vectors = np.asarray(vectors)
    if vectors.ndim != 2 or vectors.shape[1] != matrix.cols:
        raise ValueError(
            f"expected [n, {matrix.cols}] vectors, got shape {vectors.shape}"
        )
    return vectors.astype(np.float32, copy=False) @ matrix.entries.T


def greedy_coreset(vectors: np.ndarray, rate: float, seed: int) -> CoresetSelection:
    """Farthest-point traversal for the minimax facility-location objective.

    Selects k = max(1, ceil(rate * n)) indices: the start is element 0 of a
    seeded random permutation, then each step adds the point farthest from
    the current selection (ties toward the lowest index). The greedy
    covering radius is within 2x of the optimal k-center radius.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[0] < 1:
        raise ValueError(f"expected a non-empty [n, d] array, got shape {vectors.shape}")
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"rate must lie in (0, 1], got {rate}")
    n = vectors.shape[0]
    k = max(1, math.ceil(rate * n))
    start = int(rng(seed).permutation(n)[0])
    selected = [start]
    min_dists = np.linalg.norm(vectors - vectors[start], axis=1)
    # Candidate copy with chosen points forced below zero, so coincident
    # points never produce a duplicate selection.
    candidates = min_dists.copy()
    candidates[start] = -1.0
    for _ in range(k - 1):
        nxt = int(np.argmax(candidates))  # first occurrence = lowest index
        selected.append(nxt)
        step = np.linalg.norm(vectors - vectors[nxt], axis=1)
        np.minimum(min_dists, step, out=min_dists)
        np.minimum(candidates, step, out=candidates)
        candidates[nxt] = -1.0
    return CoresetSelection(indices=selected, covering_radius=float(min_dists.max()))
