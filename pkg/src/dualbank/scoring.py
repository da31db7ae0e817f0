"""Image-level anomaly scoring against the dual banks.

The raw image score against a bank is the max-min Euclidean distance:
each test patch finds its nearest bank vector, and the patch with the
largest nearest distance wins. Raw scores are rescaled by a local-density
weight built from an exponential kernel over the b nearest bank vectors
of the matched reference (the match itself included), then fused:

    s_ratio = s_N / (s_P + epsilon)

which is large only when the image is far from normality and close to
known defect patterns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import MissingPositiveBankError
from .memory_banks import BankPair, MemoryBank
from .patch_features import PatchGrid

MODES = ("ratio", "negative_only")


@dataclass(frozen=True)
class NearestResult:
    test_patch_index: tuple[int, int]
    bank_index: int
    distance: float


@dataclass(frozen=True)
class ScoreRecord:
    s_N_star: float
    w_N_star: float
    s_N: float
    s_P_star: float | None
    w_P_star: float | None
    s_P: float | None
    s_ratio: float
    epsilon: float
    b: int

    def to_dict(self) -> dict:
        return {
            "s_N_star": self.s_N_star,
            "s_P_star": self.s_P_star,
            "w_N_star": self.w_N_star,
            "w_P_star": self.w_P_star,
            "s_N": self.s_N,
            "s_P": self.s_P,
            "s_ratio": self.s_ratio,
            "epsilon": self.epsilon,
            "b": self.b,
        }


def _chunk_rows(bank_size: int) -> int:
    return max(1, int(4_000_000 // max(1, bank_size)))


def nearest_to_bank(vectors: np.ndarray, bank: MemoryBank):
    """Per-row nearest bank vector: (distances [n], indices [n]).

    Exact flat search, chunked to bound the distance-matrix footprint.
    Ties resolve to the lowest bank index.
    """
    if bank.size < 1:
        raise ValueError("bank is empty")
    vectors = np.asarray(vectors, dtype=np.float64)
    bank_vecs = bank.vectors.astype(np.float64)
    n = vectors.shape[0]
    dists = np.empty(n, dtype=np.float64)
    idx = np.empty(n, dtype=np.intp)
    step = _chunk_rows(bank.size)
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        block = cdist(vectors[lo:hi], bank_vecs)
        idx[lo:hi] = np.argmin(block, axis=1)
        dists[lo:hi] = block[np.arange(hi - lo), idx[lo:hi]]
    return dists, idx


def max_min_distance(patches, bank: MemoryBank) -> NearestResult:
    """The patch farthest from its nearest bank vector (Eq.-12 style).

    `patches` is a PatchGrid already in bank space or a raw [h, w, d]
    array. Ties resolve to the lowest row-major patch index.
    """
    vectors = patches.vectors if isinstance(patches, PatchGrid) else np.asarray(patches)
    h_star, w_star, d = vectors.shape
    if d != bank.dim:
        raise ValueError(f"patch dim {d} != bank dim {bank.dim}")
    dists, idx = nearest_to_bank(vectors.reshape(-1, d), bank)
    flat = int(np.argmax(dists))
    return NearestResult(
        test_patch_index=(flat // w_star, flat % w_star),
        bank_index=int(idx[flat]),
        distance=float(dists[flat]),
    )


def bank_neighbor_lists(bank: MemoryBank, anchor_indices: np.ndarray, b: int) -> np.ndarray:
    """For each anchor bank vector, its b nearest bank indices (self included).

    Ties resolve to the lowest bank index via a stable sort.
    """
    if b < 1:
        raise ValueError(f"b must be >= 1, got {b}")
    if bank.size < b:
        raise ValueError(f"bank holds {bank.size} vectors, fewer than b={b}")
    anchors = np.asarray(anchor_indices, dtype=np.intp)
    bank_vecs = bank.vectors.astype(np.float64)
    out = np.empty((anchors.shape[0], b), dtype=np.intp)
    step = _chunk_rows(bank.size)
    for lo in range(0, anchors.shape[0], step):
        hi = min(anchors.shape[0], lo + step)
        block = cdist(bank_vecs[anchors[lo:hi]], bank_vecs)
        out[lo:hi] = np.argsort(block, axis=1, kind="stable")[:, :b]
    return out


def neighborhood_weights(
    test_vecs: np.ndarray,
    nn_indices: np.ndarray,
    bank: MemoryBank,
    b: int,
    polarity: str,
) -> np.ndarray:
    """Density weights for many (test vector, matched bank vector) pairs.

    The nearest distance is recomputed here with the same reduction as
    the neighbor distances, so the self term of the kernel sum cancels
    exactly and the bounds w_N in [0, 1), w_P in (0, 1] hold even for
    coincident vectors.
    """
    if polarity not in ("negative", "positive"):
        raise ValueError(f"unknown polarity {polarity!r}")
    test_vecs = np.asarray(test_vecs, dtype=np.float64)
    nn_indices = np.asarray(nn_indices, dtype=np.intp)
    unique, inverse = np.unique(nn_indices, return_inverse=True)
    neighbor_sets = bank_neighbor_lists(bank, unique, b)[inverse]  # [n, b]
    neighbor_vecs = bank.vectors.astype(np.float64)[neighbor_sets]  # [n, b, d]
    dists = np.linalg.norm(neighbor_vecs - test_vecs[:, None, :], axis=2)
    self_dist = np.linalg.norm(
        bank.vectors.astype(np.float64)[nn_indices] - test_vecs, axis=1
    )
    sqrt_d = math.sqrt(bank.dim)
    denom = np.exp(-dists / sqrt_d).sum(axis=1)
    frac = np.exp(-self_dist / sqrt_d) / denom
    return 1.0 - frac if polarity == "negative" else frac


def neighborhood_weight(
    test_vec: np.ndarray,
    nearest: NearestResult,
    bank: MemoryBank,
    b: int,
    polarity: str,
) -> float:
    w = neighborhood_weights(
        np.asarray(test_vec, dtype=np.float64)[None, :],
        np.array([nearest.bank_index]),
        bank,
        b,
        polarity,
    )
    return float(w[0])


def ratio_score(s_n: float, s_p: float, epsilon: float) -> float:
    if s_n < 0 or s_p < 0:
        raise ValueError("scores must be non-negative")
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    return s_n / (s_p + epsilon)


def score_image(
    patches: PatchGrid,
    banks: BankPair,
    b: int = 3,
    epsilon: float = 1e-6,
    mode: str = "ratio",
    positive_at_negative_patch: bool = False,
) -> ScoreRecord:
    """Score one image's fused patch grid against a bank pair.

    mode="ratio" needs the positive bank and takes independent argmax
    patches on each side (set positive_at_negative_patch to evaluate the
    positive side at the negative side's patch instead). In
    mode="negative_only" the positive bank is ignored and
    s_ratio = s_N.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    in_bank_space = banks.project_grid(patches)
    h_star, w_star, _ = in_bank_space.shape

    neg = max_min_distance(in_bank_space, banks.negative)
    neg_vec = in_bank_space[neg.test_patch_index]
    w_n = neighborhood_weight(neg_vec, neg, banks.negative, b, "negative")
    s_n = w_n * neg.distance

    if mode == "negative_only":
        return ScoreRecord(
            s_N_star=neg.distance,
            w_N_star=w_n,
            s_N=s_n,
            s_P_star=None,
            w_P_star=None,
            s_P=None,
            s_ratio=s_n,
            epsilon=float(epsilon),
            b=int(b),
        )

    if banks.positive is None:
        raise MissingPositiveBankError(
            "ratio mode needs a positive bank; rerun with mode=negative_only"
        )
    if positive_at_negative_patch:
        dists, idx = nearest_to_bank(neg_vec[None, :], banks.positive)
        pos = NearestResult(
            test_patch_index=neg.test_patch_index,
            bank_index=int(idx[0]),
            distance=float(dists[0]),
        )
    else:
        pos = max_min_distance(in_bank_space, banks.positive)
    pos_vec = in_bank_space[pos.test_patch_index]
    w_p = neighborhood_weight(pos_vec, pos, banks.positive, b, "positive")
    s_p = w_p * pos.distance

    return ScoreRecord(
        s_N_star=neg.distance,
        w_N_star=w_n,
        s_N=s_n,
        s_P_star=pos.distance,
        w_P_star=w_p,
        s_P=s_p,
        s_ratio=ratio_score(s_n, s_p, epsilon),
        epsilon=float(epsilon),
        b=int(b),
    )
