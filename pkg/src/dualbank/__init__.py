"""Dual memory-bank surface defect detection on precomputed features."""

from .config import RunConfig, load_config, save_config
from .errors import DataError
from .estimator import DualBankDetector, PatchAggregator
from .evaluation import (
    EvalReport,
    FixtureSpec,
    augmentation_sweep,
    auroc,
    build_banks,
    evaluate,
    generate_fixture,
)
from .localization import AnomalyMap, distance_map, localize_image, ratio_map, render_map
from .memory_banks import (
    BankPair,
    MemoryBank,
    build_negative,
    build_positive,
    load_bank_pair,
    save_bank_pair,
)
from .patch_features import PatchConfig, PatchGrid, aggregate_patches, fuse_hierarchy, neighborhood
from .reduction import CoresetSelection, ProjectionMatrix, greedy_coreset, make_projection, project
from .scoring import NearestResult, ScoreRecord, max_min_distance, ratio_score, score_image
from .tensor_store import DatasetManifest, ManifestEntry, load_manifest, read_etf, write_etf

__version__ = "0.1.0"

__all__ = [
    "AnomalyMap",
    "BankPair",
    "CoresetSelection",
    "DataError",
    "DatasetManifest",
    "DualBankDetector",
    "EvalReport",
    "FixtureSpec",
    "ManifestEntry",
    "MemoryBank",
    "NearestResult",
    "PatchAggregator",
    "PatchConfig",
    "PatchGrid",
    "ProjectionMatrix",
    "RunConfig",
    "ScoreRecord",
    "aggregate_patches",
    "augmentation_sweep",
    "auroc",
    "build_banks",
    "build_negative",
    "build_positive",
    "distance_map",
    "evaluate",
    "fuse_hierarchy",
    "generate_fixture",
    "greedy_coreset",
    "load_bank_pair",
    "load_config",
    "load_manifest",
    "localize_image",
    "make_projection",
    "max_min_distance",
    "neighborhood",
    "project",
    "ratio_map",
    "ratio_score",
    "read_etf",
    "render_map",
    "save_bank_pair",
    "save_config",
    "score_image",
    "write_etf",
]
