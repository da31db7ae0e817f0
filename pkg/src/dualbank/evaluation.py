"""Image- and pixel-level AUROC, sweep reports and synthetic fixtures.

The fixture generator stands in for a real benchmark at desk scale: patch
grids are sampled directly from separated Gaussian clusters and written as
single-level feature maps (one cell per pixel block), so a p=1 pipeline
reproduces the sampled grids exactly and every stage can be verified
end to end in seconds.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .config import RunConfig, Seeds, save_config
from .errors import DataError
from .localization import localize_image
from .memory_banks import BankPair, build_negative, build_positive
from .patch_features import PatchConfig
from .pipeline import load_mask, load_or_compute_grid, ordered_map
from .reduction import rng
from .scoring import score_image
from .tensor_store import DatasetManifest, load_manifest, save_manifest, write_etf


@dataclass
class EvalReport:
    i_auroc: float
    p_auroc: float | None
    per_image: list[dict]
    config_echo: dict
    augmented_count: int = 0

    def to_dict(self) -> dict:
        return {
            "i_auroc": self.i_auroc,
            "p_auroc": self.p_auroc,
            "per_image": self.per_image,
            "config_echo": self.config_echo,
            "augmented_count": self.augmented_count,
        }


def auroc(pairs) -> float:
    """Area under the ROC curve from (label, score) pairs.

    Mann-Whitney statistic with average ranks for ties; identical to
    trapezoidal ROC integration.
    """
    labels = np.asarray([int(l) for l, _ in pairs])
    scores = np.asarray([float(s) for _, s in pairs], dtype=np.float64)
    return _auroc_arrays(labels, scores)


def _auroc_arrays(labels: np.ndarray, scores: np.ndarray) -> float:
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUROC needs both classes present")
    ranks = rankdata(scores, method="average")
    u = float(np.sum(ranks[labels == 1])) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def evaluate(
    manifest: DatasetManifest,
    banks: BankPair,
    cfg: RunConfig,
    patches_dir=None,
    jobs: int | None = 1,
    pixel: str | bool = "auto",
    pixel_cap: int | None = None,
    augmented_count: int = 0,
) -> EvalReport:
    """Score every test entry; pool pixels of all test images for P-AUROC.

    pixel="auto" computes P-AUROC when every defective test entry carries
    a mask; pixel=True makes missing masks an error; pixel=False skips.
    pixel_cap keeps every k-th pixel (same deterministic stride for all
    images) when the pooled pixel count would exceed the cap.
    """
    test_entries = manifest.test
    if not test_entries:
        raise DataError("manifest has no test entries")

    def score_one(entry):
        grid = load_or_compute_grid(entry, cfg.patch, patches_dir)
        record = score_image(
            grid,
            banks,
            b=cfg.b,
            epsilon=cfg.epsilon,
            mode=cfg.mode,
            positive_at_negative_patch=cfg.flags.positive_at_negative_patch,
        )
        return grid, record

    scored = ordered_map(score_one, test_entries, jobs)
    per_image = [
        {"image_id": entry.image_id, "label": entry.label, "s_ratio": record.s_ratio}
        for entry, (_, record) in zip(test_entries, scored)
    ]
    i_auroc = _auroc_arrays(
        np.asarray([row["label"] for row in per_image]),
        np.asarray([row["s_ratio"] for row in per_image]),
    )

    defective = [e for e in test_entries if e.label == 1]
    missing = [e.image_id for e in defective if e.mask_path is None]
    if pixel is True and missing:
        raise DataError(f"pixel evaluation requested but masks missing for {missing}")
    do_pixel = bool(defective) and not missing and pixel in (True, "auto")

    p_auroc = None
    if do_pixel:
        def localize_one(args):
            entry, grid = args
            amap = localize_image(
                grid, banks, b=cfg.b, epsilon=cfg.epsilon, mode=cfg.mode, sigma=cfg.sigma
            )
            if entry.label == 1:
                mask = (load_mask(entry) > 0).astype(np.uint8)
            else:
                mask = np.zeros(entry.image_size, dtype=np.uint8)
            return amap.values.reshape(-1), mask.reshape(-1)

        pieces = ordered_map(
            localize_one,
            [(e, g) for e, (g, _) in zip(test_entries, scored)],
            jobs,
        )
        pixel_scores = np.concatenate([p[0] for p in pieces]).astype(np.float64)
        pixel_labels = np.concatenate([p[1] for p in pieces])
        if pixel_cap is not None and pixel_scores.shape[0] > pixel_cap:
            step = math.ceil(pixel_scores.shape[0] / pixel_cap)
            pixel_scores = pixel_scores[::step]
            pixel_labels = pixel_labels[::step]
        p_auroc = _auroc_arrays(pixel_labels, pixel_scores)

    return EvalReport(
        i_auroc=i_auroc,
        p_auroc=p_auroc,
        per_image=per_image,
        config_echo=cfg.to_dict(),
        augmented_count=int(augmented_count),
    )


@dataclass(frozen=True)
class FixtureSpec:
    seed: int = 3
    n_nominal: int = 16
    n_anomalous: int = 8
    grid: tuple[int, int] = (8, 10)
    dim: int = 16
    cluster_separation: float = 10.0
    defect_area: tuple[int, int, int, int] = (2, 3, 4, 4)  # top, left, height, width
    n_test_nominal: int = 12
    n_test_anomalous: int = 12
    n_synthetic: int = 0
    second_separation: float | None = None
    scale: int = 8  # image pixels per grid cell

    def __post_init__(self):
        top, left, height, width = self.defect_area
        if height < 1 or width < 1 or top < 0 or left < 0:
            raise ValueError(f"degenerate defect_area {self.defect_area}")
        if top + height > self.grid[0] or left + width > self.grid[1]:
            raise ValueError(f"defect_area {self.defect_area} outside grid {self.grid}")
        if self.second_separation is not None and self.dim < 2:
            raise ValueError("second cluster needs dim >= 2")

    @property
    def image_size(self) -> tuple[int, int]:
        return (self.grid[0] * self.scale, self.grid[1] * self.scale)


def _fixture_config(spec: FixtureSpec) -> RunConfig:
    base = RunConfig()
    return RunConfig(
        patch=PatchConfig(patch_size=1, stride=1, levels=(2,)),
        d_star=min(base.d_star, spec.dim),
        rates=base.rates,
        b=base.b,
        epsilon=base.epsilon,
        sigma=base.sigma,
        seeds=Seeds(
            projection=base.seeds.projection,
            coreset_neg=base.seeds.coreset_neg,
            coreset_pos=base.seeds.coreset_pos,
            fixture=spec.seed,
        ),
        mode=base.mode,
        flags=base.flags,
        mask_coverage_tau=base.mask_coverage_tau,
    )


def generate_fixture(spec: FixtureSpec, out_dir) -> DatasetManifest:
    """Write a deterministic fixture tree: features, masks, manifest, config.

    Nominal grids are N(0, I) draws; anomalous grids are nominal draws with
    the defect rectangle redrawn from N(separation * e1, I). When
    second_separation is set, every other anomalous image instead shifts
    the whole grid by second_separation * e2 (a near-manifold anomaly
    cluster) with a full-image mask. Layout under out_dir:

        manifest.json, config.json, features/<id>.etf, masks/<id>.etf
    """
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    gen = rng(spec.seed)
    gh, gw = spec.grid
    img_h, img_w = spec.image_size
    entries = []

    def write_features(image_id, grid_hwd):
        path = f"features/{image_id}.etf"
        write_etf(grid_hwd.transpose(2, 0, 1).astype(np.float32), out_dir / path)
        return path

    def write_mask(image_id, cell_mask):
        mask = np.kron(cell_mask, np.ones((spec.scale, spec.scale), dtype=np.uint8))
        path = f"masks/{image_id}.etf"
        write_etf(mask, out_dir / path)
        return path

    def nominal_grid():
        return gen.standard_normal((gh, gw, spec.dim))

    def anomalous_grid(index):
        grid = nominal_grid()
        cells = np.zeros((gh, gw), dtype=np.uint8)
        if spec.second_separation is not None and index % 2 == 1:
            shift = np.zeros(spec.dim)
            shift[1] = spec.second_separation
            grid = gen.standard_normal((gh, gw, spec.dim)) + shift
            cells[:, :] = 1
        else:
            top, left, height, width = spec.defect_area
            shift = np.zeros(spec.dim)
            shift[0] = spec.cluster_separation
            grid[top : top + height, left : left + width] = (
                gen.standard_normal((height, width, spec.dim)) + shift
            )
            cells[top : top + height, left : left + width] = 1
        return grid, cells

    def entry(image_id, role, label, feat_path, mask_path=None):
        return {
            "image_id": image_id,
            "role": role,
            "label": label,
            "feature_paths": {"2": feat_path},
            "mask_path": mask_path,
            "image_size": [img_h, img_w],
        }

    for i in range(spec.n_nominal):
        image_id = f"nominal_{i:03d}"
        entries.append(entry(image_id, "nominal", 0, write_features(image_id, nominal_grid())))
    for i in range(spec.n_anomalous):
        image_id = f"anomalous_{i:03d}"
        grid, cells = anomalous_grid(i)
        entries.append(
            entry(image_id, "anomalous", 1, write_features(image_id, grid), write_mask(image_id, cells))
        )
    for i in range(spec.n_synthetic):
        image_id = f"syn_{i:03d}"
        grid, cells = anomalous_grid(i)
        entries.append(
            entry(image_id, "anomalous", 1, write_features(image_id, grid), write_mask(image_id, cells))
        )
    for i in range(spec.n_test_nominal):
        image_id = f"test_nominal_{i:03d}"
        entries.append(entry(image_id, "test", 0, write_features(image_id, nominal_grid())))
    for i in range(spec.n_test_anomalous):
        image_id = f"test_anomalous_{i:03d}"
        grid, cells = anomalous_grid(i)
        entries.append(
            entry(image_id, "test", 1, write_features(image_id, grid), write_mask(image_id, cells))
        )

    doc = {"version": 1, "entries": entries}
    save_manifest(doc, out_dir / "manifest.json")
    save_config(_fixture_config(spec), out_dir / "config.json")
    return load_manifest(out_dir / "manifest.json", levels=(2,))


def build_banks(
    manifest: DatasetManifest,
    cfg: RunConfig,
    patches_dir=None,
    jobs: int | None = 1,
    include_positive: bool = True,
) -> BankPair:
    """Negative bank always; positive bank when anomalous entries exist."""
    negative = build_negative(
        manifest,
        cfg.patch,
        proj_seed=cfg.seeds.projection,
        coreset_seed=cfg.seeds.coreset_neg,
        rate=cfg.rates.negative,
        d_star=cfg.d_star,
        store_projected=cfg.flags.store_projected,
        patches_dir=patches_dir,
        jobs=jobs,
    )
    positive = None
    if include_positive and manifest.anomalous:
        positive = build_positive(
            manifest,
            cfg.patch,
            shared_projection=negative.projection,
            coreset_seed=cfg.seeds.coreset_pos,
            rate=cfg.rates.positive,
            mask_coverage_tau=cfg.mask_coverage_tau,
            store_projected=cfg.flags.store_projected,
            patches_dir=patches_dir,
            jobs=jobs,
        )
    return BankPair(negative=negative, positive=positive, config_echo=cfg.to_dict())


def augmentation_sweep(
    manifest: DatasetManifest,
    cfg: RunConfig,
    counts=(0, 50, 100, 150),
    synthetic_prefix: str = "syn_",
    patches_dir=None,
    jobs: int | None = 1,
    pixel: str | bool = "auto",
) -> dict:
    """Evaluate with 0..k synthetic anomalous entries in the positive bank.

    Synthetic entries are the anomalous entries whose image_id starts with
    `synthetic_prefix`, taken in manifest order. The report mirrors the
    augmented-count table layout: one column per count.
    """
    pool = [e for e in manifest.anomalous if e.image_id.startswith(synthetic_prefix)]
    base = [e for e in manifest.entries if not (
        e.role == "anomalous" and e.image_id.startswith(synthetic_prefix)
    )]
    counts = [int(c) for c in counts]
    if max(counts, default=0) > len(pool):
        raise DataError(
            f"sweep asks for {max(counts)} synthetic entries, manifest has {len(pool)}"
        )
    report = {"augmented_images": counts, "i_auroc": [], "p_auroc": [], "mode": []}
    for count in counts:
        subset = DatasetManifest(entries=base + pool[:count], root=manifest.root)
        sub_cfg = cfg
        if not subset.anomalous and cfg.mode == "ratio":
            sub_cfg = RunConfig.from_dict({**cfg.to_dict(), "mode": "negative_only"})
        banks = build_banks(subset, sub_cfg, patches_dir=patches_dir, jobs=jobs)
        result = evaluate(
            subset,
            banks,
            sub_cfg,
            patches_dir=patches_dir,
            jobs=jobs,
            pixel=pixel,
            augmented_count=count,
        )
        report["i_auroc"].append(result.i_auroc)
        report["p_auroc"].append(result.p_auroc)
        report["mode"].append(sub_cfg.mode)
    return report
