"""Backbone feature extraction: images to per-level ETF maps.

A WideResNet50-class ImageNet backbone is run once per image; the level-2
and level-3 feature maps are captured with forward hooks and written as
ETF float32 tensors, together with a manifest fragment the engine's
merge-manifests command consumes. At the default 224 x 632 resize the
output shapes are [512, 28, 79] and [1024, 14, 40] (strides 8 and 16).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


@dataclass
class ExtractionJob:
    image_dir: str
    out_dir: str
    resize: tuple[int, int] = (224, 632)  # (height, width)
    levels: tuple[int, ...] = (2, 3)
    backbone_id: str = "wide_resnet50_2"
    pretrained: bool = True
    role: str = "nominal"
    mask_dir: str | None = None
    seed: int = 0

    @classmethod
    def from_json(cls, path) -> "ExtractionJob":
        doc = json.loads(Path(path).read_text())
        doc["resize"] = tuple(doc.get("resize", (224, 632)))
        doc["levels"] = tuple(doc.get("levels", (2, 3)))
        return cls(**doc)


def load_backbone(backbone_id: str, pretrained: bool, seed: int = 0):
    import torchvision.models as models

    factory = getattr(models, backbone_id, None)
    if factory is None:
        raise ValueError(f"unknown backbone {backbone_id!r}")
    if pretrained:
        net = factory(weights="IMAGENET1K_V1")
    else:
        # deterministic random init keeps shape tests reproducible offline
        torch.manual_seed(seed)
        net = factory(weights=None)
    net.eval()
    return net


def _level_modules(net, levels):
    named = dict(net.named_children())
    out = {}
    for level in levels:
        key = f"layer{level}"
        if key not in named:
            raise ValueError(f"backbone has no {key}")
        out[level] = named[key]
    return out


def image_to_tensor(image: Image.Image, resize: tuple[int, int]) -> torch.Tensor:
    image = image.convert("RGB").resize((resize[1], resize[0]), Image.BILINEAR)
    arr = np.asarray(image, dtype=np.float32) / 255.0
    arr = (arr - np.asarray(IMAGENET_MEAN, dtype=np.float32)) / np.asarray(
        IMAGENET_STD, dtype=np.float32
    )
    return torch.from_numpy(arr.transpose(2, 0, 1)).unsqueeze(0)


def extract_maps(net, levels, batch: torch.Tensor) -> dict[int, np.ndarray]:
    captured: dict[int, torch.Tensor] = {}
    handles = []
    for level, module in _level_modules(net, levels).items():
        handles.append(
            module.register_forward_hook(
                lambda _m, _i, out, level=level: captured.__setitem__(level, out)
            )
        )
    try:
        with torch.no_grad():
            net(batch)
    finally:
        for h in handles:
            h.remove()
    return {
        level: captured[level].squeeze(0).cpu().numpy().astype(np.float32)
        for level in levels
    }


def _find_mask(mask_dir: Path, stem: str) -> Path | None:
    for suffix in sorted(IMAGE_SUFFIXES):
        candidate = mask_dir / f"{stem}{suffix}"
        if candidate.exists():
            return candidate
    return None


def extract_features(job: ExtractionJob, net=None) -> dict:
    """Run the backbone over every image in the job; write ETFs + fragment.

    Returns the manifest fragment document ({"version": 1, "entries": ...}).
    """
    from .etf import write_etf

    image_dir = Path(job.image_dir)
    out_dir = Path(job.out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    images = sorted(p for p in image_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not images:
        raise ValueError(f"no images found under {image_dir}")
    if net is None:
        net = load_backbone(job.backbone_id, job.pretrained, job.seed)

    entries = []
    for path in images:
        batch = image_to_tensor(Image.open(path), job.resize)
        maps = extract_maps(net, job.levels, batch)
        for level, fm in maps.items():
            if not np.all(np.isfinite(fm)):
                raise ValueError(f"{path.name}: non-finite features at level {level}")
        feature_paths = {}
        for level, fm in maps.items():
            rel = f"features/{path.stem}_l{level}.etf"
            write_etf(fm, out_dir / rel)
            feature_paths[str(level)] = rel
        mask_rel = None
        if job.mask_dir is not None:
            found = _find_mask(Path(job.mask_dir), path.stem)
            if found is not None:
                mask_img = Image.open(found).convert("L").resize(
                    (job.resize[1], job.resize[0]), Image.NEAREST
                )
                mask = (np.asarray(mask_img) > 127).astype(np.uint8)
                mask_rel = f"masks/{path.stem}.etf"
                write_etf(mask, out_dir / mask_rel)
        if job.role == "anomalous" and mask_rel is None:
            raise ValueError(f"{path.name}: anomalous extraction needs a mask")
        label = 1 if (job.role == "anomalous" or (job.role == "test" and mask_rel)) else 0
        entries.append(
            {
                "image_id": path.stem,
                "role": job.role,
                "label": label,
                "feature_paths": feature_paths,
                "mask_path": mask_rel,
                "image_size": [job.resize[0], job.resize[1]],
            }
        )
    fragment = {"version": 1, "entries": entries}
    (out_dir / "manifest.json").write_text(json.dumps(fragment, indent=2, sort_keys=True) + "\n")
    return fragment
