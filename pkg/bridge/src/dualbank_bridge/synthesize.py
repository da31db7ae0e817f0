"""Inpainting-based synthetic defect generation.

A nominal image, a region mask and a text prompt go through an external
SDXL inpainting pipeline (steps=30, guidance=20.0, strength=0.99,
padding_mask_crop=2 by default). The defect mask comes for free by
differencing the generated and original images: per-pixel max-channel
absolute difference thresholded at 25/255, opened with a 3x3 element and
restricted to the dilated input region. When the pipeline is not
installed the job is skipped with a machine-readable status and the
hyperparameters are still echoed, so downstream tooling can reason about
what would have run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import binary_dilation, binary_opening

DEFAULT_PROMPTS = ("copper metal scratches", "white marks on the wall")
DEFAULT_NEGATIVE_PROMPT = "smooth, plain, black, dark, shadow"


@dataclass
class SynthesisJob:
    nominal_image: str
    mask: str
    out_dir: str
    prompt: str = DEFAULT_PROMPTS[0]
    negative_prompt: str = DEFAULT_NEGATIVE_PROMPT
    steps: int = 30
    guidance: float = 20.0
    strength: float = 0.99
    padding_mask_crop: int = 2
    seed: int = 0
    diff_threshold: int = 25  # of 255
    mask_dilation: int = 8  # pixels of slack around the input region

    @classmethod
    def from_json(cls, path) -> "SynthesisJob":
        return cls(**json.loads(Path(path).read_text()))

    def hyperparameters(self) -> dict:
        return {
            "prompt": self.prompt,
            "negative_prompt": self.negative_prompt,
            "steps": self.steps,
            "guidance": self.guidance,
            "strength": self.strength,
            "padding_mask_crop": self.padding_mask_crop,
            "seed": self.seed,
            "diff_threshold": self.diff_threshold,
            "mask_dilation": self.mask_dilation,
        }


def derive_defect_mask(
    original: np.ndarray,
    generated: np.ndarray,
    region_mask: np.ndarray,
    threshold: int = 25,
    dilation: int = 8,
) -> np.ndarray:
    """Difference-based mask: |generated - original| thresholded and cleaned.

    Arrays are uint8 [H, W, 3] (or [H, W]); region_mask is the binary
    inpainting region. The result is opened (3x3) and clipped to the
    dilated region, so it is always a subset of where editing was allowed.
    """
    a = np.asarray(original, dtype=np.int16)
    b = np.asarray(generated, dtype=np.int16)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    diff = np.abs(b - a)
    if diff.ndim == 3:
        diff = diff.max(axis=2)
    changed = diff >= threshold
    changed = binary_opening(changed, structure=np.ones((3, 3), dtype=bool))
    region = np.asarray(region_mask) > 0
    if dilation > 0:
        region = binary_dilation(region, iterations=dilation)
    return (changed & region).astype(np.uint8)


def load_inpainting_pipeline(device: str = "cpu"):
    """SDXL inpainting via diffusers; None when the stack is unavailable."""
    try:
        import torch
        from diffusers import AutoPipelineForInpainting
    except ImportError:
        return None
    try:
        pipe = AutoPipelineForInpainting.from_pretrained(
            "diffusers/stable-diffusion-xl-1.0-inpainting-0.1",
            torch_dtype=torch.float32,
        )
        return pipe.to(device)
    except Exception:
        return None


def synthesize_defect(job: SynthesisJob, pipeline=None) -> dict:
    """Run one inpainting job; returns a machine-readable status document.

    Writes (on success) the generated image and the derived defect mask
    under out_dir, and always writes <stem>_meta.json echoing the
    hyperparameters.
    """
    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(job.nominal_image).stem
    meta_path = out_dir / f"{stem}_meta.json"
    status = {
        "image_id": stem,
        "hyperparameters": job.hyperparameters(),
    }

    if pipeline is None:
        pipeline = load_inpainting_pipeline()
    if pipeline is None:
        status.update(status="skipped", reason="inpainting pipeline unavailable")
        meta_path.write_text(json.dumps(status, indent=2, sort_keys=True) + "\n")
        return status

    original = Image.open(job.nominal_image).convert("RGB")
    region = Image.open(job.mask).convert("L")
    result = pipeline(
        prompt=job.prompt,
        negative_prompt=job.negative_prompt,
        image=original,
        mask_image=region,
        num_inference_steps=job.steps,
        guidance_scale=job.guidance,
        strength=job.strength,
        padding_mask_crop=job.padding_mask_crop,
        generator=_torch_generator(job.seed),
    )
    generated = result.images[0].resize(original.size)
    derived = derive_defect_mask(
        np.asarray(original),
        np.asarray(generated),
        np.asarray(region),
        threshold=job.diff_threshold,
        dilation=job.mask_dilation,
    )
    image_path = out_dir / f"{stem}_synthetic.png"
    mask_path = out_dir / f"{stem}_mask.png"
    generated.save(image_path)
    Image.fromarray(derived * 255).save(mask_path)
    status.update(
        status="ok",
        image=image_path.name,
        derived_mask=mask_path.name,
        defect_pixels=int(derived.sum()),
    )
    meta_path.write_text(json.dumps(status, indent=2, sort_keys=True) + "\n")
    return status


def _torch_generator(seed: int):
    import torch

    gen = torch.Generator()
    gen.manual_seed(int(seed))
    return gen
