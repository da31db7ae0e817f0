import json

import numpy as np
import pytest
from PIL import Image
from scipy.ndimage import binary_dilation

from dualbank_bridge.synthesize import (
    DEFAULT_NEGATIVE_PROMPT,
    SynthesisJob,
    derive_defect_mask,
    synthesize_defect,
)


def test_defaults_match_operating_point():
    job = SynthesisJob(nominal_image="a.png", mask="m.png", out_dir="out")
    hp = job.hyperparameters()
    assert hp["steps"] == 30
    assert hp["guidance"] == 20.0
    assert hp["strength"] == 0.99
    assert hp["padding_mask_crop"] == 2
    assert hp["negative_prompt"] == DEFAULT_NEGATIVE_PROMPT


def test_identical_images_give_empty_mask():
    # zero-strength degenerate run: generated == original
    gen = np.random.default_rng(0)
    img = gen.integers(0, 256, size=(64, 64, 3)).astype(np.uint8)
    region = np.zeros((64, 64), dtype=np.uint8)
    region[16:48, 16:48] = 1
    derived = derive_defect_mask(img, img, region)
    assert derived.sum() == 0


def test_derived_mask_subset_of_dilated_region():
    gen = np.random.default_rng(1)
    img = gen.integers(0, 256, size=(64, 64, 3)).astype(np.uint8)
    changed = img.copy()
    changed[10:30, 10:30] = 255  # edit partly outside the region
    region = np.zeros((64, 64), dtype=np.uint8)
    region[20:40, 20:40] = 1
    derived = derive_defect_mask(img, changed, region, dilation=4)
    allowed = binary_dilation(region > 0, iterations=4)
    assert derived.sum() > 0
    assert np.all(allowed[derived > 0])


def test_threshold_and_opening():
    img = np.zeros((32, 32, 3), dtype=np.uint8)
    changed = img.copy()
    changed[8:16, 8:16] = 30  # above the 25/255 default threshold
    changed[24, 24] = 200  # isolated pixel, removed by 3x3 opening
    region = np.ones((32, 32), dtype=np.uint8)
    derived = derive_defect_mask(img, changed, region)
    assert derived[10, 10] == 1
    assert derived[24, 24] == 0
    barely = img.copy()
    barely[8:16, 8:16] = 20  # below threshold
    assert derive_defect_mask(img, barely, region).sum() == 0


def test_unavailable_pipeline_skips_with_status(tmp_path):
    img = Image.fromarray(np.zeros((32, 32, 3), dtype=np.uint8))
    img.save(tmp_path / "nominal.png")
    Image.fromarray(np.full((32, 32), 255, dtype=np.uint8)).save(tmp_path / "mask.png")
    job = SynthesisJob(
        nominal_image=str(tmp_path / "nominal.png"),
        mask=str(tmp_path / "mask.png"),
        out_dir=str(tmp_path / "out"),
    )
    # pipeline=None and the diffusers stack not installed -> skip path
    status = synthesize_defect(job)
    assert status["status"] == "skipped"
    assert "reason" in status
    meta = json.loads((tmp_path / "out" / "nominal_meta.json").read_text())
    assert meta["hyperparameters"]["steps"] == 30
    assert meta["hyperparameters"]["guidance"] == 20.0
    assert meta["hyperparameters"]["strength"] == 0.99


def test_fake_pipeline_runs_end_to_end(tmp_path):
    gen = np.random.default_rng(3)
    base = gen.integers(0, 200, size=(48, 48, 3)).astype(np.uint8)
    Image.fromarray(base).save(tmp_path / "nominal.png")
    region = np.zeros((48, 48), dtype=np.uint8)
    region[12:36, 12:36] = 255
    Image.fromarray(region).save(tmp_path / "mask.png")

    class FakePipeline:
        def __init__(self):
            self.calls = []

        def __call__(self, **kwargs):
            self.calls.append(kwargs)
            arr = np.asarray(kwargs["image"], dtype=np.int16)
            mask = np.asarray(kwargs["mask_image"]) > 0
            out = arr.copy()
            out[mask] = np.minimum(out[mask] + 120, 255)

            class R:
                images = [Image.fromarray(out.astype(np.uint8))]

            return R()

    pipe = FakePipeline()
    job = SynthesisJob(
        nominal_image=str(tmp_path / "nominal.png"),
        mask=str(tmp_path / "mask.png"),
        out_dir=str(tmp_path / "out"),
        prompt="white marks on the wall",
    )
    status = synthesize_defect(job, pipeline=pipe)
    assert status["status"] == "ok"
    assert status["defect_pixels"] > 0
    call = pipe.calls[0]
    assert call["num_inference_steps"] == 30
    assert call["guidance_scale"] == 20.0
    assert call["strength"] == 0.99
    assert call["padding_mask_crop"] == 2
    derived = np.asarray(Image.open(tmp_path / "out" / "nominal_mask.png"))
    assert derived.shape == (48, 48)
    assert (derived > 0).sum() == status["defect_pixels"]
    assert (tmp_path / "out" / "nominal_synthetic.png").exists()
    meta = json.loads((tmp_path / "out" / "nominal_meta.json").read_text())
    assert meta["status"] == "ok"


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        derive_defect_mask(
            np.zeros((4, 4, 3), dtype=np.uint8),
            np.zeros((5, 4, 3), dtype=np.uint8),
            np.zeros((4, 4), dtype=np.uint8),
        )
