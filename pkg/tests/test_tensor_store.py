import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualbank.errors import (
    BadMagicError,
    InvalidHeaderError,
    ManifestError,
    TruncatedError,
    UnknownDtypeError,
)
from dualbank.tensor_store import load_manifest, read_etf, write_etf


def etf_size(shape, itemsize=4):
    # layout: magic(4) + dtype(1) + rank(1) + 8 per dim + raw scalars
    count = 1
    for s in shape:
        count *= s
    return 4 + 1 + 1 + 8 * len(shape) + itemsize * count


def test_smallest_legal_tensor(tmp_path):
    path = tmp_path / "t.etf"
    write_etf(np.array([0.0], dtype=np.float32), path)
    assert path.stat().st_size == etf_size([1]) == 18
    assert read_etf(path) == np.array([0.0], dtype=np.float32)


def test_2x3_zeros_size_and_roundtrip(tmp_path):
    path = tmp_path / "t.etf"
    t = np.zeros((2, 3), dtype=np.float32)
    write_etf(t, path)
    # 4 + 1 + 1 + 2*8 + 4*6 from the layout formula
    assert path.stat().st_size == etf_size([2, 3]) == 46
    back = read_etf(path)
    assert back.dtype == np.float32
    assert back.tobytes() == t.tobytes()


def test_layer2_geometry_roundtrip(tmp_path):
    # layer-2-like map for a 224x632 image at stride 8
    path = tmp_path / "big.etf"
    rng = np.random.default_rng(0)
    t = rng.standard_normal((512, 28, 79)).astype(np.float32)
    write_etf(t, path)
    assert path.stat().st_size == 4 + 1 + 1 + 24 + 4 * 512 * 28 * 79
    back = read_etf(path)
    assert back.shape == (512, 28, 79)
    assert back.tobytes() == t.tobytes()


def test_golden_bytes(tmp_path):
    # Endianness pin: exact bytes built independently with struct.
    path = tmp_path / "g.etf"
    write_etf(np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32), path)
    expected = b"ETF1" + bytes([0, 2]) + struct.pack("<2Q", 2, 2)
    expected += struct.pack("<4f", 1.0, 2.0, 3.0, 4.0)
    assert path.read_bytes() == expected


def test_checked_in_golden_fixtures(tmp_path):
    # files pinned in the repo: any platform must parse them identically
    import pathlib

    data = pathlib.Path(__file__).parent / "data"
    f32 = read_etf(data / "golden_2x3_f32.etf")
    np.testing.assert_array_equal(
        f32, np.array([[-1.5, 0.0, 2.25], [3.5, -4.75, 5.0]], dtype=np.float32)
    )
    u8 = read_etf(data / "golden_2x2_u8.etf")
    np.testing.assert_array_equal(u8, np.array([[0, 1], [255, 128]], dtype=np.uint8))
    # and writing the parsed tensors reproduces the pinned bytes
    write_etf(f32, tmp_path / "f32.etf")
    write_etf(u8, tmp_path / "u8.etf")
    assert (tmp_path / "f32.etf").read_bytes() == (data / "golden_2x3_f32.etf").read_bytes()
    assert (tmp_path / "u8.etf").read_bytes() == (data / "golden_2x2_u8.etf").read_bytes()


def test_u8_mask_roundtrip(tmp_path):
    path = tmp_path / "m.etf"
    mask = (np.arange(12).reshape(3, 4) % 2).astype(np.uint8)
    write_etf(mask, path)
    assert np.array_equal(read_etf(path), mask)


def test_write_rejects_bad_rank_and_dtype(tmp_path):
    with pytest.raises(ValueError):
        write_etf(np.zeros((), dtype=np.float32), tmp_path / "r0.etf")
    with pytest.raises(ValueError):
        write_etf(np.zeros((1, 1, 1, 1, 1), dtype=np.float32), tmp_path / "r5.etf")
    with pytest.raises(ValueError):
        write_etf(np.zeros(3, dtype=np.float64), tmp_path / "f64.etf")


def test_bad_magic(tmp_path):
    path = tmp_path / "t.etf"
    write_etf(np.zeros(2, dtype=np.float32), path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XTF1"
    path.write_bytes(bytes(raw))
    with pytest.raises(BadMagicError):
        read_etf(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "t.etf"
    write_etf(np.zeros(4, dtype=np.float32), path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-3])
    with pytest.raises(TruncatedError):
        read_etf(path)


def test_unknown_dtype_code(tmp_path):
    path = tmp_path / "t.etf"
    write_etf(np.zeros(2, dtype=np.float32), path)
    raw = bytearray(path.read_bytes())
    raw[4] = 9
    path.write_bytes(bytes(raw))
    with pytest.raises(UnknownDtypeError):
        read_etf(path)


def test_invalid_rank_on_read(tmp_path):
    path = tmp_path / "t.etf"
    write_etf(np.zeros(2, dtype=np.float32), path)
    raw = bytearray(path.read_bytes())
    raw[5] = 7
    path.write_bytes(bytes(raw))
    with pytest.raises(InvalidHeaderError):
        read_etf(path)


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    shape=st.lists(st.integers(1, 5), min_size=1, max_size=4),
    use_u8=st.booleans(),
)
def test_roundtrip_property(tmp_path_factory, seed, shape, use_u8):
    rng = np.random.default_rng(seed)
    if use_u8:
        t = rng.integers(0, 256, size=shape).astype(np.uint8)
    else:
        t = rng.standard_normal(shape).astype(np.float32)
    path = tmp_path_factory.mktemp("rt") / "t.etf"
    write_etf(t, path)
    back = read_etf(path)
    assert back.dtype == t.dtype and back.shape == t.shape
    assert back.tobytes() == t.tobytes()


def manifest_doc(entries):
    return {"version": 1, "entries": entries}


def entry(image_id="img", role="nominal", label=0, mask=None, levels=("2", "3")):
    return {
        "image_id": image_id,
        "role": role,
        "label": label,
        "feature_paths": {l: f"features/{image_id}_l{l}.etf" for l in levels},
        "mask_path": mask,
        "image_size": [224, 632],
    }


def write_manifest(tmp_path, doc):
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(doc))
    return path


def test_benchmark_scale_manifest_validates(tmp_path):
    # 2085 nominal + 246 anomalous train entries, 894 + 110 test entries
    entries = [entry(f"n{i:04d}") for i in range(2085)]
    entries += [entry(f"a{i:04d}", "anomalous", 1, mask=f"masks/a{i:04d}.etf") for i in range(246)]
    entries += [entry(f"tn{i:04d}", "test", 0) for i in range(894)]
    entries += [entry(f"ta{i:04d}", "test", 1, mask=f"masks/ta{i:04d}.etf") for i in range(110)]
    manifest = load_manifest(write_manifest(tmp_path, manifest_doc(entries)))
    assert len(manifest.nominal) == 2085
    assert len(manifest.anomalous) == 246
    assert len(manifest.test) == 894 + 110
    # lazy: none of the referenced files exist, loading must not open them
    assert not (tmp_path / "features").exists()


def test_nominal_with_label_1_rejected(tmp_path):
    path = write_manifest(tmp_path, manifest_doc([entry(label=1)]))
    with pytest.raises(ManifestError, match=r"entries\[0\].label"):
        load_manifest(path)


def test_anomalous_without_mask_rejected(tmp_path):
    path = write_manifest(tmp_path, manifest_doc([entry(role="anomalous", label=1)]))
    with pytest.raises(ManifestError, match="mask_path"):
        load_manifest(path)


def test_anomalous_with_label_0_rejected(tmp_path):
    path = write_manifest(
        tmp_path, manifest_doc([entry(role="anomalous", label=0, mask="m.etf")])
    )
    with pytest.raises(ManifestError):
        load_manifest(path)


def test_feature_levels_must_match_config(tmp_path):
    path = write_manifest(tmp_path, manifest_doc([entry(levels=("2",))]))
    with pytest.raises(ManifestError, match="feature_paths"):
        load_manifest(path, levels=(2, 3))
    # and the same manifest is fine when the config asks for level 2 only
    manifest = load_manifest(path, levels=(2,))
    assert manifest.entries[0].feature_paths.keys() == {2}


def test_bad_version_and_role(tmp_path):
    path = write_manifest(tmp_path, {"version": 2, "entries": []})
    with pytest.raises(ManifestError, match="version"):
        load_manifest(path)
    path = write_manifest(tmp_path, manifest_doc([entry(role="training")]))
    with pytest.raises(ManifestError, match="role"):
        load_manifest(path)


def test_paths_resolve_against_manifest_dir(tmp_path):
    sub = tmp_path / "ds"
    sub.mkdir()
    path = sub / "manifest.json"
    path.write_text(json.dumps(manifest_doc([entry()])))
    manifest = load_manifest(path)
    assert manifest.entries[0].feature_paths[2] == sub / "features/img_l2.etf"
