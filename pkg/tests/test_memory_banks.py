import math

import numpy as np
import pytest

from dualbank.errors import (
    BankChecksumError,
    BankVersionError,
    DataError,
    EmptyPositiveSetError,
)
from dualbank.memory_banks import (
    BankPair,
    build_negative,
    build_positive,
    load_bank_pair,
    save_bank_pair,
)
from dualbank.patch_features import PatchConfig
from dualbank.pipeline import defective_positions
from dualbank.reduction import make_projection, project

CFG = PatchConfig(patch_size=1, stride=1, levels=(2,))


def small_dataset(dataset_builder, n_nominal=3, n_anomalous=2, grid=(4, 4), dim=6):
    builder = dataset_builder(grid=grid, dim=dim)
    gen = np.random.default_rng(0)
    for i in range(n_nominal):
        builder.add(f"nominal_{i}", "nominal", 0, gen.standard_normal((*grid, dim)))
    for i in range(n_anomalous):
        cells = np.zeros(grid, dtype=np.uint8)
        cells[1:3, 1:3] = 1
        g = gen.standard_normal((*grid, dim))
        g[1:3, 1:3] += 5.0
        builder.add(f"anomalous_{i}", "anomalous", 1, g, cell_mask=cells)
    return builder


def test_negative_bank_rate_one_keeps_all(dataset_builder):
    manifest = small_dataset(dataset_builder, n_nominal=1, n_anomalous=0).manifest()
    bank = build_negative(manifest, CFG, proj_seed=0, coreset_seed=1, rate=1.0, d_star=4)
    assert bank.size == 16  # one 4x4 grid
    assert bank.source_count == 16
    assert bank.polarity == "negative"


def test_bank_size_formula(dataset_builder):
    manifest = small_dataset(dataset_builder).manifest()
    for rate in (0.02, 0.01, 0.3, 1.0):
        bank = build_negative(manifest, CFG, 0, 1, rate=rate, d_star=4)
        assert bank.size == max(1, math.ceil(rate * bank.source_count))
    # the benchmark-scale arithmetic the build must reproduce
    assert max(1, math.ceil(0.02 * 2085 * 2212)) == 92241


def test_bank_vectors_are_projected_source_rows(dataset_builder):
    manifest = small_dataset(dataset_builder, n_nominal=2, n_anomalous=0).manifest()
    bank = build_negative(manifest, CFG, 0, 1, rate=0.25, d_star=4)
    # pool in manifest order, project with the bank's own matrix
    from dualbank.pipeline import compute_grid

    pooled = np.concatenate(
        [compute_grid(e, CFG).flat() for e in manifest.nominal], axis=0
    )
    projected = project(bank.projection, pooled)
    matches = [
        any(np.array_equal(v, projected[i]) for i in range(projected.shape[0]))
        for v in bank.vectors
    ]
    assert all(matches)


def test_no_nominal_entries_rejected(dataset_builder):
    builder = dataset_builder()
    gen = np.random.default_rng(0)
    cells = np.ones((4, 4), dtype=np.uint8)
    builder.add("a", "anomalous", 1, gen.standard_normal((4, 4, 6)), cell_mask=cells)
    with pytest.raises(DataError, match="nominal"):
        build_negative(builder.manifest(), CFG, 0, 1, rate=1.0, d_star=4)


def test_positive_requires_defective_patches(dataset_builder):
    builder = dataset_builder()
    gen = np.random.default_rng(1)
    builder.add("n", "nominal", 0, gen.standard_normal((4, 4, 6)))
    builder.add(
        "a",
        "anomalous",
        1,
        gen.standard_normal((4, 4, 6)),
        cell_mask=np.zeros((4, 4), dtype=np.uint8),
    )
    manifest = builder.manifest()
    proj = make_projection(6, 4, 0)
    with pytest.raises(EmptyPositiveSetError):
        build_positive(manifest, CFG, proj, coreset_seed=2, rate=1.0)


def test_single_cell_mask_gives_single_vector_bank(dataset_builder):
    builder = dataset_builder()
    gen = np.random.default_rng(2)
    builder.add("n", "nominal", 0, gen.standard_normal((4, 4, 6)))
    cells = np.zeros((4, 4), dtype=np.uint8)
    cells[2, 3] = 1
    grid = gen.standard_normal((4, 4, 6))
    builder.add("a", "anomalous", 1, grid, cell_mask=cells)
    manifest = builder.manifest()
    proj = make_projection(6, 4, 0)
    bank = build_positive(manifest, CFG, proj, coreset_seed=2, rate=1.0)
    assert bank.size == 1
    expected = project(proj, grid[2, 3].astype(np.float32)[None, :])[0]
    np.testing.assert_array_equal(bank.vectors[0], expected)


def test_defective_positions_threshold():
    cfg = PatchConfig(patch_size=3, stride=1, levels=(2,))
    mask = np.zeros((32, 32), dtype=np.uint8)
    mask[8:16, 8:16] = 1  # exactly cell (1, 1) at scale 8
    got = defective_positions(mask, (4, 4), cfg, tau=0.25)
    expected = np.zeros((4, 4), dtype=bool)
    expected[1, 1] = True
    assert np.array_equal(got, expected)
    # half-covered cell passes tau=0.5 but fails tau=0.6
    mask2 = np.zeros((32, 32), dtype=np.uint8)
    mask2[8:12, 8:16] = 1
    assert defective_positions(mask2, (4, 4), cfg, tau=0.5)[1, 1]
    assert not defective_positions(mask2, (4, 4), cfg, tau=0.6)[1, 1]


def test_asymmetric_rates_recorded(dataset_builder):
    manifest = small_dataset(dataset_builder).manifest()
    neg = build_negative(manifest, CFG, 0, 1, rate=0.02, d_star=4)
    pos = build_positive(manifest, CFG, neg.projection, 2, rate=0.10)
    assert neg.subsample_rate < pos.subsample_rate
    pair = BankPair(negative=neg, positive=pos)
    assert pair.projection is neg.projection


def test_banks_immutable(dataset_builder):
    manifest = small_dataset(dataset_builder).manifest()
    bank = build_negative(manifest, CFG, 0, 1, rate=0.5, d_star=4)
    with pytest.raises(ValueError):
        bank.vectors[0, 0] = 0.0


def roundtrip_pair(dataset_builder, tmp_path, with_positive=True, store_projected=True):
    manifest = small_dataset(dataset_builder).manifest()
    neg = build_negative(
        manifest, CFG, 0, 1, rate=0.25, d_star=4, store_projected=store_projected
    )
    pos = None
    if with_positive:
        pos = build_positive(
            manifest, CFG, neg.projection, 2, rate=0.5, store_projected=store_projected
        )
    pair = BankPair(negative=neg, positive=pos)
    path = tmp_path / "banks.exdd"
    save_bank_pair(pair, path)
    return pair, path


def test_save_load_roundtrip_bit_exact(dataset_builder, tmp_path):
    pair, path = roundtrip_pair(dataset_builder, tmp_path)
    loaded = load_bank_pair(path)
    assert loaded.negative.vectors.tobytes() == pair.negative.vectors.tobytes()
    assert loaded.positive.vectors.tobytes() == pair.positive.vectors.tobytes()
    assert loaded.projection.entries.tobytes() == pair.projection.entries.tobytes()
    assert loaded.negative.subsample_rate == pair.negative.subsample_rate
    assert loaded.negative.source_count == pair.negative.source_count
    assert loaded.negative.covering_radius == pair.negative.covering_radius
    assert loaded.patch_config == pair.patch_config
    # resaving the loaded pair reproduces the file byte for byte
    path2 = tmp_path / "banks2.exdd"
    save_bank_pair(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_flipped_payload_byte_fails_checksum(dataset_builder, tmp_path):
    _, path = roundtrip_pair(dataset_builder, tmp_path)
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(BankChecksumError):
        load_bank_pair(path)


def test_version_mismatch(dataset_builder, tmp_path):
    _, path = roundtrip_pair(dataset_builder, tmp_path)
    raw = bytearray(path.read_bytes())
    raw[4] = 99
    path.write_bytes(bytes(raw))
    with pytest.raises(BankVersionError):
        load_bank_pair(path)


def test_absent_positive_loads_as_none(dataset_builder, tmp_path):
    _, path = roundtrip_pair(dataset_builder, tmp_path, with_positive=False)
    loaded = load_bank_pair(path)
    assert loaded.positive is None


def test_rebuild_determinism(dataset_builder, tmp_path):
    manifest = small_dataset(dataset_builder).manifest()

    def build_bytes(jobs):
        neg = build_negative(manifest, CFG, 0, 1, rate=0.25, d_star=4, jobs=jobs)
        pos = build_positive(manifest, CFG, neg.projection, 2, rate=0.5, jobs=jobs)
        path = tmp_path / f"banks_{jobs}.exdd"
        save_bank_pair(BankPair(negative=neg, positive=pos), path)
        return path.read_bytes()

    assert build_bytes(1) == build_bytes(1) == build_bytes(4)


def test_store_projected_false_keeps_original_dim(dataset_builder, tmp_path):
    pair, path = roundtrip_pair(dataset_builder, tmp_path, store_projected=False)
    assert pair.negative.dim == 6  # original feature dim, not d*
    assert pair.negative.projection.rows == 4
    loaded = load_bank_pair(path)
    assert loaded.negative.dim == 6
    assert not loaded.store_projected
