"""Cross-implementation golden tests against the engine's ETF reader."""

import numpy as np
import pytest

import dualbank.tensor_store as engine_store
from dualbank_bridge.etf import read_etf, write_etf


@pytest.mark.parametrize(
    "shape,dtype",
    [((5,), np.float32), ((3, 4), np.float32), ((2, 3, 4), np.float32),
     ((2, 2, 2, 2), np.float32), ((6, 7), np.uint8)],
)
def test_bridge_files_parse_bit_exactly_in_engine(tmp_path, shape, dtype):
    gen = np.random.default_rng(hash(shape) % 2**32)
    if dtype is np.uint8:
        t = gen.integers(0, 256, size=shape).astype(np.uint8)
    else:
        t = gen.standard_normal(shape).astype(np.float32)
    path = tmp_path / "t.etf"
    write_etf(t, path)
    engine_view = engine_store.read_etf(path)
    assert engine_view.shape == t.shape and engine_view.dtype == t.dtype
    assert engine_view.tobytes() == t.tobytes()
    # byte-level: the engine writing the same tensor produces the same file
    engine_path = tmp_path / "engine.etf"
    engine_store.write_etf(t, engine_path)
    assert engine_path.read_bytes() == path.read_bytes()


def test_engine_files_parse_in_bridge(tmp_path):
    t = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
    path = tmp_path / "t.etf"
    engine_store.write_etf(t, path)
    back = read_etf(path)
    assert back.tobytes() == t.tobytes()


def test_bridge_rejects_bad_inputs(tmp_path):
    with pytest.raises(ValueError):
        write_etf(np.zeros((2, 2), dtype=np.float64), tmp_path / "x.etf")
    with pytest.raises(ValueError):
        write_etf(np.zeros((1,) * 5, dtype=np.float32), tmp_path / "x.etf")
