import json

import numpy as np
import pytest

from dualbank.tensor_store import load_manifest, write_etf


class DatasetBuilder:
    """Writes a tiny single-level dataset tree for bank/eval tests.

    Feature maps are [dim, h, w] float32 at hierarchy level 2; masks are
    uint8 [H, W] with `scale` pixels per grid cell.
    """

    def __init__(self, root, grid=(4, 4), dim=6, scale=8):
        self.root = root
        self.grid = grid
        self.dim = dim
        self.scale = scale
        self.entries = []
        (root / "features").mkdir(parents=True, exist_ok=True)
        (root / "masks").mkdir(parents=True, exist_ok=True)

    @property
    def image_size(self):
        return (self.grid[0] * self.scale, self.grid[1] * self.scale)

    def add(self, image_id, role, label, grid_hwd, cell_mask=None):
        feat = f"features/{image_id}.etf"
        write_etf(grid_hwd.transpose(2, 0, 1).astype(np.float32), self.root / feat)
        mask_path = None
        if cell_mask is not None:
            mask = np.kron(
                cell_mask.astype(np.uint8),
                np.ones((self.scale, self.scale), dtype=np.uint8),
            )
            mask_path = f"masks/{image_id}.etf"
            write_etf(mask, self.root / mask_path)
        self.entries.append(
            {
                "image_id": image_id,
                "role": role,
                "label": label,
                "feature_paths": {"2": feat},
                "mask_path": mask_path,
                "image_size": list(self.image_size),
            }
        )
        return self

    def manifest(self):
        path = self.root / "manifest.json"
        path.write_text(json.dumps({"version": 1, "entries": self.entries}))
        return load_manifest(path, levels=(2,))


@pytest.fixture
def dataset_builder(tmp_path):
    def make(grid=(4, 4), dim=6, scale=8):
        return DatasetBuilder(tmp_path, grid=grid, dim=dim, scale=scale)

    return make
