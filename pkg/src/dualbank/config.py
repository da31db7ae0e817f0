"""Run configuration: one JSON document drives every pipeline stage.

Defaults follow the reference operating point: 3x3 patches at stride 1 on
hierarchy levels 2-3, 128-dimensional projection, asymmetric subsampling
(2% negative / 10% positive), b=3 density neighbors, epsilon=1e-6,
sigma=2 smoothing. Every field can be overridden from the config file or
CLI flags, and the exact configuration is echoed into all outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError
from .patch_features import PatchConfig


@dataclass(frozen=True)
class Rates:
    negative: float = 0.02
    positive: float = 0.10


@dataclass(frozen=True)
class Seeds:
    projection: int = 0
    coreset_neg: int = 1
    coreset_pos: int = 2
    fixture: int = 3


@dataclass(frozen=True)
class Flags:
    store_projected: bool = True
    positive_at_negative_patch: bool = False


@dataclass(frozen=True)
class RunConfig:
    patch: PatchConfig = field(default_factory=PatchConfig)
    d_star: int = 128
    rates: Rates = field(default_factory=Rates)
    b: int = 3
    epsilon: float = 1e-6
    sigma: float = 2.0
    seeds: Seeds = field(default_factory=Seeds)
    mode: str = "ratio"
    flags: Flags = field(default_factory=Flags)
    mask_coverage_tau: float = 0.25

    def to_dict(self) -> dict:
        return {
            "patch": self.patch.to_dict(),
            "d_star": self.d_star,
            "rates": {"negative": self.rates.negative, "positive": self.rates.positive},
            "b": self.b,
            "epsilon": self.epsilon,
            "sigma": self.sigma,
            "seeds": {
                "projection": self.seeds.projection,
                "coreset_neg": self.seeds.coreset_neg,
                "coreset_pos": self.seeds.coreset_pos,
                "fixture": self.seeds.fixture,
            },
            "mode": self.mode,
            "flags": {
                "store_projected": self.flags.store_projected,
                "positive_at_negative_patch": self.flags.positive_at_negative_patch,
            },
            "mask_coverage_tau": self.mask_coverage_tau,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        def sub(name, keys, raw):
            unknown = set(raw) - set(keys)
            if unknown:
                raise DataError(f"config.{name}: unknown keys {sorted(unknown)}")
            return raw

        base = cls()
        known = {
            "patch",
            "d_star",
            "rates",
            "b",
            "epsilon",
            "sigma",
            "seeds",
            "mode",
            "flags",
            "mask_coverage_tau",
        }
        unknown = set(doc) - known
        if unknown:
            raise DataError(f"config: unknown keys {sorted(unknown)}")

        patch = base.patch
        if "patch" in doc:
            raw = sub("patch", {"patch_size", "stride", "levels"}, doc["patch"])
            patch = PatchConfig(
                patch_size=raw.get("patch_size", base.patch.patch_size),
                stride=raw.get("stride", base.patch.stride),
                levels=tuple(raw.get("levels", base.patch.levels)),
            )
        rates = base.rates
        if "rates" in doc:
            raw = sub("rates", {"negative", "positive"}, doc["rates"])
            rates = Rates(
                negative=float(raw.get("negative", base.rates.negative)),
                positive=float(raw.get("positive", base.rates.positive)),
            )
        seeds = base.seeds
        if "seeds" in doc:
            raw = sub("seeds", {"projection", "coreset_neg", "coreset_pos", "fixture"}, doc["seeds"])
            seeds = Seeds(
                projection=int(raw.get("projection", base.seeds.projection)),
                coreset_neg=int(raw.get("coreset_neg", base.seeds.coreset_neg)),
                coreset_pos=int(raw.get("coreset_pos", base.seeds.coreset_pos)),
                fixture=int(raw.get("fixture", base.seeds.fixture)),
            )
        flags = base.flags
        if "flags" in doc:
            raw = sub("flags", {"store_projected", "positive_at_negative_patch"}, doc["flags"])
            flags = Flags(
                store_projected=bool(raw.get("store_projected", base.flags.store_projected)),
                positive_at_negative_patch=bool(
                    raw.get("positive_at_negative_patch", base.flags.positive_at_negative_patch)
                ),
            )
        mode = doc.get("mode", base.mode)
        if mode not in ("ratio", "negative_only"):
            raise DataError(f"config.mode: must be 'ratio' or 'negative_only', got {mode!r}")
        return cls(
            patch=patch,
            d_star=int(doc.get("d_star", base.d_star)),
            rates=rates,
            b=int(doc.get("b", base.b)),
            epsilon=float(doc.get("epsilon", base.epsilon)),
            sigma=float(doc.get("sigma", base.sigma)),
            seeds=seeds,
            mode=mode,
            flags=flags,
            mask_coverage_tau=float(doc.get("mask_coverage_tau", base.mask_coverage_tau)),
        )


def load_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: unreadable config ({exc})") from exc
    if not isinstance(doc, dict):
        raise DataError(f"{path}: config must be a JSON object")
    return RunConfig.from_dict(doc)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
