"""Pipeline CLI: every stage as a subcommand over one JSON config.

Exit codes: 0 success, 1 usage, 2 data error, 3 internal failure.
All stages are deterministic for a fixed config and inputs; reruns
overwrite byte-identical outputs, independent of --jobs.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import traceback
from pathlib import Path

from .config import RunConfig, load_config, save_config
from .errors import DataError, EmptyPositiveSetError
from .evaluation import FixtureSpec, augmentation_sweep, build_banks, evaluate, generate_fixture
from .localization import export_heatmap_pgm, localize_image
from .memory_banks import load_bank_pair, save_bank_pair
from .pipeline import grid_paths, load_or_compute_grid, ordered_map, write_patch_grid
from .scoring import score_image
from .tensor_store import load_manifest, save_manifest, write_etf


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(sub, patches=True):
    sub.add_argument("--config", help="run-config JSON (defaults when omitted)")
    sub.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="dotted config override, e.g. --set rates.negative=0.01")
    sub.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                     help="worker threads (output is independent of this)")
    if patches:
        sub.add_argument("--patches", help="directory of patchify outputs to reuse")


def build_parser() -> Parser:
    parser = Parser(prog="dualbank", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("patchify", help="write fused patch grids per manifest entry")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--skip-existing", action="store_true")
    _add_common(p, patches=False)

    p = subs.add_parser("build-bank", help="build and save the bank pair")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    _add_common(p)

    p = subs.add_parser("score", help="score test entries, one JSON object per image")
    p.add_argument("manifest")
    p.add_argument("bank")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["ratio", "negative_only"])
    p.add_argument("--roles", default="test", help="comma list of roles to score, or 'all'")
    _add_common(p)

    p = subs.add_parser("localize", help="write anomaly maps per test entry")
    p.add_argument("manifest")
    p.add_argument("bank")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["ratio", "negative_only"])
    p.add_argument("--heatmaps", action="store_true", help="also export 8-bit PGM heatmaps")
    _add_common(p)

    p = subs.add_parser("eval", help="image/pixel AUROC over the test entries")
    p.add_argument("manifest")
    p.add_argument("bank", nargs="?", help="bank pair file (unused with --sweep)")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["ratio", "negative_only"])
    p.add_argument("--pixel", choices=["auto", "on", "off"], default="auto")
    p.add_argument("--pixel-cap", type=int)
    p.add_argument("--csv", help="also write per-image scores as CSV")
    p.add_argument("--augmented-count", type=int, default=0)
    p.add_argument("--sweep", help="comma list of synthetic counts; rebuilds banks per count")
    _add_common(p)

    p = subs.add_parser("fixtures", help="generate a deterministic synthetic fixture tree")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=3)
    p.add_argument("--n-nominal", type=int, default=16)
    p.add_argument("--n-anomalous", type=int, default=8)
    p.add_argument("--n-test-nominal", type=int, default=12)
    p.add_argument("--n-test-anomalous", type=int, default=12)
    p.add_argument("--n-synthetic", type=int, default=0)
    p.add_argument("--grid", type=int, nargs=2, default=[8, 10], metavar=("H", "W"))
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--separation", type=float, default=10.0)
    p.add_argument("--second-separation", type=float)
    p.add_argument("--defect", type=int, nargs=4, default=[2, 3, 4, 4],
                   metavar=("TOP", "LEFT", "HEIGHT", "WIDTH"))
    p.add_argument("--scale", type=int, default=8)

    p = subs.add_parser("merge-manifests", help="merge manifest fragments into one manifest")
    p.add_argument("--out", required=True)
    p.add_argument("fragments", nargs="+")
    p.add_argument("--levels", default="2,3", help="comma list of hierarchy levels to validate")

    return parser


def _config_from(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    doc = cfg.to_dict()
    for item in getattr(args, "set", []):
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise UsageError(f"--set: unknown config group {key!r}")
            node = node[part]
        node[parts[-1]] = value
    if getattr(args, "mode", None):
        doc["mode"] = args.mode
    return RunConfig.from_dict(doc)


def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def cmd_patchify(args) -> int:
    cfg = _config_from(args)
    manifest = load_manifest(args.manifest, levels=cfg.patch.levels)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(entry):
        etf_path, sidecar = grid_paths(out_dir, entry.image_id)
        if args.skip_existing and etf_path.exists() and sidecar.exists():
            return entry.image_id, "skipped"
        try:
            grid = load_or_compute_grid(entry, cfg.patch)
            write_patch_grid(grid, cfg.patch, out_dir, entry.image_id)
        except DataError as exc:
            raise DataError(f"{entry.image_id}: {exc}") from exc
        return entry.image_id, "written"

    results = ordered_map(one, manifest.entries, args.jobs)
    save_config(cfg, out_dir / "config.json")
    written = sum(1 for _, s in results if s == "written")
    print(f"patchify: {written} written, {len(results) - written} skipped -> {out_dir}")
    return 0


def cmd_build_bank(args) -> int:
    cfg = _config_from(args)
    manifest = load_manifest(args.manifest, levels=cfg.patch.levels)
    try:
        pair = build_banks(manifest, cfg, patches_dir=args.patches, jobs=args.jobs)
    except EmptyPositiveSetError as exc:
        print(f"warning: {exc}; building negative-only pair", file=sys.stderr)
        pair = build_banks(manifest, cfg, patches_dir=args.patches, jobs=args.jobs,
                           include_positive=False)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_bank_pair(pair, args.out)
    neg = pair.negative
    print(f"negative bank: M={neg.size} of {neg.source_count} "
          f"(rate {neg.subsample_rate}), covering radius {neg.covering_radius:.6g}")
    if pair.positive is not None:
        pos = pair.positive
        print(f"positive bank: M={pos.size} of {pos.source_count} "
              f"(rate {pos.subsample_rate}), covering radius {pos.covering_radius:.6g}")
    else:
        print("positive bank: absent")
    return 0


def _score_entries(args, cfg):
    manifest = load_manifest(args.manifest, levels=cfg.patch.levels)
    if args.command == "score":
        roles = [r.strip() for r in args.roles.split(",")]
        entries = manifest.entries if "all" in roles else [
            e for e in manifest.entries if e.role in roles
        ]
    else:
        entries = manifest.test
    if not entries:
        raise DataError("no entries selected")
    return manifest, entries


def cmd_score(args) -> int:
    cfg = _config_from(args)
    _, entries = _score_entries(args, cfg)
    banks = load_bank_pair(args.bank)

    def one(entry):
        grid = load_or_compute_grid(entry, cfg.patch, args.patches)
        record = score_image(
            grid, banks, b=cfg.b, epsilon=cfg.epsilon, mode=cfg.mode,
            positive_at_negative_patch=cfg.flags.positive_at_negative_patch,
        )
        return {"image_id": entry.image_id, "label": entry.label, **record.to_dict()}

    rows = ordered_map(one, entries, args.jobs)
    _write_json(args.out, {"config": cfg.to_dict(), "scores": rows})
    print(f"score: {len(rows)} images -> {args.out}")
    return 0


def cmd_localize(args) -> int:
    cfg = _config_from(args)
    _, entries = _score_entries(args, cfg)
    banks = load_bank_pair(args.bank)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(entry):
        grid = load_or_compute_grid(entry, cfg.patch, args.patches)
        amap = localize_image(
            grid, banks, b=cfg.b, epsilon=cfg.epsilon, mode=cfg.mode, sigma=cfg.sigma
        )
        write_etf(amap.values, out_dir / f"{entry.image_id}.etf")
        if args.heatmaps:
            export_heatmap_pgm(amap.values, out_dir / f"{entry.image_id}.pgm")
        return entry.image_id

    ids = ordered_map(one, entries, args.jobs)
    save_config(cfg, out_dir / "config.json")
    print(f"localize: {len(ids)} maps -> {out_dir}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config_from(args)
    manifest = load_manifest(args.manifest, levels=cfg.patch.levels)
    pixel = {"auto": "auto", "on": True, "off": False}[args.pixel]
    if args.sweep:
        counts = [int(c) for c in args.sweep.split(",")]
        report = augmentation_sweep(
            manifest, cfg, counts=counts, patches_dir=args.patches,
            jobs=args.jobs, pixel=pixel,
        )
        _write_json(args.out, {"config": cfg.to_dict(), "sweep": report})
        print(f"eval sweep over {counts} -> {args.out}")
        return 0
    if args.bank is None:
        raise UsageError("eval needs a bank file (or --sweep)")
    banks = load_bank_pair(args.bank)
    report = evaluate(
        manifest, banks, cfg, patches_dir=args.patches, jobs=args.jobs,
        pixel=pixel, pixel_cap=args.pixel_cap, augmented_count=args.augmented_count,
    )
    _write_json(args.out, report.to_dict())
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image_id", "label", "s_ratio"])
            for row in report.per_image:
                writer.writerow([row["image_id"], row["label"], repr(row["s_ratio"])])
    p_txt = "n/a" if report.p_auroc is None else f"{report.p_auroc:.4f}"
    print(f"eval: i_auroc {report.i_auroc:.4f}, p_auroc {p_txt} -> {args.out}")
    return 0


def cmd_fixtures(args) -> int:
    spec = FixtureSpec(
        seed=args.seed,
        n_nominal=args.n_nominal,
        n_anomalous=args.n_anomalous,
        grid=tuple(args.grid),
        dim=args.dim,
        cluster_separation=args.separation,
        defect_area=tuple(args.defect),
        n_test_nominal=args.n_test_nominal,
        n_test_anomalous=args.n_test_anomalous,
        n_synthetic=args.n_synthetic,
        second_separation=args.second_separation,
        scale=args.scale,
    )
    try:
        manifest = generate_fixture(spec, args.out)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    print(f"fixtures: {len(manifest.entries)} entries -> {args.out}")
    return 0


def cmd_merge_manifests(args) -> int:
    levels = tuple(int(l) for l in args.levels.split(","))
    out_path = Path(args.out)
    out_dir = out_path.parent.resolve()
    entries = []
    for frag in args.fragments:
        frag_path = Path(frag)
        manifest = load_manifest(frag_path, levels=levels)
        for e in manifest.entries:
            entries.append({
                "image_id": e.image_id,
                "role": e.role,
                "label": e.label,
                "feature_paths": {
                    str(level): os.path.relpath(path.resolve(), out_dir)
                    for level, path in sorted(e.feature_paths.items())
                },
                "mask_path": (
                    os.path.relpath(e.mask_path.resolve(), out_dir)
                    if e.mask_path is not None else None
                ),
                "image_size": list(e.image_size),
            })
    seen = set()
    for e in entries:
        if e["image_id"] in seen:
            raise DataError(f"duplicate image_id {e['image_id']!r} across fragments")
        seen.add(e["image_id"])
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_manifest({"version": 1, "entries": entries}, out_path)
    print(f"merge-manifests: {len(entries)} entries -> {out_path}")
    return 0


_COMMANDS = {
    "patchify": cmd_patchify,
    "build-bank": cmd_build_bank,
    "score": cmd_score,
    "localize": cmd_localize,
    "eval": cmd_eval,
    "fixtures": cmd_fixtures,
    "merge-manifests": cmd_merge_manifests,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 3


if __name__ == "__main__":
    sys.exit(main())
