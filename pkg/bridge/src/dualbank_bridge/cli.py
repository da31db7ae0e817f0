"""Bridge CLI: `extract` and `synthesize`, each driven by a JSON job file."""

from __future__ import annotations

import argparse
import json
import sys
import traceback


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="dualbank-bridge", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)
    p = subs.add_parser("extract", help="backbone features from an image directory")
    p.add_argument("job", help="ExtractionJob JSON file")
    p = subs.add_parser("synthesize", help="inpaint defects and derive masks")
    p.add_argument("job", help="SynthesisJob JSON file, or a list of them")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "extract":
            from .extract import ExtractionJob, extract_features

            fragment = extract_features(ExtractionJob.from_json(args.job))
            print(f"extract: {len(fragment['entries'])} entries")
            return 0
        from .synthesize import SynthesisJob, synthesize_defect

        doc = json.loads(open(args.job).read())
        jobs = doc if isinstance(doc, list) else [doc]
        skipped = 0
        for raw in jobs:
            status = synthesize_defect(SynthesisJob(**raw))
            skipped += status["status"] == "skipped"
            print(f"synthesize {status['image_id']}: {status['status']}")
        return 0 if skipped < len(jobs) else 4  # 4 = everything skipped
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 3


if __name__ == "__main__":
    sys.exit(main())
