"""Command-line entry point for trace extraction."""

from __future__ import annotations

import argparse
import json
import sys

from .extract import ExtractionError, ExtractionSpec, ModelError, extract


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="vlmtrace-extract", description=__doc__)
    parser.add_argument("--manifest", required=True, help="JSON manifest: {model, samples: [{id, prompt, image?}]}")
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--max-samples", type=int, default=None)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    try:
        spec = ExtractionSpec.from_manifest(args.manifest)
        if args.max_samples is not None:
            spec = ExtractionSpec(model_id=spec.model_id, samples=spec.samples, max_samples=args.max_samples)
        result = extract(spec, args.out_dir, seed=args.seed)
    except ModelError as exc:
        print(json.dumps({"error": exc.code, "message": str(exc)}), file=sys.stderr)
        return 3
    except ExtractionError as exc:
        print(json.dumps({"error": exc.code, "message": str(exc)}), file=sys.stderr)
        return 2
    print(f"wrote {len(result.files)} trace(s), {len(result.diagnostics)} failure(s) -> {args.out_dir}")
    return 0 if result.files else 2


if __name__ == "__main__":
    sys.exit(main())
