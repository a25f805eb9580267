"""clip-export command line: corpus listing in, manifest + embedding store out."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .export import export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clip-export",
        description="Encode an image+text corpus into the memerobust "
                    "manifest and MREB embedding store")
    parser.add_argument("--listing", type=Path, required=True,
                        help="corpus listing JSON (task + entries)")
    parser.add_argument("--encoder", type=str, default="hashproj-512",
                        help="'hashproj-<dim>' (offline) or 'clip:<hf model>'")
    parser.add_argument("--out-manifest", type=Path, required=True)
    parser.add_argument("--out-store", type=Path, required=True)
    parser.add_argument("--device", type=str, default=None)
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--name", type=str, default=None,
                        help="dataset name to record (default: listing stem)")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        summary = export(args.listing, args.encoder, args.out_manifest,
                         args.out_store, device=args.device,
                         batch_size=args.batch_size, dataset_name=args.name)
    except Exception as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    print(json.dumps(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
