"""Command-line interface for the poster feature exporter."""

from __future__ import annotations

import argparse
import logging
import sys

from posterfeat.export import export_features, read_manifest, scan_directory
from posterfeat.network import DEFAULT_LEVELS, LEVEL_CHANNELS, load_weights
from posterfeat.preprocess import ExporterError


def _parse_levels(text: str) -> tuple[int, ...]:
    try:
        levels = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"levels must be comma-separated integers, got {text!r}")
    if not levels:
        raise argparse.ArgumentTypeError("at least one level is required")
    for level in levels:
        if level not in LEVEL_CHANNELS:
            raise argparse.ArgumentTypeError(
                f"level {level} is not available; choose from {sorted(LEVEL_CHANNELS)}"
            )
    return levels


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="posterfeat",
        description="Export pooled convolutional features from poster images.",
    )
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--manifest", help="file of item_id<TAB>image_path lines")
    source.add_argument("--input-dir", help="directory of images; file stems become item ids")
    parser.add_argument("--weights", required=True, help="state-dict file for the 19-layer network")
    parser.add_argument("--out", required=True, help="output feature file")
    parser.add_argument(
        "--levels",
        type=_parse_levels,
        default=DEFAULT_LEVELS,
        help="comma-separated pooling stages to export (default: 2,3,4,5)",
    )
    parser.add_argument(
        "--raw",
        action="store_true",
        help="write full feature maps instead of spatially averaged vectors",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        module = load_weights(args.weights)
        if args.manifest is not None:
            entries = read_manifest(args.manifest)
        else:
            entries = scan_directory(args.input_dir)
        exported, skipped = export_features(
            entries, module, args.out, levels=args.levels, pooled=not args.raw
        )
    except (ExporterError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"exported {exported} items ({skipped} skipped) -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
