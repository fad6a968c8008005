"""Command-line entry points: extract feature maps, prepare manifests."""

from __future__ import annotations

import argparse
import sys

from .backbones import WeightLoadError
from .extract import CANONICAL_RESOLUTION, ExtractionJob, extract
from .manifest import prepare_manifest


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fmap-extract", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="export conv5 pre-ReLU maps to an FMAP file")
    p.add_argument("--images", required=True, help="image directory")
    p.add_argument("--backbone", required=True, choices=["vgg16", "alexnet"])
    p.add_argument("--out", required=True, help="output FMAP path")
    p.add_argument(
        "--weights", default="pretrained",
        help="'pretrained', 'none' (seeded random), or a state_dict path",
    )
    p.add_argument("--width", type=int, default=CANONICAL_RESOLUTION[0])
    p.add_argument("--height", type=int, default=CANONICAL_RESOLUTION[1])
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--pose-source", help="CSV of image_id,<x,y|lat,lon>")
    p.add_argument("--pose-format", choices=["xy", "gps"], default="xy")

    p = sub.add_parser("prepare-manifest", help="write manifest (and pose) CSVs")
    p.add_argument("--images", required=True)
    p.add_argument("--out-manifest", required=True)
    p.add_argument("--pose-source")
    p.add_argument("--pose-format", choices=["xy", "gps"], default="xy")
    p.add_argument("--out-poses")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "extract":
            job = ExtractionJob(
                image_dir=args.images,
                backbone=args.backbone,
                out_path=args.out,
                weights=args.weights,
                resolution=(args.width, args.height),
                batch_size=args.batch,
                pose_source=args.pose_source,
                pose_format=args.pose_format,
            )
            ids = extract(job)
            print(f"wrote {args.out} ({len(ids)} records)")
        else:
            ids = prepare_manifest(
                args.images,
                args.out_manifest,
                pose_source=args.pose_source,
                pose_format=args.pose_format,
                out_poses=args.out_poses,
            )
            print(f"wrote {args.out_manifest} ({len(ids)} rows)")
        return 0
    except WeightLoadError as exc:
        print(f"error: weights: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
