"""embedtool CLI: extract descriptors or feature maps from an image folder."""

from __future__ import annotations

import argparse
import json
import sys

from .extract import ExtractJob, run_job


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embedtool",
        description="Extract DINOv2 image descriptors (EMB1) or VGG19 "
        "feature maps (FMP1) from a directory of images.",
    )
    parser.add_argument("--input", required=True, help="directory of PNG/JPEG images")
    parser.add_argument("--out", required=True, help="output container path")
    parser.add_argument("--model", default="dinov2-vits14")
    parser.add_argument("--weights", default="", help="local checkpoint (dir or state dict)")
    parser.add_argument(
        "--taps",
        default=None,
        help="comma-separated VGG19 relu taps (or 'default'); switches to FMP1 output",
    )
    parser.add_argument("--batch", type=int, default=8)
    parser.add_argument("--resize", type=int, default=224)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--device", default="cpu")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.taps is None:
        taps = None
    elif args.taps.strip() == "default":
        from .models import DEFAULT_TAPS

        taps = DEFAULT_TAPS
    else:
        taps = tuple(t.strip() for t in args.taps.split(",") if t.strip())
    try:
        job = ExtractJob(
            input_dir=args.input,
            output_path=args.out,
            model_id=args.model,
            weights=args.weights,
            taps=taps,
            batch_size=args.batch,
            resize=args.resize,
            seed=args.seed,
            device=args.device,
        )
        summary = run_job(job)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
