"""Command-line interface.

Exit codes: 0 success, 2 validation/configuration error, 1 runtime error.
querying subcommands (stitch, eval) run standalone; pipeline subcommands
read a TOML config file whose values can be overridden with --set.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import pipeline, quality, stitcher
from .imgcore import FormatError, RangeError, read_image, write_png
from .pipeline import ValidationError, load_config


def _parse_value(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    return text


def _overrides(args) -> dict:
    out = {}
    for item in args.set or []:
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = _parse_value(value.strip())
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    if getattr(args, "output_dir", None):
        out["output_dir"] = args.output_dir
    return out


def _load_cfg(args) -> pipeline.RunConfig:
    return load_config(args.config, _overrides(args))


def cmd_stitch(args) -> int:
    files = pipeline.list_rgb_patches(args.input) or pipeline.list_raw_patches(args.input)
    if not files:
        raise ValidationError(f"no patches found in {args.input}")
    if files[0].suffix in (".raw", ".npy"):
        patches = [
            pipeline.load_raw_patch(p, (args.raw_height, args.raw_width)) for p in files
        ]
        maps = patches
        rgb_patches = None
    else:
        rgb_patches = [read_image(p) for p in files]
        maps = rgb_patches
    candidates = stitcher.score_layouts(maps, len(maps), args.border)
    best = min(candidates, key=lambda lc: (lc.score, abs(lc.rows - lc.cols), lc.rows))
    report = {
        "N": len(files),
        "R": best.rows,
        "C": best.cols,
        "score": best.score,
        "all_candidate_scores": [
            {"R": lc.rows, "C": lc.cols, "score": lc.score} for lc in candidates
        ],
    }
    with open(args.report, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
    if rgb_patches is not None and args.out:
        write_png(stitcher.assemble(rgb_patches, best.rows, best.cols), args.out)
    print(f"layout {best.rows}x{best.cols} (score {best.score:.6g}) -> {args.report}")
    return 0


def cmd_eval(args) -> int:
    gt = {p.stem: p for p in pipeline.list_rgb_patches(args.reference)}
    pairs = []
    for path in pipeline.list_rgb_patches(args.predictions):
        if path.stem in gt:
            pairs.append((path.stem, read_image(path), read_image(gt[path.stem])))
    if not pairs:
        raise ValidationError("no prediction/reference pairs matched by name")
    report = quality.evaluate_pairs(pairs)
    report.write_json(args.out)
    if args.csv:
        report.write_csv(args.csv)
    summary = report.to_dict()
    print(
        f"{report.count} pairs: PSNR {summary['mean_psnr']:.3f} dB, "
        f"SSIM {summary['mean_ssim']:.4f}, dE2000 {summary['mean_delta_e']:.3f}"
    )
    return 0


_STAGE_FNS = {
    "preprocess": pipeline.stage_preprocess,
    "match-images": pipeline.stage_match_images,
    "build-pairs": pipeline.stage_build_pairs,
    "train": pipeline.stage_train,
    "infer": pipeline.stage_infer,
    "preview": pipeline.stage_preview,
    "stitch-stage": pipeline.stage_stitch,
}


def cmd_stage(stage: str):
    def run(args) -> int:
        cfg = _load_cfg(args)
        run_dir = Path(cfg.output_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        outputs, details = _STAGE_FNS[stage](cfg, run_dir)
        print(f"{stage}: {len(outputs)} outputs in {run_dir}")
        if details:
            print(json.dumps(details, indent=2, default=str)[:2000])
        return 0

    return run


def cmd_run(args) -> int:
    cfg = _load_cfg(args)
    run_dir = pipeline.run_pipeline(cfg)
    print(f"pipeline complete: {run_dir}")
    return 0


def _add_config_args(sub) -> None:
    sub.add_argument("--config", required=True, help="TOML run configuration")
    sub.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override a config value (repeatable)")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--output-dir", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rawpair",
        description="Unpaired RAW->RGB color mapping via OT pseudo-pairing",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("stitch", help="infer grid layout of a patch directory")
    p.add_argument("input", help="directory of ordered patches")
    p.add_argument("--out", default="", help="assembled PNG path (RGB inputs only)")
    p.add_argument("--report", required=True, help="JSON layout report path")
    p.add_argument("--border", type=int, default=4)
    p.add_argument("--raw-height", type=int, default=256)
    p.add_argument("--raw-width", type=int, default=256)
    p.set_defaults(fn=cmd_stitch)

    p = subs.add_parser("eval", help="PSNR/SSIM/dE2000 against references")
    p.add_argument("predictions")
    p.add_argument("reference")
    p.add_argument("--out", required=True, help="JSON report path")
    p.add_argument("--csv", default="", help="optional per-image CSV path")
    p.set_defaults(fn=cmd_eval)

    for name, stage in (
        ("preprocess", "preprocess"),
        ("stitch-images", "stitch-stage"),
        ("match-images", "match-images"),
        ("build-pairs", "build-pairs"),
        ("train", "train"),
        ("infer", "infer"),
        ("preview", "preview"),
    ):
        p = subs.add_parser(name, help=f"run the {name} stage")
        _add_config_args(p)
        p.set_defaults(fn=cmd_stage(stage))

    p = subs.add_parser("run", help="run the full pipeline")
    _add_config_args(p)
    p.set_defaults(fn=cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValidationError, FormatError, RangeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
