"""End-to-end batch pipeline: manifests, stage orchestration, previews.

A run executes preprocess -> stitch -> match-images -> build-pairs ->
train -> infer -> eval (paired fixtures only) -> preview inside one output
directory. Every stage writes a JSON report containing the hashes of its
inputs; re-running skips stages whose inputs are unchanged and whose
outputs still exist.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import re
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import mapper, otmatch, quality, stitcher
from .imgcore import (
    EmbeddingSet,
    RawPatch,
    RgbImage,
    decode_raw,
    read_embeddings,
    read_image,
    write_png,
)
from .objective import LossWeights
from .rawproc import RawProcConfig, preprocess


class ValidationError(ValueError):
    """Bad configuration or missing inputs, detected before any stage runs."""


STAGES = (
    "preprocess",
    "stitch",
    "match-images",
    "build-pairs",
    "train",
    "infer",
    "eval",
    "preview",
)


@dataclass(frozen=True)
class RunConfig:
    source_raw_dir: str
    target_rgb_dir: str
    output_dir: str
    source_image_embeddings: str = ""
    target_image_embeddings: str = ""
    source_patch_embeddings: str = ""
    target_patch_embeddings: str = ""
    eval_gt_dir: str = ""

    raw_height: int = 256
    raw_width: int = 256
    black_level: int = 0
    white_level: int = 1023
    wb_gains: tuple = (1.0, 1.0, 1.0, 1.0)
    gamma: float = 2.2
    denoise: str = "off"

    stitch_border: int = 4

    alpha: float = 0.5
    epsilon: float = 0.05
    max_iters: int = 1000
    tol: float = 1e-6
    cost_normalization: bool = True
    outer_iters: int = 10
    top_images: int = 10
    top_candidates: int = 8
    use_histogram_block: bool = False

    head: str = "ccm"
    lut_size: int = 9
    stage1_epochs: int = 10
    stage1_lr: float = 1e-4
    stage2_epochs: int = 5
    stage2_lr: float = 1e-4
    batch_size: int = 24
    seed: int = 0

    def rawproc_config(self) -> RawProcConfig:
        return RawProcConfig(
            self.black_level, self.white_level, tuple(self.wb_gains), self.gamma, self.denoise
        )

    def sinkhorn_config(self) -> otmatch.SinkhornConfig:
        return otmatch.SinkhornConfig(
            self.epsilon, self.max_iters, self.tol, self.cost_normalization
        )

    def train_config(self) -> mapper.TrainConfig:
        return mapper.TrainConfig(
            stage1=mapper.StageConfig(self.stage1_epochs, self.stage1_lr, LossWeights()),
            stage2=mapper.StageConfig(self.stage2_epochs, self.stage2_lr, LossWeights.stage2()),
            batch_size=self.batch_size,
            seed=self.seed,
        )

    def make_head(self):
        if self.head == "ccm":
            return mapper.CcmHead()
        if self.head == "lut3d":
            return mapper.Lut3dHead(self.lut_size)
        if self.head == "residual_cnn":
            return mapper.ResidualCnnHead(seed=self.seed)
        raise ValidationError(f"unknown head type {self.head!r}")


def load_config(path, overrides: dict = None) -> RunConfig:
    """Read a TOML config file (sections are flattened); `overrides` wins."""
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    flat = {}
    for key, value in raw.items():
        if isinstance(value, dict):
            flat.update(value)
        else:
            flat[key] = value
    if overrides:
        flat.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(flat) - known
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    if "wb_gains" in flat:
        flat["wb_gains"] = tuple(flat["wb_gains"])
    try:
        return RunConfig(**flat)
    except TypeError as exc:
        raise ValidationError(str(exc)) from None


# ---------------------------------------------------------------------------
# Manifests and file conventions


def natural_key(name: str):
    """Sort key treating digit runs numerically ("img2" < "img10")."""
    return tuple(int(t) if t.isdigit() else t for t in re.split(r"(\d+)", name))


def parent_of(patch_id: str) -> str:
    """Parent image id: the stem up to the last underscore."""
    return patch_id.rsplit("_", 1)[0] if "_" in patch_id else patch_id


@dataclass(frozen=True)
class Manifest:
    """Ordered patch records with parent images and grid positions."""

    records: tuple  # of dicts {id, file, parent_image_id, grid_position}

    def __post_init__(self):
        ids = [r["id"] for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate patch ids in manifest")

    def by_parent(self) -> dict:
        groups = {}
        for rec in self.records:
            groups.setdefault(rec["parent_image_id"], []).append(rec)
        return groups

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"records": list(self.records)}, fh, indent=2)

    @classmethod
    def read(cls, path) -> "Manifest":
        with open(path, encoding="utf-8") as fh:
            return cls(tuple(json.load(fh)["records"]))


def list_raw_patches(directory) -> list:
    d = Path(directory)
    files = [p for p in d.iterdir() if p.suffix in (".raw", ".npy")]
    return sorted(files, key=lambda p: natural_key(p.stem))


def load_raw_patch(path, default_shape=(256, 256)) -> RawPatch:
    path = Path(path)
    if path.suffix == ".npy":
        return RawPatch(np.load(path))
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        with open(sidecar, encoding="utf-8") as fh:
            meta = json.load(fh)
        shape = (int(meta["height"]), int(meta["width"]))
    else:
        shape = default_shape
    return decode_raw(path.read_bytes(), *shape)


def list_rgb_patches(directory) -> list:
    d = Path(directory)
    files = [p for p in d.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")]
    return sorted(files, key=lambda p: natural_key(p.stem))


# ---------------------------------------------------------------------------
# Stage report plumbing


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_inputs(paths, extra: dict = None) -> str:
    h = hashlib.sha256()
    for p in sorted(str(p) for p in paths):
        h.update(p.encode())
        h.update(_sha256(p).encode())
    if extra:
        h.update(json.dumps(extra, sort_keys=True, default=str).encode())
    return h.hexdigest()


class StageRunner:
    """Runs stages with hash-based skipping and JSON reports."""

    def __init__(self, run_dir: Path, seed: int):
        self.run_dir = Path(run_dir)
        self.reports_dir = self.run_dir / "reports"
        self.reports_dir.mkdir(parents=True, exist_ok=True)
        self.seed = seed

    def report_path(self, stage: str) -> Path:
        return self.reports_dir / f"{stage.replace('-', '_')}.json"

    def fresh(self, stage: str, input_hash: str) -> bool:
        path = self.report_path(stage)
        if not path.exists():
            return False
        with open(path, encoding="utf-8") as fh:
            report = json.load(fh)
        if report.get("input_hash") != input_hash or report.get("status") != "ok":
            return False
        return all(Path(out).exists() for out in report.get("outputs", []))

    def previous_output_hash(self, stage: str) -> str:
        path = self.report_path(stage)
        if not path.exists():
            return ""
        with open(path, encoding="utf-8") as fh:
            return json.load(fh).get("output_hash", "")

    def run(self, stage: str, input_hash: str, fn) -> dict:
        if self.fresh(stage, input_hash):
            with open(self.report_path(stage), encoding="utf-8") as fh:
                report = json.load(fh)
            report["skipped"] = True
            return report
        report = {
            "stage": stage,
            "seed": self.seed,
            "input_hash": input_hash,
            "started": time.time(),
            "status": "running",
        }
        try:
            outputs, details = fn()
            report["outputs"] = [str(o) for o in outputs]
            report["output_hash"] = _hash_inputs(outputs) if outputs else ""
            report["details"] = details
            report["status"] = "ok"
        except Exception as exc:
            report["status"] = "error"
            report["error"] = f"{type(exc).__name__}: {exc}"
            with open(self.report_path(stage), "w", encoding="utf-8") as fh:
                json.dump(report, fh, indent=2)
            raise
        finally:
            report["finished"] = time.time()
        with open(self.report_path(stage), "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
        report["skipped"] = False
        return report


# ---------------------------------------------------------------------------
# Stages


def stage_preprocess(cfg: RunConfig, run_dir: Path):
    out_dir = run_dir / "preprocessed"
    out_dir.mkdir(parents=True, exist_ok=True)
    rp_cfg = cfg.rawproc_config()
    files = list_raw_patches(cfg.source_raw_dir)
    if not files:
        raise ValidationError(f"no RAW patches found in {cfg.source_raw_dir}")
    outputs = []
    for path in files:
        patch = load_raw_patch(path, (cfg.raw_height, cfg.raw_width))
        img = preprocess(patch, rp_cfg)
        out = out_dir / f"{path.stem}.png"
        write_png(img, out)
        outputs.append(out)
    return outputs, {"count": len(outputs)}


def _stitch_domain(patch_files, border: int):
    """Group patch files by parent, infer layouts, and build manifest records."""
    groups = {}
    for path in patch_files:
        groups.setdefault(parent_of(path.stem), []).append(path)
    records, layouts, images = [], {}, {}
    for parent in sorted(groups, key=natural_key):
        files = sorted(groups[parent], key=lambda p: natural_key(p.stem))
        patches = [read_image(p) for p in files]
        candidates = stitcher.score_layouts(patches, len(patches), border)
        best = min(candidates, key=lambda lc: (lc.score, abs(lc.rows - lc.cols), lc.rows))
        layouts[parent] = {
            "N": len(patches),
            "R": best.rows,
            "C": best.cols,
            "score": best.score,
            "all_candidate_scores": [
                {"R": lc.rows, "C": lc.cols, "score": lc.score} for lc in candidates
            ],
        }
        images[parent] = stitcher.assemble(patches, best.rows, best.cols)
        for idx, path in enumerate(files):
            records.append(
                {
                    "id": path.stem,
                    "file": str(path),
                    "parent_image_id": parent,
                    "grid_position": [idx // best.cols, idx % best.cols],
                }
            )
    return Manifest(tuple(records)), layouts, images


def stage_stitch(cfg: RunConfig, run_dir: Path):
    outputs = []
    details = {}
    for domain, patch_dir in (
        ("source", run_dir / "preprocessed"),
        ("target", Path(cfg.target_rgb_dir)),
    ):
        files = list_rgb_patches(patch_dir)
        if not files:
            raise ValidationError(f"no patches to stitch in {patch_dir}")
        manifest, layouts, images = _stitch_domain(files, cfg.stitch_border)
        out_dir = run_dir / "stitched" / domain
        out_dir.mkdir(parents=True, exist_ok=True)
        for parent, img in images.items():
            out = out_dir / f"{parent}.png"
            write_png(img, out)
            outputs.append(out)
        mpath = run_dir / "stitched" / f"manifest_{domain}.json"
        manifest.write(mpath)
        outputs.append(mpath)
        details[domain] = layouts
    return outputs, details


def _image_descriptors(cfg: RunConfig, emb_path: str, stitched_dir: Path) -> EmbeddingSet:
    emb = read_embeddings(emb_path)
    if not cfg.use_histogram_block:
        return emb
    vectors = []
    for name in emb.names:
        img = read_image(stitched_dir / f"{name}.png")
        vectors.append(
            otmatch.compose_descriptor([emb.vector(name), otmatch.histogram_descriptor(img)])
        )
    return EmbeddingSet(emb.names, np.stack(vectors))


def stage_match_images(cfg: RunConfig, run_dir: Path):
    src = _image_descriptors(cfg, cfg.source_image_embeddings, run_dir / "stitched" / "source")
    tgt = _image_descriptors(cfg, cfg.target_image_embeddings, run_dir / "stitched" / "target")
    costs = otmatch.build_costs(src, tgt, cfg.alpha)
    plan = otmatch.fgw_match(
        costs,
        otmatch.uniform_marginals(len(src)),
        otmatch.uniform_marginals(len(tgt)),
        cfg.sinkhorn_config(),
        cfg.outer_iters,
    )
    out_dir = run_dir / "matching"
    out_dir.mkdir(parents=True, exist_ok=True)
    plan_path = out_dir / "image_plan.npz"
    np.savez(
        plan_path,
        matrix=plan.matrix,
        source_ids=np.array(src.names),
        target_ids=np.array(tgt.names),
    )
    ranking = {
        src.names[i]: [tgt.names[j] for j in row]
        for i, row in enumerate(otmatch.top_k_images(plan, cfg.top_images))
    }
    rank_path = out_dir / "ranking.json"
    with open(rank_path, "w", encoding="utf-8") as fh:
        json.dump(ranking, fh, indent=2)
    details = {
        "converged": plan.converged,
        "marginal_violation": plan.marginal_violation,
        "objective_trace": list(plan.objective_trace),
    }
    return [plan_path, rank_path], details


def _patch_sets_by_image(emb: EmbeddingSet) -> dict:
    groups = {}
    for name in emb.names:
        groups.setdefault(parent_of(name), []).append(name)
    return {img: emb.subset(sorted(names, key=natural_key)) for img, names in groups.items()}


def stage_build_pairs(cfg: RunConfig, run_dir: Path):
    data = np.load(run_dir / "matching" / "image_plan.npz")
    source_ids = [str(s) for s in data["source_ids"]]
    target_ids = [str(s) for s in data["target_ids"]]
    matrix = data["matrix"]
    plan = otmatch.TransportPlan(
        matrix,
        otmatch.uniform_marginals(matrix.shape[0]),
        otmatch.uniform_marginals(matrix.shape[1]),
        True,
        0.0,
        0,
    )
    src_patches = _patch_sets_by_image(read_embeddings(cfg.source_patch_embeddings))
    tgt_patches = _patch_sets_by_image(read_embeddings(cfg.target_patch_embeddings))
    graph = otmatch.build_pair_graph(
        plan,
        source_ids,
        target_ids,
        src_patches,
        tgt_patches,
        cfg.sinkhorn_config(),
        cfg.top_images,
        cfg.top_candidates,
    )
    out_dir = run_dir / "pairs"
    out_dir.mkdir(parents=True, exist_ok=True)
    graph_path = out_dir / "pair_graph.jsonl"
    graph.to_jsonl(graph_path)
    return [graph_path], {"sources": len(graph)}


def stage_train(cfg: RunConfig, run_dir: Path):
    graph = otmatch.PairGraph.from_jsonl(run_dir / "pairs" / "pair_graph.jsonl")
    sources = {
        p.stem: read_image(p) for p in list_rgb_patches(run_dir / "preprocessed")
    }
    targets = {p.stem: read_image(p) for p in list_rgb_patches(cfg.target_rgb_dir)}
    head = cfg.make_head()
    result = mapper.train(head, graph, sources, targets, cfg.train_config())
    out_dir = run_dir / "train"
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "head.ckpt"
    mapper.save_checkpoint(head, ckpt, seed=cfg.seed, stage=result.final_stage)
    trace_path = out_dir / "loss_trace.json"
    with open(trace_path, "w", encoding="utf-8") as fh:
        json.dump(
            {"epoch_losses": list(result.epoch_losses), "stage_epochs": list(result.stage_epochs)},
            fh,
            indent=2,
        )
    return [ckpt, trace_path], {"final_loss": result.epoch_losses[-1]}


def stage_infer(cfg: RunConfig, run_dir: Path):
    head, _ = mapper.load_checkpoint(run_dir / "train" / "head.ckpt")
    out_dir = run_dir / "predictions"
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for path in list_rgb_patches(run_dir / "preprocessed"):
        pred = mapper.forward(head, read_image(path))
        out = out_dir / f"{path.stem}.png"
        write_png(pred, out)
        outputs.append(out)
    return outputs, {"count": len(outputs)}


def stage_eval(cfg: RunConfig, run_dir: Path):
    if not cfg.eval_gt_dir:
        return [], {"skipped": "no eval_gt_dir configured"}
    gt = {p.stem: p for p in list_rgb_patches(cfg.eval_gt_dir)}
    pairs = []
    for path in list_rgb_patches(run_dir / "predictions"):
        if path.stem in gt:
            pairs.append((path.stem, read_image(path), read_image(gt[path.stem])))
    if not pairs:
        raise ValidationError("no prediction/ground-truth pairs matched by name")
    report = quality.evaluate_pairs(pairs)
    out_dir = run_dir / "eval"
    out_dir.mkdir(parents=True, exist_ok=True)
    jpath = out_dir / "metrics.json"
    cpath = out_dir / "per_image.csv"
    report.write_json(jpath)
    report.write_csv(cpath)
    return [jpath, cpath], {"mean_psnr": report.to_dict()["mean_psnr"]}


def montage(patch_dir: Path, manifest: Manifest, parent: str):
    """Assemble one parent image from prediction patches; missing patches
    become flat gray tiles. Returns (RgbImage, missing ids)."""
    records = manifest.by_parent()[parent]
    rows = 1 + max(r["grid_position"][0] for r in records)
    cols = 1 + max(r["grid_position"][1] for r in records)
    grid = {}
    shape = None
    missing = []
    for rec in records:
        path = patch_dir / f"{rec['id']}.png"
        if path.exists():
            img = read_image(path)
            shape = img.planes.shape
            grid[tuple(rec["grid_position"])] = img
        else:
            missing.append(rec["id"])
    if shape is None:
        raise ValidationError(f"no patches found for image {parent!r}")
    gray = RgbImage(np.full(shape, 0.5, np.float32))
    patches = [grid.get((r, c), gray) for r in range(rows) for c in range(cols)]
    return stitcher.assemble(patches, rows, cols), missing


def stage_preview(cfg: RunConfig, run_dir: Path):
    manifest = Manifest.read(run_dir / "stitched" / "manifest_source.json")
    out_dir = run_dir / "previews"
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    warnings = {}
    for parent in sorted(manifest.by_parent(), key=natural_key):
        inputs, miss_in = montage(run_dir / "preprocessed", manifest, parent)
        preds, miss_pred = montage(run_dir / "predictions", manifest, parent)
        pane = np.concatenate([inputs.planes, preds.planes], axis=2)
        out = out_dir / f"{parent}.png"
        write_png(RgbImage(pane), out)
        outputs.append(out)
        if miss_in or miss_pred:
            warnings[parent] = {"missing_inputs": miss_in, "missing_predictions": miss_pred}
    return outputs, {"warnings": warnings}


# ---------------------------------------------------------------------------
# Orchestration


def _validate(cfg: RunConfig) -> None:
    for name in ("source_raw_dir", "target_rgb_dir"):
        path = getattr(cfg, name)
        if not path or not Path(path).is_dir():
            raise ValidationError(f"{name} does not exist: {path!r}")
    if not list_raw_patches(cfg.source_raw_dir):
        raise ValidationError(f"source_raw_dir has no RAW patches: {cfg.source_raw_dir!r}")
    if not list_rgb_patches(cfg.target_rgb_dir):
        raise ValidationError(f"target_rgb_dir has no RGB patches: {cfg.target_rgb_dir!r}")
    for name in (
        "source_image_embeddings",
        "target_image_embeddings",
        "source_patch_embeddings",
        "target_patch_embeddings",
    ):
        path = getattr(cfg, name)
        if not path or not Path(path).is_file():
            raise ValidationError(f"{name} does not exist: {path!r}")
    cfg.rawproc_config()
    cfg.make_head()


def run_pipeline(cfg: RunConfig) -> Path:
    """Validate, lock the run directory, and execute all stages in order."""
    _validate(cfg)
    run_dir = Path(cfg.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    lock = run_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RuntimeError(f"run directory is locked by another run: {lock}") from None
    os.write(fd, str(os.getpid()).encode())
    os.close(fd)
    try:
        snapshot = run_dir / "run_config.json"
        with open(snapshot, "w", encoding="utf-8") as fh:
            json.dump(dataclasses.asdict(cfg), fh, indent=2, default=str)
        runner = StageRunner(run_dir, cfg.seed)
        cfg_dict = dataclasses.asdict(cfg)

        raw_files = list_raw_patches(cfg.source_raw_dir)
        target_files = list_rgb_patches(cfg.target_rgb_dir)
        h_pre = _hash_inputs(raw_files, {"cfg": _raw_keys(cfg_dict)})
        runner.run("preprocess", h_pre, lambda: stage_preprocess(cfg, run_dir))

        h_stitch = _hash_inputs(
            target_files, {"up": runner.previous_output_hash("preprocess"), "b": cfg.stitch_border}
        )
        runner.run("stitch", h_stitch, lambda: stage_stitch(cfg, run_dir))

        h_match = _hash_inputs(
            [cfg.source_image_embeddings, cfg.target_image_embeddings],
            {"up": runner.previous_output_hash("stitch"), "cfg": _match_keys(cfg_dict)},
        )
        runner.run("match-images", h_match, lambda: stage_match_images(cfg, run_dir))

        h_pairs = _hash_inputs(
            [cfg.source_patch_embeddings, cfg.target_patch_embeddings],
            {"up": runner.previous_output_hash("match-images"), "cfg": _match_keys(cfg_dict)},
        )
        runner.run("build-pairs", h_pairs, lambda: stage_build_pairs(cfg, run_dir))

        h_train = _hash_inputs(
            target_files,
            {"up": runner.previous_output_hash("build-pairs"), "cfg": _train_keys(cfg_dict)},
        )
        runner.run("train", h_train, lambda: stage_train(cfg, run_dir))

        h_infer = _hash_inputs([], {"up": runner.previous_output_hash("train")})
        runner.run("infer", h_infer, lambda: stage_infer(cfg, run_dir))

        h_eval = _hash_inputs([], {"up": runner.previous_output_hash("infer"), "gt": cfg.eval_gt_dir})
        runner.run("eval", h_eval, lambda: stage_eval(cfg, run_dir))

        h_prev = _hash_inputs([], {"up": runner.previous_output_hash("infer")})
        runner.run("preview", h_prev, lambda: stage_preview(cfg, run_dir))
    finally:
        lock.unlink(missing_ok=True)
    return run_dir


def _raw_keys(cfg: dict) -> dict:
    keys = ("raw_height", "raw_width", "black_level", "white_level", "wb_gains", "gamma", "denoise")
    return {k: cfg[k] for k in keys}


def _match_keys(cfg: dict) -> dict:
    keys = (
        "alpha", "epsilon", "max_iters", "tol", "cost_normalization",
        "outer_iters", "top_images", "top_candidates", "use_histogram_block",
    )
    return {k: cfg[k] for k in keys}


def _train_keys(cfg: dict) -> dict:
    keys = (
        "head", "lut_size", "stage1_epochs", "stage1_lr",
        "stage2_epochs", "stage2_lr", "batch_size", "seed",
    )
    return {k: cfg[k] for k in keys}
