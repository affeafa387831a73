"""Color-mapping heads with hand-derived gradients, AdamW, and training.

Three heads are exposed: a global 3x3 color matrix (equivalent to a 1x1
convolution), a trilinearly interpolated 3D lookup table, and a small
residual CNN (two 3x3 conv layers, hidden width 128, plus a final 1x1
conv for channel mixing; 7,055 parameters). All parameter math is float64
numpy; checkpoints serialize to float32.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .imgcore import RawPatch, RgbImage
from .objective import LossWeights, SoftHistogramSpec, total_loss
from .otmatch import PairGraph, sample_target
from .rawproc import RawProcConfig, preprocess

CHECKPOINT_MAGIC = b"RPHD"


class TrainingError(RuntimeError):
    """Training aborted (non-finite loss or invalid inputs)."""


def _planes64(img) -> np.ndarray:
    arr = img.planes if isinstance(img, RgbImage) else np.asarray(img)
    return arr.astype(np.float64)


def _kaiming_uniform(shape, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class CcmHead:
    """3x3 color correction matrix plus bias, output clamped to [0, 1]."""

    head_type = "ccm"

    def __init__(self):
        self.matrix = np.eye(3)
        self.bias = np.zeros(3)

    def params(self) -> dict:
        return {"matrix": self.matrix, "bias": self.bias}

    def param_count(self) -> int:
        return 12

    def forward_planes(self, x: np.ndarray):
        flat = x.reshape(3, -1)
        pre = self.matrix @ flat + self.bias[:, None]
        out = np.clip(pre, 0.0, 1.0)
        mask = (pre >= 0.0) & (pre <= 1.0)
        return out.reshape(x.shape), (flat, mask)

    def backward_planes(self, x: np.ndarray, upstream: np.ndarray, cache):
        flat, mask = cache
        up = upstream.reshape(3, -1) * mask
        grads = {"matrix": up @ flat.T, "bias": up.sum(axis=1)}
        return grads, (self.matrix.T @ up).reshape(x.shape)

    def project(self):
        pass


class Lut3dHead:
    """3D lookup table on an L^3 lattice with trilinear interpolation.

    Identity-initialized: the entry at lattice point (i, j, k) is
    (i, j, k) / (L - 1). Entries are projected back into [0, 1] after each
    optimizer step; outputs are convex combinations of entries so never
    leave [0, 1].
    """

    head_type = "lut3d"

    def __init__(self, size: int = 9):
        if size < 2:
            raise ValueError("lattice size must be >= 2")
        self.size = size
        grid = np.linspace(0.0, 1.0, size)
        r, g, b = np.meshgrid(grid, grid, grid, indexing="ij")
        self.lattice = np.stack([r, g, b], axis=-1)  # (L, L, L, 3)

    def params(self) -> dict:
        return {"lattice": self.lattice}

    def param_count(self) -> int:
        return self.size**3 * 3

    def _cells(self, x: np.ndarray):
        scaled = np.clip(x, 0.0, 1.0) * (self.size - 1)
        low = np.minimum(scaled.astype(np.int64), self.size - 2)
        return low, scaled - low

    def forward_planes(self, x: np.ndarray):
        low, frac = self._cells(x)
        (i0, j0, k0), (fr, fg, fb) = low, frac
        out = np.zeros_like(x)
        corners = []
        for ai in range(2):
            for aj in range(2):
                for ak in range(2):
                    w = (
                        (fr if ai else 1.0 - fr)
                        * (fg if aj else 1.0 - fg)
                        * (fb if ak else 1.0 - fb)
                    )
                    idx = (i0 + ai, j0 + aj, k0 + ak)
                    entry = self.lattice[idx]  # (H, W, 3)
                    out += w[None, :, :] * entry.transpose(2, 0, 1)
                    corners.append((idx, w, (ai, aj, ak)))
        return out, (low, frac, corners)

    def backward_planes(self, x: np.ndarray, upstream: np.ndarray, cache):
        low, frac, corners = cache
        (i0, j0, k0), (fr, fg, fb) = low, frac
        size = self.size
        grad_lat = np.zeros_like(self.lattice)
        flat_lat = grad_lat.reshape(-1, 3)
        grad_x = np.zeros_like(x)
        axis_fracs = (fr, fg, fb)
        for idx, w, axes in corners:
            flat_idx = (idx[0] * size + idx[1]) * size + idx[2]
            np.add.at(flat_lat, flat_idx.ravel(), (w[:, :, None] * upstream.transpose(1, 2, 0)).reshape(-1, 3))
            entry = self.lattice[idx].transpose(2, 0, 1)  # (3, H, W)
            contrib = (upstream * entry).sum(axis=0)  # (H, W)
            for a in range(3):
                others = 1.0
                for o in range(3):
                    if o == a:
                        continue
                    others = others * (axis_fracs[o] if axes[o] else 1.0 - axis_fracs[o])
                sign = 1.0 if axes[a] else -1.0
                grad_x[a] += contrib * others * sign * (size - 1)
        return {"lattice": grad_lat}, grad_x

    def project(self):
        np.clip(self.lattice, 0.0, 1.0, out=self.lattice)


def _pad_replicate(x: np.ndarray) -> np.ndarray:
    return np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="edge")


def _unpad_replicate_adjoint(g: np.ndarray) -> np.ndarray:
    """Adjoint of 1-pixel replicate padding: fold pad rows/cols onto edges."""
    core = g[:, 1:-1, 1:-1].copy()
    core[:, 0, :] += g[:, 0, 1:-1]
    core[:, -1, :] += g[:, -1, 1:-1]
    core[:, :, 0] += g[:, 1:-1, 0]
    core[:, :, -1] += g[:, 1:-1, -1]
    core[:, 0, 0] += g[:, 0, 0]
    core[:, 0, -1] += g[:, 0, -1]
    core[:, -1, 0] += g[:, -1, 0]
    core[:, -1, -1] += g[:, -1, -1]
    return core


def _im2col3(xp: np.ndarray):
    """(C, H+2, W+2) padded input -> (C*9, H*W) patch matrix."""
    c = xp.shape[0]
    h, w = xp.shape[1] - 2, xp.shape[2] - 2
    windows = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2))
    return windows.transpose(0, 3, 4, 1, 2).reshape(c * 9, h * w)


def _col2im3(grad_cols: np.ndarray, c: int, h: int, w: int) -> np.ndarray:
    """Adjoint of _im2col3: scatter-add patch gradients into the padded image."""
    g = grad_cols.reshape(c, 3, 3, h, w)
    out = np.zeros((c, h + 2, w + 2))
    for ki in range(3):
        for kj in range(3):
            out[:, ki : ki + h, kj : kj + w] += g[:, ki, kj]
    return out


class ResidualCnnHead:
    """Residual color CNN: conv3x3(3->128) + ReLU + conv3x3(128->3), skip
    connection from the input, then a 1x1 channel-mixing conv; 7,055
    parameters. Replicate padding keeps spatial size; output clamped."""

    head_type = "residual_cnn"
    hidden = 128

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.w1 = _kaiming_uniform((self.hidden, 3, 3, 3), 3 * 9, rng)
        self.b1 = np.zeros(self.hidden)
        # residual branch damped so the untrained network stays near-identity
        self.w2 = 0.1 * _kaiming_uniform((3, self.hidden, 3, 3), self.hidden * 9, rng)
        self.b2 = np.zeros(3)
        self.w3 = np.eye(3)  # 1x1 conv initialized to identity
        self.b3 = np.zeros(3)

    def params(self) -> dict:
        return {
            "w1": self.w1,
            "b1": self.b1,
            "w2": self.w2,
            "b2": self.b2,
            "w3": self.w3,
            "b3": self.b3,
        }

    def param_count(self) -> int:
        return sum(p.size for p in self.params().values())

    def forward_planes(self, x: np.ndarray):
        h, w = x.shape[1:]
        cols1 = _im2col3(_pad_replicate(x))
        pre1 = (self.w1.reshape(self.hidden, -1) @ cols1 + self.b1[:, None]).reshape(
            self.hidden, h, w
        )
        act = np.maximum(pre1, 0.0)
        cols2 = _im2col3(_pad_replicate(act))
        res = (self.w2.reshape(3, -1) @ cols2 + self.b2[:, None]).reshape(3, h, w)
        y = x + res
        pre3 = self.w3 @ y.reshape(3, -1) + self.b3[:, None]
        out = np.clip(pre3, 0.0, 1.0).reshape(3, h, w)
        mask = ((pre3 >= 0.0) & (pre3 <= 1.0)).reshape(3, h, w)
        return out, (cols1, pre1, act, cols2, y, mask)

    def backward_planes(self, x: np.ndarray, upstream: np.ndarray, cache):
        cols1, pre1, act, cols2, y, mask = cache
        h, w = x.shape[1:]
        up = (upstream * mask).reshape(3, -1)
        grads = {}
        grads["w3"] = up @ y.reshape(3, -1).T
        grads["b3"] = up.sum(axis=1)
        gy = (self.w3.T @ up).reshape(3, h, w)

        g_res = gy.reshape(3, -1)
        grads["w2"] = (g_res @ cols2.T).reshape(self.w2.shape)
        grads["b2"] = g_res.sum(axis=1)
        g_act = _unpad_replicate_adjoint(
            _col2im3(self.w2.reshape(3, -1).T @ g_res, self.hidden, h, w)
        )
        g_pre1 = (g_act * (pre1 > 0.0)).reshape(self.hidden, -1)
        grads["w1"] = (g_pre1 @ cols1.T).reshape(self.w1.shape)
        grads["b1"] = g_pre1.sum(axis=1)
        g_x = _unpad_replicate_adjoint(_col2im3(self.w1.reshape(self.hidden, -1).T @ g_pre1, 3, h, w))
        return grads, gy + g_x

    def project(self):
        pass


def forward(head, img) -> RgbImage:
    """Apply a head to an image; returns a clamped RgbImage."""
    out, _ = head.forward_planes(_planes64(img))
    return RgbImage(np.clip(out, 0.0, 1.0).astype(np.float32))


def backward(head, img, upstream: np.ndarray) -> dict:
    """Parameter gradients of sum(upstream * head(img)); recomputes forward."""
    x = _planes64(img)
    _, cache = head.forward_planes(x)
    grads, _ = head.backward_planes(x, np.asarray(upstream, dtype=np.float64), cache)
    return grads


# ---------------------------------------------------------------------------
# Optimizer and training


class AdamW:
    """AdamW with decoupled weight decay over a named parameter dict."""

    def __init__(self, params: dict, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict) -> None:
        self.step_count += 1
        b1, b2 = self.betas
        bc1 = 1.0 - b1**self.step_count
        bc2 = 1.0 - b2**self.step_count
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            update = (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)
            p -= self.lr * update + self.lr * self.weight_decay * p


@dataclass(frozen=True)
class StageConfig:
    epochs: int
    lr: float = 1e-4
    weights: LossWeights = LossWeights()

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr < 0:
            raise ValueError("learning rate must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    stage1: StageConfig = StageConfig(epochs=10, lr=1e-4, weights=LossWeights())
    stage2: StageConfig = StageConfig(epochs=5, lr=1e-4, weights=LossWeights.stage2())
    batch_size: int = 24
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    hist_spec: SoftHistogramSpec = SoftHistogramSpec()
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass(frozen=True)
class TrainResult:
    epoch_losses: tuple  # per-epoch mean total loss across both stages
    stage_epochs: tuple  # epochs per stage, aligned with the trace
    final_stage: int


def train(
    head,
    graph: PairGraph,
    source_patches: dict,
    target_patches: dict,
    cfg: TrainConfig = TrainConfig(),
) -> TrainResult:
    """Two-stage training over sampled pseudo-pairs; deterministic per seed.

    Each batch samples one target per source patch from the pair graph,
    averages total_loss and its pixel gradient over the batch, backpropagates
    through the head, and takes one AdamW step. Stage 2 re-runs the loop with
    its own weights. Raises TrainingError naming the offending term if any
    loss term goes non-finite.
    """
    if len(graph) == 0:
        raise TrainingError("pair graph is empty")
    missing = [s for s in graph.entries if s not in source_patches]
    if missing:
        raise TrainingError(f"source patches not loadable: {missing[:3]}")
    rng = np.random.default_rng(cfg.seed)
    source_ids = sorted(graph.entries)
    sources = {s: _planes64(source_patches[s]) for s in source_ids}
    targets = {t: _planes64(p) for t, p in target_patches.items()}

    opt = AdamW(head.params(), lr=cfg.stage1.lr, betas=cfg.betas, eps=cfg.eps,
                weight_decay=cfg.weight_decay)
    epoch_losses = []
    for stage_idx, stage in enumerate((cfg.stage1, cfg.stage2), start=1):
        opt.lr = stage.lr
        for epoch in range(stage.epochs):
            order = rng.permutation(len(source_ids))
            total = 0.0
            n_batches = 0
            for start in range(0, len(order), cfg.batch_size):
                batch = [source_ids[i] for i in order[start : start + cfg.batch_size]]
                grads = {k: np.zeros_like(p) for k, p in head.params().items()}
                batch_loss = 0.0
                for s in batch:
                    x = sources[s]
                    t = targets[sample_target(graph, s, rng)]
                    pred, cache = head.forward_planes(x)
                    value, pixel_grad, terms = total_loss(
                        pred, t, stage.weights, hist_spec=cfg.hist_spec, with_terms=True
                    )
                    bad = [k for k, v in terms.items() if not np.isfinite(v)]
                    if bad:
                        raise TrainingError(
                            f"non-finite {bad[0]} loss at stage {stage_idx} "
                            f"epoch {epoch + 1} (source {s!r})"
                        )
                    batch_loss += value
                    g, _ = head.backward_planes(x, pixel_grad / len(batch), cache)
                    for k in grads:
                        grads[k] += g[k]
                opt.step(grads)
                head.project()
                total += batch_loss / len(batch)
                n_batches += 1
            epoch_losses.append(total / n_batches)
    return TrainResult(tuple(epoch_losses), (cfg.stage1.epochs, cfg.stage2.epochs), 2)


def infer(head, raw_patches, cfg: RawProcConfig = RawProcConfig()) -> list:
    """Preprocess RAW patches and apply the head; outputs clamped RgbImages."""
    out = []
    for patch in raw_patches:
        img = preprocess(patch, cfg) if isinstance(patch, RawPatch) else patch
        out.append(forward(head, img))
    return out


# ---------------------------------------------------------------------------
# Checkpoints: u32 header length, JSON header, then f32 LE parameter blob.


def save_checkpoint(head, path, seed: int = 0, stage: int = 0) -> None:
    params = head.params()
    header = {
        "head_type": head.head_type,
        "shapes": {k: list(v.shape) for k, v in params.items()},
        "seed": seed,
        "stage": stage,
    }
    if head.head_type == "lut3d":
        header["lattice_size"] = head.size
    blob = b"".join(params[k].astype("<f4").tobytes() for k in sorted(params))
    hdr = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(hdr)))
        fh.write(hdr)
        fh.write(blob)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a head checkpoint")
    (hlen,) = struct.unpack_from("<I", data, 4)
    header = json.loads(data[8 : 8 + hlen].decode("utf-8"))
    if header["head_type"] == "ccm":
        head = CcmHead()
    elif header["head_type"] == "lut3d":
        head = Lut3dHead(header["lattice_size"])
    elif header["head_type"] == "residual_cnn":
        head = ResidualCnnHead()
    else:
        raise ValueError(f"unknown head type {header['head_type']!r}")
    params = head.params()
    off = 8 + hlen
    for k in sorted(params):
        shape = tuple(header["shapes"][k])
        n = int(np.prod(shape))
        vals = np.frombuffer(data, dtype="<f4", count=n, offset=off).astype(np.float64)
        params[k][...] = vals.reshape(shape)
        off += 4 * n
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes")
    return head, header
