"""Entropic optimal transport matching between unpaired image collections.

The coarse-to-fine pseudo-pairing works in two passes. First, full images
are matched with a fused cost that mixes cross-domain feature distances
with intra-domain structure agreement (alternating linearization solved by
Sinkhorn). Second, patches of each source image are matched against the
pooled patches of its top-ranked target images with a plain feature-
distance Sinkhorn, and the two plans are multiplied into per-patch
candidate weights used for sampling during training.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .imgcore import EmbeddingSet, RgbImage


class NumericalError(ArithmeticError):
    """Solver produced NaN/Inf; usually epsilon is too small for the cost scale."""


class ConfigurationError(ValueError):
    """Inconsistent matching inputs (empty pools, missing parents, ...)."""


@dataclass(frozen=True)
class SinkhornConfig:
    epsilon: float = 0.05
    max_iters: int = 1000
    tol: float = 1e-6  # L1 marginal violation
    cost_normalization: bool = True  # divide cost by its max entry before solving

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass(frozen=True)
class CostMatrices:
    """Squared-Euclidean costs: cross-domain plus the two intra-domain matrices."""

    cross: np.ndarray  # (N_s, N_t)
    intra_source: np.ndarray  # (N_s, N_s), symmetric, zero diagonal
    intra_target: np.ndarray  # (N_t, N_t), symmetric, zero diagonal
    alpha: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        for name in ("cross", "intra_source", "intra_target"):
            m = getattr(self, name)
            if not np.all(np.isfinite(m)) or np.any(m < 0):
                raise ValueError(f"{name} must be finite and nonnegative")


@dataclass(frozen=True)
class TransportPlan:
    matrix: np.ndarray  # (N_s, N_t), nonnegative
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    converged: bool
    marginal_violation: float
    iterations: int
    objective_trace: tuple = field(default_factory=tuple)


def uniform_marginals(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def squared_distances(x: np.ndarray, y: np.ndarray, block: int = 64) -> np.ndarray:
    """Pairwise squared Euclidean distances, computed blockwise by explicit
    differences (no dot-product trick, so small distances stay exact)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    out = np.empty((x.shape[0], y.shape[0]), dtype=np.float64)
    for i in range(0, x.shape[0], block):
        diff = x[i : i + block, None, :] - y[None, :, :]
        out[i : i + block] = np.sum(diff * diff, axis=-1)
    return out


def build_costs(src: EmbeddingSet, tgt: EmbeddingSet, alpha: float = 0.5) -> CostMatrices:
    """Cross and intra-domain squared-Euclidean cost matrices."""
    if src.dim != tgt.dim:
        raise ValueError(f"embedding dims differ: {src.dim} vs {tgt.dim}")
    if len(src) < 1 or len(tgt) < 1:
        raise ValueError("both embedding sets must be non-empty")
    cross = squared_distances(src.vectors, tgt.vectors)
    d_src = squared_distances(src.vectors, src.vectors)
    d_tgt = squared_distances(tgt.vectors, tgt.vectors)
    for d in (d_src, d_tgt):
        d += d.T  # enforce exact symmetry
        d *= 0.5
        np.fill_diagonal(d, 0.0)
    return CostMatrices(cross, d_src, d_tgt, alpha)


def _logsumexp(m: np.ndarray, axis: int) -> np.ndarray:
    mx = m.max(axis=axis, keepdims=True)
    out = mx.squeeze(axis) + np.log(np.sum(np.exp(m - mx), axis=axis))
    return out


def _check_marginals(a: np.ndarray, b: np.ndarray, shape) -> None:
    if a.shape != (shape[0],) or b.shape != (shape[1],):
        raise ValueError("marginal lengths do not match cost shape")
    for name, m in (("a", a), ("b", b)):
        if np.any(m <= 0):
            raise ValueError(f"marginal {name} must be strictly positive")
        if abs(m.sum() - 1.0) > 1e-9:
            raise ValueError(f"marginal {name} must sum to 1 (got {m.sum()!r})")


def sinkhorn(
    cost: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    cfg: SinkhornConfig = SinkhornConfig(),
) -> TransportPlan:
    """Entropic OT by log-stabilized Sinkhorn scaling.

    Minimizes <P, cost> + epsilon * sum P (log P - 1) over couplings with
    marginals (a, b). Scaling runs in the exponential domain for speed; the
    scaling factors are absorbed into log-domain potentials whenever they
    grow large, so small epsilon does not underflow. Stops when the L1
    violation of both marginals drops below cfg.tol, else after
    cfg.max_iters with converged=False.
    """
    cost = np.asarray(cost, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    _check_marginals(a, b, cost.shape)

    if cfg.cost_normalization:
        cmax = cost.max()
        if cmax > 0:
            cost = cost / cmax
    eps = cfg.epsilon
    log_a = np.log(a)
    log_b = np.log(b)
    f = np.zeros(cost.shape[0])
    g = np.zeros(cost.shape[1])
    u = np.ones(cost.shape[0])
    v = np.ones(cost.shape[1])
    kernel = np.exp((f[:, None] + g[None, :] - cost) / eps)
    violation = np.inf
    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_iters + 1):
        kv = kernel @ v
        if iterations > 1:
            violation = float(np.abs(u * kv - a).sum())  # columns exact after v step
            if violation < cfg.tol:
                converged = True
                break
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            u = a / kv
            v = b / (kernel.T @ u)
        unstable = (
            not np.all(np.isfinite(u))
            or not np.all(np.isfinite(v))
            or u.min() <= 0
            or v.min() <= 0
        )
        if unstable:
            # One exact double update in the log domain, then resume scaling.
            f = eps * (log_a - _logsumexp((g[None, :] - cost) / eps, axis=1))
            g = eps * (log_b - _logsumexp((f[:, None] - cost) / eps, axis=0))
            u = np.ones_like(u)
            v = np.ones_like(v)
            kernel = np.exp((f[:, None] + g[None, :] - cost) / eps)
        elif u.max() > 1e15 or v.max() > 1e15 or min(u.min(), v.min()) < 1e-15:
            f = f + eps * np.log(u)
            g = g + eps * np.log(v)
            u = np.ones_like(u)
            v = np.ones_like(v)
            kernel = np.exp((f[:, None] + g[None, :] - cost) / eps)
    plan = u[:, None] * kernel * v[None, :]
    if not np.all(np.isfinite(plan)):
        raise NumericalError("sinkhorn kernel produced non-finite values")
    violation = float(
        np.abs(plan.sum(axis=1) - a).sum() + np.abs(plan.sum(axis=0) - b).sum()
    )
    return TransportPlan(plan, a, b, converged or violation < cfg.tol, violation, iterations)


def _gw_linearization(
    d_src: np.ndarray, d_tgt: np.ndarray, plan: np.ndarray
) -> np.ndarray:
    """S(T)_ij = sum_{i'j'} (D_X(i,i') - D_Y(j,j'))^2 T_{i'j'}, expanded as
    three matrix products (square-loss decomposition)."""
    row = plan.sum(axis=1)
    col = plan.sum(axis=0)
    term_src = (d_src**2) @ row  # (N_s,)
    term_tgt = (d_tgt**2) @ col  # (N_t,)
    return term_src[:, None] + term_tgt[None, :] - 2.0 * (d_src @ plan @ d_tgt)


def fused_objective(costs: CostMatrices, plan: np.ndarray) -> float:
    """(1 - alpha) <C, T> + alpha * sum (D_X - D_Y)^2 T x T."""
    lin = _gw_linearization(costs.intra_source, costs.intra_target, plan)
    return float(
        (1.0 - costs.alpha) * np.sum(costs.cross * plan)
        + costs.alpha * np.sum(lin * plan)
    )


def fgw_match(
    costs: CostMatrices,
    a: np.ndarray,
    b: np.ndarray,
    cfg: SinkhornConfig = SinkhornConfig(),
    outer_iters: int = 10,
) -> TransportPlan:
    """Fused Gromov-Wasserstein matching by alternating linearization.

    Starts from the product coupling a b^T; each outer iteration freezes the
    quadratic term at the current plan, forms the linearized cost
    (1 - alpha) C + alpha S(T), and re-solves with Sinkhorn. alpha=0 reduces
    exactly to plain Sinkhorn on the cross cost.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_marginals(a, b, costs.cross.shape)
    plan = np.outer(a, b)
    trace = [fused_objective(costs, plan)]
    result = None
    for _ in range(outer_iters):
        if costs.alpha == 0.0:
            lin_cost = costs.cross
        else:
            lin = _gw_linearization(costs.intra_source, costs.intra_target, plan)
            lin_cost = (1.0 - costs.alpha) * costs.cross + costs.alpha * lin
        result = sinkhorn(lin_cost, a, b, cfg)
        plan = result.matrix
        trace.append(fused_objective(costs, plan))
    return replace(result, objective_trace=tuple(trace))


def top_k_images(plan: TransportPlan, k: int = 10) -> list:
    """Per source row: target indices by descending plan mass, ties by index."""
    ranked = []
    for row in plan.matrix:
        order = np.lexsort((np.arange(row.size), -row))
        ranked.append([int(j) for j in order[:k]])
    return ranked


# ---------------------------------------------------------------------------
# Patch-level pair graph


@dataclass(frozen=True)
class PairGraph:
    """Sparse source-patch -> target-patch candidates with sampling weights.

    entries maps each source patch id to a tuple of (target_id, weight)
    pairs sorted by descending weight; weights sum to 1 per source patch.
    """

    entries: dict
    source_parent: dict = field(default_factory=dict)
    target_parent: dict = field(default_factory=dict)

    def candidates(self, source_id: str):
        return self.entries[source_id]

    def __len__(self) -> int:
        return len(self.entries)

    def to_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for source_id, cands in self.entries.items():
                record = {
                    "source_id": source_id,
                    "candidates": [
                        {"target_id": t, "weight": float(w)} for t, w in cands
                    ],
                }
                fh.write(json.dumps(record) + "\n")

    @classmethod
    def from_jsonl(cls, path, source_parent=None, target_parent=None) -> "PairGraph":
        entries = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                entries[rec["source_id"]] = tuple(
                    (c["target_id"], float(c["weight"])) for c in rec["candidates"]
                )
        return cls(entries, source_parent or {}, target_parent or {})


def build_pair_graph(
    image_plan: TransportPlan,
    source_image_ids,
    target_image_ids,
    source_patches: dict,
    target_patches: dict,
    cfg: SinkhornConfig = SinkhornConfig(),
    top_images: int = 10,
    top_candidates: int = 8,
) -> PairGraph:
    """Patch-level matching restricted to each source image's top target images.

    source_patches / target_patches map image id -> EmbeddingSet whose record
    names are patch ids. For each source image, one Sinkhorn problem is solved
    between its patches and the pooled patches of its top-ranked target
    images (uniform marginals, plain squared-Euclidean cost), and the patch
    plan is modulated by the image plan: w_st ~ P_patch(s, t) * P_image(I_s,
    I_t). The top `top_candidates` targets per source patch are kept and
    renormalized to sum 1.
    """
    if image_plan.matrix.shape != (len(source_image_ids), len(target_image_ids)):
        raise ConfigurationError("image plan shape does not match image id lists")
    ranked = top_k_images(image_plan, top_images)
    entries = {}
    source_parent = {}
    target_parent = {}
    for img_id, patch_set in target_patches.items():
        for pid in patch_set.names:
            target_parent[pid] = img_id

    for i, src_img in enumerate(source_image_ids):
        patches = source_patches.get(src_img)
        if patches is None or len(patches) == 0:
            raise ConfigurationError(f"source image {src_img!r} has no patches")
        pool_ids, pool_vecs, pool_scores = [], [], []
        for j in ranked[i]:
            tgt_img = target_image_ids[j]
            tset = target_patches.get(tgt_img)
            if tset is None or len(tset) == 0:
                continue
            pool_ids.extend(tset.names)
            pool_vecs.append(tset.vectors)
            pool_scores.extend([image_plan.matrix[i, j]] * len(tset))
        if not pool_ids:
            raise ConfigurationError(
                f"empty candidate pool for source image {src_img!r}"
            )
        pool = np.concatenate(pool_vecs, axis=0)
        cost = squared_distances(patches.vectors, pool)
        patch_plan = sinkhorn(
            cost, uniform_marginals(len(patches)), uniform_marginals(len(pool_ids)), cfg
        )
        weights = patch_plan.matrix * np.asarray(pool_scores)[None, :]
        for s_idx, s_id in enumerate(patches.names):
            source_parent[s_id] = src_img
            row = weights[s_idx]
            order = sorted(range(len(pool_ids)), key=lambda t: (-row[t], pool_ids[t]))
            kept = order[: min(top_candidates, len(order))]
            total = row[kept].sum()
            if total <= 0:
                raise NumericalError(f"all candidate weights vanish for {s_id!r}")
            entries[s_id] = tuple((pool_ids[t], float(row[t] / total)) for t in kept)
    return PairGraph(entries, source_parent, target_parent)


def sample_target(graph: PairGraph, source_id: str, rng: np.random.Generator) -> str:
    """Categorical draw over the stored candidate weights."""
    cands = graph.entries[source_id]
    if len(cands) == 1:
        return cands[0][0]
    ids = [t for t, _ in cands]
    weights = np.array([w for _, w in cands])
    return ids[rng.choice(len(ids), p=weights / weights.sum())]


# ---------------------------------------------------------------------------
# Composite image descriptors


def compose_descriptor(blocks) -> np.ndarray:
    """Concatenate feature blocks, each L2-normalized (equal block weights)."""
    normed = []
    for block in blocks:
        v = np.asarray(block, dtype=np.float32).ravel()
        n = np.linalg.norm(v)
        normed.append(v / n if n > 0 else v)
    return np.concatenate(normed)


def histogram_descriptor(img: RgbImage, bins_y: int = 64, bins_uv: int = 32) -> np.ndarray:
    """Luminance/chrominance histogram block for the composite image descriptor."""
    from .objective import soft_histogram_uv, soft_histogram_y

    hy, _ = soft_histogram_y(img)
    huv, _ = soft_histogram_uv(img, bins_uv)
    return np.concatenate([hy, huv.ravel()]).astype(np.float32)
