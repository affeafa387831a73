"""Statistic-based training losses with exact analytic gradients.

Every loss is a pure function of the predicted image (and a target) and
returns (value, gradient with respect to the predicted RGB pixels). None
of them compares pixels point-to-point: moments, soft histograms, Gram
matrices and total variation all measure global or local-statistical
agreement, which is what makes them usable with sampled pseudo-targets.

Images may be passed as RgbImage or as raw (3, H, W) arrays; all internal
arithmetic runs in float64 so gradients survive central finite-difference
checks at 1e-4 relative tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imgcore import FeatureMapSet, RgbImage, YuvImage, _U_SCALE, _V_SCALE, _YB, _YG, _YR

# d(Y,U,V)/d(R,G,B) for the fixed full-range BT.601 transform.
_DY_DRGB = np.array([_YR, _YG, _YB])
_DU_DRGB = np.array([-_YR * _U_SCALE, -_YG * _U_SCALE, (1.0 - _YB) * _U_SCALE])
_DV_DRGB = np.array([(1.0 - _YR) * _V_SCALE, -_YG * _V_SCALE, -_YB * _V_SCALE])


def _planes64(img) -> np.ndarray:
    arr = img.planes if isinstance(img, RgbImage) else np.asarray(img)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"expected (3, H, W) image, got {arr.shape}")
    return arr.astype(np.float64)


def _yuv64(planes: np.ndarray) -> np.ndarray:
    r, g, b = planes
    y = _YR * r + _YG * g + _YB * b
    return np.stack([y, _U_SCALE * (b - y), _V_SCALE * (r - y)])


@dataclass(frozen=True)
class LossWeights:
    """Term weights for the combined objective (stage-1 defaults)."""

    mom: float = 1.0
    luma: float = 1.0
    chroma: float = 1.5
    gram: float = 1.0
    tv: float = 0.05

    def __post_init__(self):
        for name in ("mom", "luma", "chroma", "gram", "tv"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {name} must be finite and >= 0")

    @classmethod
    def stage2(cls) -> "LossWeights":
        """Second-stage refinement weights: TV and moment terms reduced."""
        return cls(mom=0.2, luma=1.0, chroma=1.5, gram=1.0, tv=0.01)


@dataclass(frozen=True)
class SoftHistogramSpec:
    bins_y: int = 64
    bins_uv: int = 32

    def __post_init__(self):
        if self.bins_y < 2 or self.bins_uv < 2:
            raise ValueError("histogram bin counts must be >= 2")


@dataclass(frozen=True)
class MomentStats:
    mean: np.ndarray  # (3,)
    std: np.ndarray  # (3,), population standard deviation


def moments(img) -> MomentStats:
    p = _planes64(img)
    return MomentStats(p.mean(axis=(1, 2)), p.std(axis=(1, 2)))


def moment_loss(pred, target):
    """L1 distance between channel means and population stds.

    Sizes may differ; statistics are global. The sigma gradient at a
    constant channel (sigma = 0) is defined as 0.
    """
    p = _planes64(pred)
    stats_p = moments(pred)
    stats_t = moments(target)
    mp, sp = stats_p.mean, stats_p.std
    mt, st = stats_t.mean, stats_t.std
    value = float(np.abs(mp - mt).sum() + np.abs(sp - st).sum())

    n = p.shape[1] * p.shape[2]
    grad = np.zeros_like(p)
    for c in range(3):
        grad[c] += np.sign(mp[c] - mt[c]) / n
        if sp[c] > 0:
            grad[c] += np.sign(sp[c] - st[c]) * (p[c] - mp[c]) / (n * sp[c])
    return value, grad


# ---------------------------------------------------------------------------
# Soft histograms (triangular kernel, exact partition of unity)


@dataclass(frozen=True)
class SoftHist1d:
    """1D soft histogram plus the per-pixel data needed to chain gradients."""

    hist: np.ndarray  # (bins,), sums to 1
    bin_low: np.ndarray  # lower active bin per pixel
    frac: np.ndarray  # weight of the upper bin per pixel
    interior: np.ndarray  # False where the value was clamped to an edge center
    delta: float
    count: int


def _soft_hist_1d(values: np.ndarray, bins: int, lo: float, hi: float) -> SoftHist1d:
    """Triangular-kernel histogram with centers at bin midpoints.

    Each value splits linearly between its two nearest centers; values in
    the outer half-bins saturate to the edge center so the histogram sums to
    exactly 1 for any input in [lo, hi].
    """
    delta = (hi - lo) / bins
    c0 = lo + 0.5 * delta
    if not np.all(np.isfinite(values)):
        # propagate instead of crashing; train() names the offending term
        nan_hist = np.full(bins, np.nan)
        zeros = np.zeros(values.shape, dtype=np.int64)
        return SoftHist1d(nan_hist, zeros, np.zeros_like(values), np.zeros(values.shape, bool), delta, values.size)
    v = np.clip(values, c0, hi - 0.5 * delta)
    pos = (v - c0) / delta
    k0 = np.minimum(pos.astype(np.int64), bins - 2)
    frac = pos - k0
    n = values.size
    hist = (
        np.bincount(k0.ravel(), weights=(1.0 - frac).ravel(), minlength=bins)
        + np.bincount(k0.ravel() + 1, weights=frac.ravel(), minlength=bins)
    ) / n
    interior = (values > c0) & (values < hi - 0.5 * delta)
    return SoftHist1d(hist, k0, frac, interior, delta, n)


def _luma(img) -> np.ndarray:
    if isinstance(img, YuvImage):
        return img.y.astype(np.float64)
    return _yuv64(_planes64(img))[0]


def soft_histogram_y(img, bins: int = 64):
    """Luma soft histogram; accepts RgbImage, YuvImage, or a planes array."""
    sh = _soft_hist_1d(_luma(img), bins, 0.0, 1.0)
    return sh.hist, sh


def soft_histogram_uv(img, bins: int = 32):
    """Joint 2D chrominance soft histogram over (U, V) in [-0.5, 0.5]^2."""
    if isinstance(img, YuvImage):
        u, v = img.u.astype(np.float64), img.v.astype(np.float64)
    else:
        _, u, v = _yuv64(_planes64(img))
    su = _soft_hist_1d(u, bins, -0.5, 0.5)
    sv = _soft_hist_1d(v, bins, -0.5, 0.5)
    wu = np.stack([1.0 - su.frac, su.frac])  # (2, H, W)
    wv = np.stack([1.0 - sv.frac, sv.frac])
    hist = np.zeros(bins * bins)
    for iu in range(2):
        for iv in range(2):
            idx = (su.bin_low + iu) * bins + (sv.bin_low + iv)
            hist += np.bincount(
                idx.ravel(), weights=(wu[iu] * wv[iv]).ravel(), minlength=bins * bins
            )
    hist = hist.reshape(bins, bins) / su.count
    return hist, (su, sv)


def _hist_1d_pixel_grad(diff: np.ndarray, sh: SoftHist1d) -> np.ndarray:
    """d ||h - h*||^2 / d value_p given diff = h - h*."""
    g = 2.0 * (diff[sh.bin_low + 1] - diff[sh.bin_low]) / (sh.delta * sh.count)
    return np.where(sh.interior, g, 0.0)


def hist_loss_y(pred, target, bins: int = 64):
    """Squared L2 between luma soft histograms; gradient w.r.t. RGB pixels."""
    hp, sh = soft_histogram_y(pred, bins)
    ht, _ = soft_histogram_y(target, bins)
    diff = hp - ht
    value = float(np.sum(diff * diff))
    grad_y = _hist_1d_pixel_grad(diff, sh)
    return value, grad_y[None, :, :] * _DY_DRGB[:, None, None]


def hist_loss_uv(pred, target, bins: int = 32):
    """Squared L2 between joint UV soft histograms; gradient w.r.t. RGB pixels."""
    hp, (su, sv) = soft_histogram_uv(pred, bins)
    ht, _ = soft_histogram_uv(target, bins)
    diff = hp - ht
    value = float(np.sum(diff * diff))

    wu = np.stack([1.0 - su.frac, su.frac])
    wv = np.stack([1.0 - sv.frac, sv.frac])
    # d hist[ku+iu, kv+iv] / dU carries +-1/delta times the V-axis weight,
    # and symmetrically for V.
    grad_u = np.zeros_like(su.frac)
    grad_v = np.zeros_like(sv.frac)
    for iv in range(2):
        d_u = diff[su.bin_low + 1, sv.bin_low + iv] - diff[su.bin_low, sv.bin_low + iv]
        grad_u += d_u * wv[iv]
    for iu in range(2):
        d_v = diff[su.bin_low + iu, sv.bin_low + 1] - diff[su.bin_low + iu, sv.bin_low]
        grad_v += d_v * wu[iu]
    grad_u = np.where(su.interior, 2.0 * grad_u / (su.delta * su.count), 0.0)
    grad_v = np.where(sv.interior, 2.0 * grad_v / (sv.delta * sv.count), 0.0)
    return value, (
        grad_u[None, :, :] * _DU_DRGB[:, None, None]
        + grad_v[None, :, :] * _DV_DRGB[:, None, None]
    )


# ---------------------------------------------------------------------------
# Gram and total-variation terms


def gram_matrix(tensor: np.ndarray) -> np.ndarray:
    """Channel correlation F F^T / (C H W) of a (C, H, W) feature tensor."""
    c, h, w = tensor.shape
    flat = tensor.reshape(c, h * w).astype(np.float64)
    return flat @ flat.T / (c * h * w)


def gram_loss(pred_features: FeatureMapSet, target_features: FeatureMapSet):
    """Sum over layers of squared Frobenius distance between Gram matrices.

    Each set must contain exactly one map per layer id, and channel counts
    must agree per layer (spatial sizes may differ). Returns the loss and a
    dict layer_id -> gradient w.r.t. the predicted feature tensor.
    """
    pred_by_layer = {m.layer_id: m for m in pred_features.maps}
    tgt_by_layer = {m.layer_id: m for m in target_features.maps}
    if len(pred_by_layer) != len(pred_features.maps):
        raise ValueError("predicted feature set has duplicate layer ids")
    if set(pred_by_layer) != set(tgt_by_layer):
        raise ValueError(
            f"layer mismatch: {sorted(pred_by_layer)} vs {sorted(tgt_by_layer)}"
        )
    value = 0.0
    grads = {}
    for layer_id, pm in sorted(pred_by_layer.items()):
        tm = tgt_by_layer[layer_id]
        if pm.tensor.shape[0] != tm.tensor.shape[0]:
            raise ValueError(f"channel mismatch at layer {layer_id}")
        c, h, w = pm.tensor.shape
        flat = pm.tensor.reshape(c, h * w).astype(np.float64)
        diff = gram_matrix(pm.tensor) - gram_matrix(tm.tensor)
        value += float(np.sum(diff * diff))
        grads[layer_id] = (4.0 / (c * h * w) * (diff @ flat)).reshape(c, h, w)
    return value, grads


def tv_loss(pred):
    """Anisotropic L1 total variation normalized by C*H*W; sign(0) = 0."""
    p = _planes64(pred)
    c, h, w = p.shape
    dv = p[:, 1:, :] - p[:, :-1, :]
    dh = p[:, :, 1:] - p[:, :, :-1]
    norm = c * h * w
    value = float((np.abs(dv).sum() + np.abs(dh).sum()) / norm)
    grad = np.zeros_like(p)
    sv = np.sign(dv) / norm
    sh = np.sign(dh) / norm
    grad[:, 1:, :] += sv
    grad[:, :-1, :] -= sv
    grad[:, :, 1:] += sh
    grad[:, :, :-1] -= sh
    return value, grad


def total_loss(
    pred,
    target,
    weights: LossWeights = LossWeights(),
    pred_features: FeatureMapSet = None,
    target_features: FeatureMapSet = None,
    hist_spec: SoftHistogramSpec = SoftHistogramSpec(),
    with_terms: bool = False,
):
    """Weighted combination of all terms; gradient w.r.t. predicted pixels.

    The Gram term contributes to the value only when both feature sets are
    supplied; since features are extracted out-of-process, it has no pixel
    gradient here (gram_loss exposes the feature-space gradient directly).
    """
    terms = {}
    grad = np.zeros_like(_planes64(pred))
    for name, weight, fn in (
        ("mom", weights.mom, lambda: moment_loss(pred, target)),
        ("luma", weights.luma, lambda: hist_loss_y(pred, target, hist_spec.bins_y)),
        ("chroma", weights.chroma, lambda: hist_loss_uv(pred, target, hist_spec.bins_uv)),
        ("tv", weights.tv, lambda: tv_loss(pred)),
    ):
        if weight > 0:
            v, g = fn()
            terms[name] = v
            grad += weight * g
    if weights.gram > 0 and pred_features is not None and target_features is not None:
        terms["gram"], _ = gram_loss(pred_features, target_features)
    value = sum(getattr(weights, k) * v for k, v in terms.items())
    if with_terms:
        return value, grad, terms
    return value, grad
