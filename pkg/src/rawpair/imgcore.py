"""Core image types, color conversions, and binary container formats.

Everything downstream trades in these types: RAW sensor patches are packed
RGGB planes of 10-bit samples, working images are planar float32 RGB in
[0, 1], and embeddings/feature maps travel in small binary containers
(EMB1 / FMP1) so they can be produced by external tools.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

RAW_MAX = 1023  # 10-bit sensor samples
RAW_CHANNELS = 4  # packed (R, G_r, G_b, B)

EMB_MAGIC = b"EMB1"
FMP_MAGIC = b"FMP1"
CONTAINER_VERSION = 1

# Full-range BT.601 luma weights; U/V scaled into [-0.5, 0.5].
_YR, _YG, _YB = 0.299, 0.587, 0.114
_U_SCALE = 0.5 / (1.0 - _YB)  # 0.5 / 0.886
_V_SCALE = 0.5 / (1.0 - _YR)  # 0.5 / 0.701

# sRGB (D65) linear RGB -> XYZ, IEC 61966-2-1.
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_D65_WHITE = np.array([0.95047, 1.0, 1.08883])


class FormatError(ValueError):
    """Malformed buffer or container file."""


class RangeError(ValueError):
    """Sample or pixel values outside their declared range."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RawPatch:
    """Packed RGGB sensor patch, samples uint16 in [0, 1023], shape (H, W, 4)."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 3 or s.shape[2] != RAW_CHANNELS:
            raise FormatError(f"raw patch must be (H, W, 4), got {s.shape}")
        if s.shape[0] < 2 or s.shape[1] < 2:
            raise FormatError(f"raw patch must be at least 2x2, got {s.shape[:2]}")
        if s.dtype != np.uint16:
            if np.any(s < 0) or np.any(s != np.floor(s)):
                raise RangeError("raw samples must be nonnegative integers")
            s = s.astype(np.uint16)
        if int(s.max(initial=0)) > RAW_MAX:
            raise RangeError(f"raw sample {int(s.max())} exceeds {RAW_MAX}")
        object.__setattr__(self, "samples", _frozen(s))

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    def plane(self, idx: int) -> np.ndarray:
        """One of the packed planes: 0=R, 1=G_r, 2=G_b, 3=B."""
        return self.samples[:, :, idx]


@dataclass(frozen=True)
class RgbImage:
    """Planar float32 RGB image, shape (3, H, W), values in [0, 1]."""

    planes: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.planes, dtype=np.float32)
        if p.ndim != 3 or p.shape[0] != 3:
            raise FormatError(f"rgb image must be (3, H, W), got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise RangeError("rgb image contains non-finite values")
        if p.min() < -1e-6 or p.max() > 1.0 + 1e-6:
            raise RangeError(
                f"rgb values outside [0, 1]: min={p.min():.6g} max={p.max():.6g}"
            )
        object.__setattr__(self, "planes", _frozen(p))

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]

    def clamped(self) -> "RgbImage":
        return RgbImage(np.clip(self.planes, 0.0, 1.0))


@dataclass(frozen=True)
class YuvImage:
    """Planar float32 YUV image: Y in [0, 1], U/V in [-0.5, 0.5]."""

    planes: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.planes, dtype=np.float32)
        if p.ndim != 3 or p.shape[0] != 3:
            raise FormatError(f"yuv image must be (3, H, W), got {p.shape}")
        object.__setattr__(self, "planes", _frozen(p))

    @property
    def y(self) -> np.ndarray:
        return self.planes[0]

    @property
    def u(self) -> np.ndarray:
        return self.planes[1]

    @property
    def v(self) -> np.ndarray:
        return self.planes[2]


@dataclass(frozen=True)
class EmbeddingSet:
    """Named dense vectors, all of one dimension."""

    names: tuple
    vectors: np.ndarray  # (N, dim) float32

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float32)
        if v.ndim != 2:
            raise FormatError(f"embedding matrix must be 2-D, got {v.shape}")
        if len(self.names) != v.shape[0]:
            raise FormatError("name count does not match vector count")
        if len(set(self.names)) != len(self.names):
            raise FormatError("duplicate embedding names")
        if not np.all(np.isfinite(v)):
            raise RangeError("embeddings contain non-finite values")
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "vectors", _frozen(v))

    def __len__(self) -> int:
        return len(self.names)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def vector(self, name: str) -> np.ndarray:
        return self.vectors[self.names.index(name)]

    def subset(self, names) -> "EmbeddingSet":
        idx = [self.names.index(n) for n in names]
        return EmbeddingSet(tuple(names), self.vectors[idx])


@dataclass(frozen=True)
class FeatureMap:
    """One activation tensor: (C, H, W) float32 at a named layer tap."""

    name: str
    layer_id: int
    tensor: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.tensor, dtype=np.float32)
        if t.ndim != 3:
            raise FormatError(f"feature map must be (C, H, W), got {t.shape}")
        if not np.all(np.isfinite(t)):
            raise RangeError("feature map contains non-finite values")
        object.__setattr__(self, "tensor", _frozen(t))


@dataclass(frozen=True)
class FeatureMapSet:
    """Collection of feature maps keyed by (name, layer_id)."""

    maps: tuple = field(default_factory=tuple)

    def __post_init__(self):
        keys = [(m.name, m.layer_id) for m in self.maps]
        if len(set(keys)) != len(keys):
            raise FormatError("duplicate (name, layer_id) in feature map set")
        object.__setattr__(self, "maps", tuple(self.maps))

    def __len__(self) -> int:
        return len(self.maps)

    def layers_for(self, name: str) -> list:
        return sorted(m.layer_id for m in self.maps if m.name == name)

    def get(self, name: str, layer_id: int) -> FeatureMap:
        for m in self.maps:
            if m.name == name and m.layer_id == layer_id:
                return m
        raise KeyError((name, layer_id))


# ---------------------------------------------------------------------------
# RAW decoding


def decode_raw(buf: bytes, height: int, width: int) -> RawPatch:
    """Decode little-endian u16 packed RGGB samples, row-major channel-last."""
    expected = height * width * RAW_CHANNELS * 2
    if len(buf) != expected:
        raise FormatError(f"raw buffer is {len(buf)} bytes, expected {expected}")
    samples = np.frombuffer(buf, dtype="<u2").reshape(height, width, RAW_CHANNELS)
    if int(samples.max(initial=0)) > RAW_MAX:
        raise RangeError(f"raw sample {int(samples.max())} exceeds {RAW_MAX}")
    return RawPatch(samples.copy())


def encode_raw(patch: RawPatch) -> bytes:
    """Inverse of decode_raw; bit-exact round trip."""
    return patch.samples.astype("<u2").tobytes()


# ---------------------------------------------------------------------------
# Color conversions


def rgb_to_yuv(img: RgbImage) -> YuvImage:
    """Full-range BT.601: Y = .299R+.587G+.114B, U = .5(B-Y)/.886, V = .5(R-Y)/.701."""
    r, g, b = img.planes.astype(np.float64)
    y = _YR * r + _YG * g + _YB * b
    u = _U_SCALE * (b - y)
    v = _V_SCALE * (r - y)
    return YuvImage(np.stack([y, u, v]).astype(np.float32))


def yuv_to_rgb(img: YuvImage) -> RgbImage:
    """Inverse of rgb_to_yuv (round trip error < 1e-5 per sample)."""
    y, u, v = img.planes.astype(np.float64)
    b = y + u / _U_SCALE
    r = y + v / _V_SCALE
    g = (y - _YR * r - _YB * b) / _YG
    out = np.clip(np.stack([r, g, b]), 0.0, 1.0)
    return RgbImage(out.astype(np.float32))


def srgb_to_linear(values: np.ndarray) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def rgb_to_lab(img: RgbImage) -> np.ndarray:
    """sRGB -> linear -> XYZ (D65) -> CIE Lab; returns (3, H, W) float64.

    L is in [0, 100]; a and b are unbounded.
    """
    lin = srgb_to_linear(img.planes)
    xyz = np.einsum("ij,jhw->ihw", _RGB_TO_XYZ, lin)
    t = xyz / _D65_WHITE[:, None, None]
    delta = 6.0 / 29.0
    f = np.where(t > delta**3, np.cbrt(t), t / (3 * delta**2) + 4.0 / 29.0)
    fx, fy, fz = f
    lab = np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)])
    return lab


# ---------------------------------------------------------------------------
# EMB1 / FMP1 containers
#
# EMB1: magic "EMB1", version u32 LE, count u32 LE, dim u32 LE;
#       per record: name-length u16 LE, UTF-8 name, dim x f32 LE.
# FMP1: same header with magic "FMP1" (dim written as 0, shapes are
#       per-record); per record: name-length u16 LE, UTF-8 name,
#       layer-id u16, C u16, H u16, W u16, then C*H*W x f32 LE.


def write_embeddings(emb: EmbeddingSet, path) -> None:
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<III", CONTAINER_VERSION, len(emb), emb.dim))
        for name, vec in zip(emb.names, emb.vectors):
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(vec.astype("<f4").tobytes())


def read_embeddings(path) -> EmbeddingSet:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16 or data[:4] != EMB_MAGIC:
        raise FormatError(f"{path}: not an EMB1 container")
    version, count, dim = struct.unpack_from("<III", data, 4)
    if version != CONTAINER_VERSION:
        raise FormatError(f"{path}: unsupported EMB1 version {version}")
    off = 16
    names, vectors = [], []
    for _ in range(count):
        if off + 2 > len(data):
            raise FormatError(f"{path}: truncated EMB1 record header")
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        if off + nlen + 4 * dim > len(data):
            raise FormatError(f"{path}: truncated EMB1 record")
        names.append(data[off : off + nlen].decode("utf-8"))
        off += nlen
        vectors.append(np.frombuffer(data, dtype="<f4", count=dim, offset=off).copy())
        off += 4 * dim
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes in EMB1 file")
    mat = np.stack(vectors) if vectors else np.zeros((0, dim), np.float32)
    return EmbeddingSet(tuple(names), mat)


def write_feature_maps(fms: FeatureMapSet, path) -> None:
    with open(path, "wb") as fh:
        fh.write(FMP_MAGIC)
        fh.write(struct.pack("<III", CONTAINER_VERSION, len(fms), 0))
        for m in fms.maps:
            nb = m.name.encode("utf-8")
            c, h, w = m.tensor.shape
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<HHHH", m.layer_id, c, h, w))
            fh.write(m.tensor.astype("<f4").tobytes())


def read_feature_maps(path) -> FeatureMapSet:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16 or data[:4] != FMP_MAGIC:
        raise FormatError(f"{path}: not an FMP1 container")
    version, count, _ = struct.unpack_from("<III", data, 4)
    if version != CONTAINER_VERSION:
        raise FormatError(f"{path}: unsupported FMP1 version {version}")
    off = 16
    maps = []
    for _ in range(count):
        if off + 2 > len(data):
            raise FormatError(f"{path}: truncated FMP1 record header")
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        if off + nlen + 8 > len(data):
            raise FormatError(f"{path}: truncated FMP1 record")
        name = data[off : off + nlen].decode("utf-8")
        off += nlen
        layer_id, c, h, w = struct.unpack_from("<HHHH", data, off)
        off += 8
        n = c * h * w
        if off + 4 * n > len(data):
            raise FormatError(f"{path}: truncated FMP1 tensor")
        tensor = np.frombuffer(data, dtype="<f4", count=n, offset=off).copy()
        off += 4 * n
        maps.append(FeatureMap(name, layer_id, tensor.reshape(c, h, w)))
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes in FMP1 file")
    return FeatureMapSet(tuple(maps))


# ---------------------------------------------------------------------------
# PNG / JPEG import-export (8-bit)


def read_image(path) -> RgbImage:
    """Load an 8-bit PNG or JPEG as an RgbImage."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return RgbImage(arr.transpose(2, 0, 1))


def write_png(img: RgbImage, path) -> None:
    arr = np.clip(img.planes, 0.0, 1.0).transpose(1, 2, 0)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8)).save(path, format="PNG")
