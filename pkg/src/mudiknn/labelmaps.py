"""Ground-truth rasters for crowd counting.

Three label kinds are produced from an :class:`AnnotationSet`:

* ``density``: a unit-mass Gaussian per head, scale ``beta * sigma_h``;
* ``knn``: mean distance from each pixel centre to its k nearest heads;
* ``iknn``: ``1 / (knn + 1)``, element-wise.

Pixel ``(row i, col j)`` is sampled at its centre ``(x, y) = (j + 0.5, i + 0.5)``.
Generation accumulates in float64; the LMAP file format stores float32.
"""
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError, InsufficientHeadsError
from .spatial import HeadIndex

log = logging.getLogger(__name__)

KINDS = ("density", "knn", "iknn")
RESOLUTIONS = (28, 56, 112, 224)
FALLBACK_SIGMA = 16.0
TRUNCATE = 4.0


@dataclass(frozen=True)
class Adaptive:
    """sigma_h = mean distance to the ``k_sigma`` nearest other heads."""

    k_sigma: int = 3
    fallback: float = FALLBACK_SIGMA


@dataclass(frozen=True)
class Fixed:
    sigma: float


def parse_sigma_mode(text):
    """``"adaptive:3"`` -> ``Adaptive(3)``; ``"fixed:4.0"`` -> ``Fixed(4.0)``."""
    name, _, arg = text.partition(":")
    try:
        if name == "adaptive":
            return Adaptive(int(arg) if arg else 3)
        if name == "fixed":
            return Fixed(float(arg))
    except ValueError:
        pass
    raise ValueError(f"bad sigma mode {text!r}; expected adaptive:K or fixed:S")


def format_sigma_mode(mode):
    return f"adaptive:{mode.k_sigma}" if isinstance(mode, Adaptive) else f"fixed:{mode.sigma!r}"


@dataclass(frozen=True)
class MapConfig:
    k: int = 1
    beta: float = 0.3
    sigma_mode: object = Adaptive()
    label_resolution: int = 224

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be positive")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if 224 % self.label_resolution:
            raise ValueError(f"label resolution {self.label_resolution} must divide 224")


@dataclass(frozen=True, eq=False)
class LabelMap:
    kind: str
    values: np.ndarray  # (height, width)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown map kind {self.kind!r}")
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise ValueError("label map values must be 2D")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    def crop(self, x0, y0, width, height):
        return LabelMap(self.kind, self.values[y0:y0 + height, x0:x0 + width])


def pixel_centers(width, height):
    xs = np.arange(width) + 0.5
    ys = np.arange(height) + 0.5
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def sigma_for_head(annotations, head_index, sigma_mode=Adaptive(), index=None):
    """Gaussian scale before the ``beta`` factor for one head."""
    heads = annotations.heads
    if not 0 <= head_index < len(heads):
        raise IndexError(f"head index {head_index} out of range for {len(heads)} heads")
    if isinstance(sigma_mode, Fixed):
        return float(sigma_mode.sigma)
    if len(heads) - 1 < sigma_mode.k_sigma:
        return float(sigma_mode.fallback)
    index = index or HeadIndex(heads)
    # the nearest hit is the head itself at distance 0; drop exactly one
    dist = index.query(heads[head_index], sigma_mode.k_sigma + 1)[0]
    return float(dist[1:].mean())


def _all_sigmas(annotations, sigma_mode):
    heads = annotations.heads
    if isinstance(sigma_mode, Fixed):
        return np.full(len(heads), float(sigma_mode.sigma))
    if len(heads) - 1 < sigma_mode.k_sigma:
        return np.full(len(heads), float(sigma_mode.fallback))
    dist = HeadIndex(heads).query(heads, sigma_mode.k_sigma + 1)
    return dist[:, 1:].mean(axis=1)


def gaussian_kernel(x, y, scale, width, height):
    """Truncated, renormalized isotropic Gaussian stamp for one head.

    Returns ``(row_slice, col_slice, weights)`` with ``weights.sum() == 1``.
    When the scale is too small for any sampled weight to survive, the whole
    mass goes to the pixel containing the head.
    """
    col = min(int(np.floor(x)), width - 1)
    row = min(int(np.floor(y)), height - 1)
    radius = TRUNCATE * scale
    if scale > 0:
        c0 = max(0, min(col, int(np.floor(x - radius - 0.5))))
        c1 = min(width, max(col + 1, int(np.ceil(x + radius - 0.5)) + 1))
        r0 = max(0, min(row, int(np.floor(y - radius - 0.5))))
        r1 = min(height, max(row + 1, int(np.ceil(y + radius - 0.5)) + 1))
        dx = np.arange(c0, c1) + 0.5 - x
        dy = np.arange(r0, r1) + 0.5 - y
        d2 = dy[:, None] ** 2 + dx[None, :] ** 2
        weights = np.exp(-d2 / (2 * scale * scale)) / (2 * np.pi * scale * scale)
        weights[d2 > radius * radius] = 0.0
        total = weights.sum()
        if total > 0 and np.isfinite(total):
            return slice(r0, r1), slice(c0, c1), weights / total
    return slice(row, row + 1), slice(col, col + 1), np.ones((1, 1))


def density_map(annotations, config=MapConfig()):
    if config.beta <= 0:
        raise ValueError("beta must be positive")
    width, height = annotations.image_width, annotations.image_height
    out = np.zeros((height, width), dtype=np.float64)
    sigmas = _all_sigmas(annotations, config.sigma_mode)
    for (x, y), sigma in zip(annotations.heads, sigmas):
        rows, cols, weights = gaussian_kernel(x, y, config.beta * sigma, width, height)
        out[rows, cols] += weights
    return LabelMap("density", out)


def knn_map(annotations, k, workers=1, backend="kdtree"):
    heads = annotations.heads
    if len(heads) < k:
        raise InsufficientHeadsError()
    width, height = annotations.image_width, annotations.image_height
    index = HeadIndex(heads, backend=backend)
    dist = index.query(pixel_centers(width, height), k, workers=workers)
    return LabelMap("knn", dist.mean(axis=1).reshape(height, width))


def iknn_map(annotations, k, workers=1, backend="kdtree"):
    """``1 / (knn + 1)``; all zeros without heads, k clamped to H when H < k."""
    n = len(annotations.heads)
    if n == 0:
        return LabelMap("iknn", np.zeros((annotations.image_height, annotations.image_width)))
    if n < k:
        log.info("iknn_map: clamping k=%d to the %d available heads", k, n)
        k = n
    distances = knn_map(annotations, k, workers=workers, backend=backend).values
    return LabelMap("iknn", 1.0 / (distances + 1.0))


def make_map(kind, annotations, config=MapConfig(), workers=1):
    if kind == "density":
        return density_map(annotations, config)
    if kind == "knn":
        return knn_map(annotations, config.k, workers=workers)
    if kind == "iknn":
        return iknn_map(annotations, config.k, workers=workers)
    raise ValueError(f"unknown map kind {kind!r}")


def pool_mode_for(kind):
    """Density maps keep their sum under pooling; distance-based maps keep their range."""
    return "sum" if kind == "density" else "mean"


def downsample_values(values, target, mode):
    values = np.asarray(values)
    th, tw = (target, target) if np.isscalar(target) else target
    h, w = values.shape[-2:]
    if th <= 0 or tw <= 0 or h % th or w % tw:
        raise ValueError(f"target {th}x{tw} does not divide source {h}x{w}")
    fh, fw = h // th, w // tw
    blocks = values.reshape(*values.shape[:-2], th, fh, tw, fw)
    if mode in ("sum", "sum_pool"):
        return blocks.sum(axis=(-3, -1))
    if mode in ("mean", "mean_pool"):
        return blocks.mean(axis=(-3, -1))
    raise ValueError(f"unknown pooling mode {mode!r}")


def downsample_map(label_map, target, mode="sum_pool"):
    return LabelMap(label_map.kind, downsample_values(label_map.values, target, mode))


def to_uint8(values, scale="linear"):
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("map values must be finite")
    if scale == "log":
        values = np.log1p(np.maximum(values, 0.0))
    elif scale != "linear":
        raise ValueError(f"unknown scale {scale!r}")
    lo, hi = values.min(), values.max()
    if hi <= lo:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.round((values - lo) / (hi - lo) * 255.0).astype(np.uint8)


def export_png(label_map, path, scale="linear"):
    values = label_map.values if isinstance(label_map, LabelMap) else label_map
    try:
        Image.fromarray(to_uint8(values, scale), mode="L").save(path, format="PNG")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


_LMAP_HEADER = struct.Struct("<4sBBHII")
_LMAP_VERSION = 1


def save_lmap(path, label_map):
    header = _LMAP_HEADER.pack(b"LMAP", _LMAP_VERSION, KINDS.index(label_map.kind), 0,
                               label_map.width, label_map.height)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(label_map.values, dtype="<f4").tobytes())


def load_lmap(path):
    blob = Path(path).read_bytes()
    if len(blob) < _LMAP_HEADER.size:
        raise DataError(f"{path}: truncated LMAP header")
    magic, version, kind, _, width, height = _LMAP_HEADER.unpack_from(blob)
    if magic != b"LMAP" or version != _LMAP_VERSION or kind >= len(KINDS):
        raise DataError(f"{path}: not an LMAP v1 raster")
    expected = _LMAP_HEADER.size + 4 * width * height
    if len(blob) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(blob)}")
    values = np.frombuffer(blob, dtype="<f4", offset=_LMAP_HEADER.size).reshape(height, width)
    return LabelMap(KINDS[kind], values.astype(np.float32))
