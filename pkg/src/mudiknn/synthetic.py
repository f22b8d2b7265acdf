"""Seeded synthetic crowd scenes with exact head annotations.

Heads are drawn first, then rendered as soft luminance disks whose radius
grows linearly with the y coordinate (near the bottom of the frame = closer
to the camera = larger), over a flat background with Gaussian pixel noise.
"""
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .annotations import AnnotationSet, load_annotations, save_annotations
from .errors import DataError, LoadError


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    width: int = 224
    height: int = 224
    count_lo: int = 5
    count_hi: int = 50
    radius_lo: float = 2.0
    radius_hi: float = 5.0
    noise: float = 0.05
    background: float = 0.25

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"degenerate scene size {self.width}x{self.height}")
        if self.count_lo < 0 or self.count_hi < self.count_lo:
            raise ValueError(f"bad count range [{self.count_lo}, {self.count_hi}]")
        if self.radius_lo <= 0 or self.radius_hi < self.radius_lo:
            raise ValueError(f"bad radius range [{self.radius_lo}, {self.radius_hi}]")


def generate_scene(config):
    """Return ``(image, annotations)``; ``image`` is ``3 x H x W`` float32 in [0, 1]."""
    rng = np.random.default_rng(config.seed)
    w, h = config.width, config.height
    count = int(rng.integers(config.count_lo, config.count_hi + 1))
    heads = np.column_stack([rng.uniform(0, w, count), rng.uniform(0, h, count)])
    # uniform() can round up to the open bound for large extents
    heads = np.minimum(heads, np.nextafter(np.array([w, h], dtype=np.float64), 0))
    annotations = AnnotationSet(w, h, heads)

    brightness = rng.uniform(0.6, 1.0, count)
    tint = rng.uniform(0.85, 1.0, (count, 3))
    image = np.full((3, h, w), config.background, dtype=np.float64)
    ys = np.arange(h) + 0.5
    xs = np.arange(w) + 0.5
    for (x, y), level, rgb in zip(heads, brightness, tint):
        radius = config.radius_lo + (config.radius_hi - config.radius_lo) * (y / h)
        r0, r1 = max(0, int(y - radius - 1)), min(h, int(y + radius + 2))
        c0, c1 = max(0, int(x - radius - 1)), min(w, int(x + radius + 2))
        d = np.hypot(ys[r0:r1, None] - y, xs[None, c0:c1] - x)
        coverage = np.clip(radius + 0.5 - d, 0.0, 1.0)
        patch = image[:, r0:r1, c0:c1]
        np.maximum(patch, config.background + coverage * (level * rgb[:, None, None] - config.background),
                   out=patch)
    image += rng.normal(0.0, config.noise, image.shape)
    return np.clip(image, 0.0, 1.0).astype(np.float32), annotations


def scene_seeds(seed, n_scenes):
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n_scenes)]


def save_image(path, image):
    pixels = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(pixels, mode="RGB").save(path, format="PNG")


def load_image(path):
    with Image.open(path) as im:
        pixels = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return pixels.transpose(2, 0, 1).copy()


def image_size(path):
    with Image.open(path) as im:
        return im.size


def generate_dataset(config, n_scenes, directory):
    """Write ``scene_NNNN.png`` / ``.csv`` pairs plus ``manifest.txt``; returns the directory."""
    if n_scenes < 1:
        raise ValueError("n_scenes must be at least 1")
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {directory}: {exc}") from exc
    lines = [f"{key}={value}" for key, value in asdict(config).items()]
    lines.append(f"n_scenes={n_scenes}")
    total = 0
    for i, seed in enumerate(scene_seeds(config.seed, n_scenes)):
        image, annotations = generate_scene(replace(config, seed=seed))
        stem = f"scene_{i:04d}"
        save_image(directory / f"{stem}.png", image)
        save_annotations(directory / f"{stem}.csv", annotations)
        total += len(annotations)
        lines.append(f"{stem}={seed}")
    lines.append(f"total_count={total}")
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return directory


@dataclass
class Sample:
    name: str
    image: np.ndarray
    annotations: AnnotationSet


def load_dataset(directory):
    """Pair every ``*.png`` with the ``*.csv`` of the same stem, sorted by name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise LoadError(f"dataset directory not found: {directory}")
    samples = []
    for png in sorted(directory.glob("*.png")):
        csv_path = png.with_suffix(".csv")
        if not csv_path.exists():
            raise LoadError(f"no annotation CSV for {png.name}")
        image = load_image(png)
        annotations = load_annotations(csv_path, image.shape[2], image.shape[1])
        samples.append(Sample(png.stem, image, annotations))
    if not samples:
        raise LoadError(f"no images found in {directory}")
    return samples
