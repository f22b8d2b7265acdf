"""Head-point annotations: CSV loading, serialization and dataset statistics.

One CSV per image, paired with the image by filename stem.  Each line is
``x,y`` in (sub-)pixel coordinates; an optional first line ``x,y`` is a
header.  Coordinates must satisfy ``0 <= x < width`` and ``0 <= y < height``.
"""
import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import LoadError


@dataclass(frozen=True, eq=False)
class AnnotationSet:
    image_width: int
    image_height: int
    heads: np.ndarray  # (H, 2) float64, columns x, y; read-only

    def __post_init__(self):
        heads = np.array(self.heads, dtype=np.float64).reshape(-1, 2)
        heads.setflags(write=False)
        object.__setattr__(self, "heads", heads)
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValueError(f"image dimensions must be positive, got {self.image_width}x{self.image_height}")
        bad = _out_of_bounds(heads, self.image_width, self.image_height)
        if bad.size:
            raise LoadError(f"head out of bounds at row {bad[0] + 1}")

    @property
    def count(self):
        return len(self.heads)

    def __len__(self):
        return len(self.heads)

    def crop(self, x0, y0, width, height):
        """Heads inside the window, shifted to window coordinates."""
        h = self.heads
        inside = (h[:, 0] >= x0) & (h[:, 0] < x0 + width) & (h[:, 1] >= y0) & (h[:, 1] < y0 + height)
        return AnnotationSet(width, height, h[inside] - (x0, y0))


def _out_of_bounds(heads, width, height):
    x, y = heads[:, 0], heads[:, 1]
    ok = np.isfinite(x) & np.isfinite(y) & (x >= 0) & (x < width) & (y >= 0) & (y < height)
    return np.flatnonzero(~ok)


def parse_annotations(text, image_width, image_height):
    rows = []
    reader = csv.reader(io.StringIO(text))
    index = 0
    for line_no, record in enumerate(reader):
        if not record or all(not field.strip() for field in record):
            continue
        if line_no == 0 and [f.strip().lower() for f in record] == ["x", "y"]:
            continue
        index += 1
        if len(record) != 2:
            raise LoadError(f"malformed row {index}: expected 2 fields, got {len(record)}")
        try:
            x, y = float(record[0]), float(record[1])
        except ValueError:
            raise LoadError(f"malformed row {index}: non-numeric value in {record!r}") from None
        if not (np.isfinite(x) and np.isfinite(y) and 0 <= x < image_width and 0 <= y < image_height):
            raise LoadError(f"head out of bounds at row {index}")
        rows.append((x, y))
    return AnnotationSet(image_width, image_height, np.array(rows, dtype=np.float64).reshape(-1, 2))


def load_annotations(path, image_width, image_height):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise LoadError(f"annotation file not found: {path}") from None
    return parse_annotations(text, image_width, image_height)


def format_annotations(annotations, header=True):
    lines = ["x,y"] if header else []
    lines.extend(f"{x!r},{y!r}" for x, y in annotations.heads.tolist())
    return "\n".join(lines) + "\n"


def save_annotations(path, annotations, header=True):
    Path(path).write_text(format_annotations(annotations, header=header), encoding="utf-8")


@dataclass(frozen=True)
class DatasetStats:
    images: int
    total_count: int
    mean_count: float
    max_count: int
    average_resolution: tuple  # (mean height, mean width)


def dataset_stats(sets):
    sets = list(sets)
    if not sets:
        raise ValueError("dataset_stats needs at least one annotation set")
    counts = [len(s) for s in sets]
    total = sum(counts)
    return DatasetStats(
        images=len(sets),
        total_count=total,
        mean_count=total / len(sets),
        max_count=max(counts),
        average_resolution=(float(np.mean([s.image_height for s in sets])),
                            float(np.mean([s.image_width for s in sets]))),
    )
