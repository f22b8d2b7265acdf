"""Sliding-window inference, count metrics and labeling ablation sweeps."""
import csv
import math
from dataclasses import dataclass

import numpy as np

from . import tensorops as T
from .errors import DataError
from .train import precompute_labels, train


def _offsets(extent, patch, step):
    offsets = list(range(0, extent - patch + 1, step))
    if offsets[-1] != extent - patch:
        offsets.append(extent - patch)
    return offsets


def sliding_window_positions(width, height, patch=224, step=128):
    """Top-left ``(x, y)`` offsets of every window, row-major.

    Offsets step by ``step`` along each axis; a final window flush with the
    far edge is added when the stride does not land on it.
    """
    if width < patch or height < patch:
        raise DataError(f"image {width}x{height} smaller than patch {patch}; reflect-pad it first")
    if step < 1:
        raise ValueError("step must be positive")
    return [(x, y) for y in _offsets(height, patch, step) for x in _offsets(width, patch, step)]


def predict_image(model, image, patch=224, step=128, batch_size=8):
    """Full-image map and count from overlapping windows.

    The map is the per-pixel mean of the windows' module-averaged maps.  Each
    window's count is spread uniformly over its pixels, the spread values are
    averaged per pixel like the maps, and the count is their sum over the
    image.  Images smaller than ``patch`` are reflect-padded and the result
    cropped back.
    """
    image = np.asarray(image, dtype=np.float32)
    _, h, w = image.shape
    pad_h, pad_w = max(0, patch - h), max(0, patch - w)
    if pad_h or pad_w:
        image = np.pad(image, ((0, 0), (0, pad_h), (0, pad_w)), mode="reflect")
    _, ph, pw = image.shape
    positions = sliding_window_positions(pw, ph, patch, step)
    map_sum = np.zeros((ph, pw))
    count_sum = np.zeros((ph, pw))
    coverage = np.zeros((ph, pw))
    with T.no_grad():
        for start in range(0, len(positions), batch_size):
            chunk = positions[start:start + batch_size]
            patches = np.stack([image[:, y:y + patch, x:x + patch] for x, y in chunk])
            pred = model(patches)
            maps = pred.mean_map.reshape(len(chunk), patch, patch)
            counts = np.asarray(pred.final_count.data, dtype=np.float64).reshape(-1)
            for (x, y), m, c in zip(chunk, maps, counts):
                map_sum[y:y + patch, x:x + patch] += m
                count_sum[y:y + patch, x:x + patch] += c / (patch * patch)
                coverage[y:y + patch, x:x + patch] += 1
    full_map = (map_sum / coverage)[:h, :w]
    count = float((count_sum / coverage)[:h, :w].sum())
    return full_map, count


@dataclass
class MetricsReport:
    n: int
    truths: np.ndarray
    predictions: np.ndarray
    mae: float
    nae: float
    rmse: float
    nae_excluded: int = 0


def compute_metrics(pairs):
    """MAE, NAE and RMSE over ``(true count, predicted count)`` pairs.

    Images with a true count of zero are left out of NAE; how many were left
    out is reported in ``nae_excluded``.
    """
    pairs = np.asarray(list(pairs), dtype=np.float64).reshape(-1, 2)
    if len(pairs) == 0:
        raise ValueError("compute_metrics needs at least one image")
    truth, pred = pairs[:, 0], pairs[:, 1]
    err = np.abs(pred - truth)
    positive = truth > 0
    nae = float(np.mean(err[positive] / truth[positive])) if positive.any() else math.nan
    return MetricsReport(
        n=len(pairs),
        truths=truth,
        predictions=pred,
        mae=float(err.mean()),
        nae=nae,
        rmse=float(np.sqrt(np.mean(err * err))),
        nae_excluded=int((~positive).sum()),
    )


def evaluate(model, samples, patch=224, step=128):
    pairs = []
    for s in samples:
        _, count = predict_image(model, s.image, patch=patch, step=step)
        pairs.append((len(s.annotations), count))
    return compute_metrics(pairs)


def constant_baseline(train_samples, test_samples):
    """Predict the mean training count for every test image."""
    mean = float(np.mean([len(s.annotations) for s in train_samples]))
    return compute_metrics([(len(s.annotations), mean) for s in test_samples])


def ablation_sweep(train_samples, test_samples, axis, values, base_config, patch_step=128, workers=1,
                   progress=None):
    """One train + evaluate run per value of ``axis``; returns ``[(method, report)]``."""
    values = list(values)
    if not values:
        raise ValueError("ablation_sweep needs at least one value")
    rows = []
    cache = {}
    for value in values:
        config = base_config.with_axis(axis, value)
        # labels depend on kind/k/beta/sigma only; resolution pooling happens per batch
        key = (config.label_kind, config.maps.k, config.maps.beta, config.maps.sigma_mode)
        if key not in cache:
            cache[key] = precompute_labels(train_samples, config, workers)
        result = train(train_samples, config, labels=cache[key])
        report = evaluate(result.model, test_samples, patch=config.patch, step=patch_step)
        rows.append((config.method_name(), report))
        if progress is not None:
            progress(config.method_name(), report)
    return rows


def write_metrics_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "mae", "nae", "rmse"])
        for method, report in rows:
            writer.writerow([method, repr(report.mae), repr(report.nae), repr(report.rmse)])
