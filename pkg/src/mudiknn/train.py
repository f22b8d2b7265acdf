"""Training loop for :class:`~mudiknn.model.MudNet`."""
import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensorops as T
from .errors import DataError, NumericalError
from .labelmaps import MapConfig, downsample_values, format_sigma_mode, make_map, pool_mode_for
from .model import BackboneConfig, MudNet, compute_loss

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    label_kind: str = "iknn"
    maps: MapConfig = MapConfig()
    epochs: int = 10
    batch_size: int = 8
    lr: float = 1e-3
    seed: int = 0
    patch: int = 224
    backbone: BackboneConfig = BackboneConfig()
    init_count_bias: bool = True

    def __post_init__(self):
        if self.label_kind not in ("iknn", "density", "knn"):
            raise ValueError(f"unknown label kind {self.label_kind!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs and batch size must be >= 1 and lr > 0")

    def with_axis(self, axis, value):
        """Copy with one sweep axis (``k``, ``beta`` or ``resolution``) set."""
        if axis == "k":
            return replace(self, maps=replace(self.maps, k=int(value)))
        if axis == "beta":
            return replace(self, maps=replace(self.maps, beta=float(value)))
        if axis == "resolution":
            return replace(self, maps=replace(self.maps, label_resolution=int(value)))
        raise ValueError(f"unknown sweep axis {axis!r}")

    def method_name(self):
        if self.label_kind == "density":
            name = f"MUD-density-beta{self.maps.beta:g}"
        elif self.label_kind == "iknn":
            name = f"MUD-i{self.maps.k}NN"
        else:
            name = f"MUD-{self.maps.k}NN"
        r = self.maps.label_resolution
        return name if r == self.patch else f"{name} {r}x{r}"

    def describe(self):
        return {
            "label_kind": self.label_kind,
            "k": self.maps.k,
            "beta": repr(self.maps.beta),
            "sigma_mode": format_sigma_mode(self.maps.sigma_mode),
            "resolution": self.maps.label_resolution,
            "epochs": self.epochs,
            "batch": self.batch_size,
            "lr": repr(self.lr),
            "seed": self.seed,
        }


@dataclass
class EpochLoss:
    epoch: int
    total: float
    map_loss: float
    count_loss: float


@dataclass
class TrainResult:
    model: MudNet
    config: TrainConfig
    history: list = field(default_factory=list)

    def save(self, directory):
        directory = Path(directory)
        self.model.save(directory, extra=self.config.describe())
        write_history(directory / "history.csv", self.history)


def write_history(path, history):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "L", "L_m", "L_c"])
        for row in history:
            writer.writerow([row.epoch, repr(row.total), repr(row.map_loss), repr(row.count_loss)])


def precompute_labels(samples, config, workers=1):
    return [make_map(config.label_kind, s.annotations, config.maps, workers=workers).values.astype(np.float32)
            for s in samples]


def sample_patch(sample, label, patch, rng):
    """Random ``patch x patch`` crop of image, full-image label and head count."""
    _, h, w = sample.image.shape
    if h < patch or w < patch:
        raise DataError(f"{sample.name}: training image {w}x{h} smaller than patch {patch}")
    x0 = int(rng.integers(0, w - patch + 1))
    y0 = int(rng.integers(0, h - patch + 1))
    image = sample.image[:, y0:y0 + patch, x0:x0 + patch]
    target = label[y0:y0 + patch, x0:x0 + patch]
    count = len(sample.annotations.crop(x0, y0, patch, patch))
    return image, target, count


def train(samples, config=TrainConfig(), labels=None, steps=None, callback=None, workers=1):
    """Fit a fresh model; ``steps`` (if given) caps the number of optimizer steps.

    ``labels`` may carry precomputed full-image maps for ``samples``.
    """
    samples = list(samples)
    if not samples:
        raise DataError("cannot train on an empty dataset")
    labels = precompute_labels(samples, config, workers) if labels is None else labels
    rng = np.random.default_rng(config.seed)
    model = MudNet(backbone=config.backbone, patch=config.patch, seed=config.seed)
    if config.init_count_bias:
        model.set_count_bias(np.mean([len(s.annotations) for s in samples]))
    optimizer = T.Adam(model.parameters(), lr=config.lr)
    pool = pool_mode_for(config.label_kind)
    res = config.maps.label_resolution
    history = []
    step = 0
    epoch = 0
    while steps is None and epoch < config.epochs or steps is not None and step < steps:
        epoch += 1
        order = rng.permutation(len(samples))
        sums = np.zeros(3)
        seen = 0
        for start in range(0, len(order), config.batch_size):
            if steps is not None and step >= steps:
                break
            batch = [sample_patch(samples[i], labels[i], config.patch, rng) for i in order[start:start + config.batch_size]]
            images = np.stack([b[0] for b in batch])
            targets = np.stack([b[1] for b in batch])
            if res != config.patch:
                targets = downsample_values(targets, res, pool)
            counts = np.array([b[2] for b in batch], dtype=np.float32)
            pred = model(images)
            loss = compute_loss(pred, targets, counts, pool=pool)
            values = loss.as_floats()
            if not np.all(np.isfinite(values)):
                raise NumericalError(f"non-finite loss at epoch {epoch}, step {step}: L={values[0]}")
            loss.total.backward()
            optimizer.step()
            step += 1
            sums += np.array(values) * len(batch)
            seen += len(batch)
        if seen:
            record = EpochLoss(epoch, *(sums / seen))
            history.append(record)
            log.info("epoch %d  L=%.5g  L_m=%.5g  L_c=%.5g", epoch, record.total, record.map_loss, record.count_loss)
            if callback is not None:
                callback(record)
    return TrainResult(model=model, config=config, history=history)
