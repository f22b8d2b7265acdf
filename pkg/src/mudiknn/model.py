"""Desk-scale multi-scale upsampling counting network.

A strided convolutional backbone produces features at 1/8, 1/16 and 1/32 of
the patch size.  Each stage feeds a map module: a transposed convolution with
kernel == stride that upsamples straight to a full-resolution predicted map,
followed by a small convolution stack regressing a count from that map.  The
last stage also feeds an end-count head.  The final count is the mean of the
three module counts and the end count.
"""
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensorops as T

STAGE_STRIDES = (8, 16, 32)
MAP_INIT_SCALE = 0.01


@dataclass(frozen=True)
class BackboneConfig:
    widths: tuple = (16, 32, 64)
    dense: bool = False

    @classmethod
    def full_scale(cls):
        return cls(widths=(128, 256, 896), dense=True)

    def __post_init__(self):
        if len(self.widths) != 3 or min(self.widths) < 1:
            raise ValueError(f"need three positive stage widths, got {self.widths}")


@dataclass
class PredictionResult:
    """Per-batch network outputs.  Maps are ``N x 1 x P x P``, counts ``(N,)``."""

    maps: list
    module_counts: list
    end_count: T.Tensor
    final_count: T.Tensor

    @property
    def mean_map(self):
        return sum(m.data for m in self.maps) / len(self.maps)


@dataclass
class LossBreakdown:
    map_loss: T.Tensor
    count_loss: T.Tensor
    total: T.Tensor = field(init=False)

    def __post_init__(self):
        self.total = self.map_loss + self.count_loss

    def as_floats(self):
        return self.total.item(), self.map_loss.item(), self.count_loss.item()


def _he_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class MapModule:
    """Transposed-conv upsampler plus count-regression conv stack.

    ``widths`` are the channel counts of the 2x2 stride-2 convolutions; the
    last convolution covers whatever spatial extent remains and emits one
    value.  Parameters live in the owning dict under ``prefix``.
    """

    def __init__(self, params, prefix, in_channels, stride, patch=224, widths=(8, 16, 32)):
        self.params = params
        self.prefix = prefix
        self.in_channels = in_channels
        self.stride = stride
        self.patch = patch
        self.widths = tuple(widths)
        reduced = patch >> len(self.widths)
        if reduced << len(self.widths) != patch or reduced < 1:
            raise ValueError(f"patch {patch} not divisible by 2^{len(self.widths)}")
        self.final_kernel = reduced

    def shapes(self):
        yield f"{self.prefix}.up.weight", (self.in_channels, 1, self.stride, self.stride), self.in_channels
        yield f"{self.prefix}.up.bias", (1,), None
        prev = 1
        for i, width in enumerate(self.widths):
            yield f"{self.prefix}.conv{i}.weight", (width, prev, 2, 2), prev * 4
            yield f"{self.prefix}.conv{i}.bias", (width,), None
            prev = width
        k = self.final_kernel
        yield f"{self.prefix}.count.weight", (1, prev, k, k), prev * k * k
        yield f"{self.prefix}.count.bias", (1,), None

    def __call__(self, features):
        p = self.params
        n, c, h, w = features.shape
        if c != self.in_channels or h * self.stride != self.patch or w * self.stride != self.patch:
            raise ValueError(
                f"{self.prefix}: features {features.shape[1:]} do not match stride {self.stride} "
                f"with {self.in_channels} channels for patch {self.patch}")
        pred_map = T.conv_transpose2d(features, p[f"{self.prefix}.up.weight"], p[f"{self.prefix}.up.bias"],
                                      stride=self.stride)
        x = pred_map
        for i in range(len(self.widths)):
            x = T.conv2d(x, p[f"{self.prefix}.conv{i}.weight"], p[f"{self.prefix}.conv{i}.bias"], stride=2)
            x = T.leaky_relu(x)
        count = T.conv2d(x, p[f"{self.prefix}.count.weight"], p[f"{self.prefix}.count.bias"])
        return pred_map, count.reshape(n)


class MudNet:
    """Backbone, three map modules and an end-count head sharing one parameter dict."""

    def __init__(self, backbone=None, patch=224, seed=0, dtype=np.float32):
        self.backbone = backbone or BackboneConfig()
        self.patch = patch
        if patch % STAGE_STRIDES[-1]:
            raise ValueError(f"patch size {patch} must be a multiple of {STAGE_STRIDES[-1]}")
        self.params = OrderedDict()
        c1, c2, c3 = self.backbone.widths
        self._blocks = [
            [(3, max(1, c1 // 4)), (max(1, c1 // 4), max(1, c1 // 2)), (max(1, c1 // 2), c1)],
            [(c1, c2)],
            [(c2, c3)],
        ]
        self.map_modules = [
            MapModule(self.params, f"map{j}", width, stride, patch=patch)
            for j, (width, stride) in enumerate(zip(self.backbone.widths, STAGE_STRIDES))
        ]
        self._init_params(np.random.default_rng(seed), dtype)

    def _param_shapes(self):
        for s, blocks in enumerate(self._blocks):
            for b, (cin, cout) in enumerate(blocks):
                name = f"stage{s}.block{b}"
                yield f"{name}.conv3.weight", (cout, cin, 3, 3), cin * 9
                yield f"{name}.conv3.bias", (cout,), None
                cdown = cin + cout if self.backbone.dense else cout
                yield f"{name}.down.weight", (cout, cdown, 2, 2), cdown * 4
                yield f"{name}.down.bias", (cout,), None
        for module in self.map_modules:
            yield from module.shapes()
        c3 = self.backbone.widths[2]
        yield "end.weight", (1, c3), c3
        yield "end.bias", (1,), None

    def _init_params(self, rng, dtype):
        for name, shape, fan_in in self._param_shapes():
            if fan_in is None:
                value = np.zeros(shape, dtype=dtype)
            else:
                value = _he_uniform(rng, shape, fan_in, dtype)
                if name.endswith(".up.weight"):
                    # predicted maps start near zero instead of O(1) noise
                    value *= MAP_INIT_SCALE
            self.params[name] = T.parameter(value, name=name)

    def parameters(self):
        return list(self.params.values())

    def num_parameters(self):
        return sum(p.size for p in self.params.values())

    def set_count_bias(self, value):
        """Start every count output (modules and end head) at ``value``."""
        for name in [f"{m.prefix}.count.bias" for m in self.map_modules] + ["end.bias"]:
            self.params[name].data[...] = value

    def astype(self, dtype):
        for p in self.params.values():
            p.data = p.data.astype(dtype)
        return self

    def state_dict(self):
        return OrderedDict((k, v.data.copy()) for k, v in self.params.items())

    def load_state_dict(self, state):
        missing = set(self.params) - set(state)
        unexpected = set(state) - set(self.params)
        if missing or unexpected:
            raise ValueError(f"checkpoint mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}")
        for name, value in state.items():
            target = self.params[name]
            if tuple(value.shape) != target.shape:
                raise ValueError(f"{name}: checkpoint shape {value.shape} != model shape {target.shape}")
            target.data = np.asarray(value, dtype=target.dtype).copy()

    def backbone_forward(self, x):
        """``N x 3 x P x P`` patch batch -> features at strides 8, 16, 32."""
        x = _as_batch(x)
        if x.shape[1:] != (3, self.patch, self.patch):
            raise ValueError(f"expected patches of shape 3x{self.patch}x{self.patch}, got {x.shape[1:]}")
        p = self.params
        features = []
        for s, blocks in enumerate(self._blocks):
            for b in range(len(blocks)):
                name = f"stage{s}.block{b}"
                y = T.leaky_relu(T.conv2d(T.pad2d(x, 1), p[f"{name}.conv3.weight"], p[f"{name}.conv3.bias"]))
                if self.backbone.dense:
                    y = T.concat([x, y], axis=1)
                x = T.leaky_relu(T.conv2d(y, p[f"{name}.down.weight"], p[f"{name}.down.bias"], stride=2))
            features.append(x)
        return tuple(features)

    def end_count_head(self, f3):
        pooled = T.global_avg_pool(f3)
        return T.affine(pooled, self.params["end.weight"], self.params["end.bias"]).reshape(f3.shape[0])

    def forward(self, x):
        features = self.backbone_forward(x)
        maps, counts = [], []
        for module, f in zip(self.map_modules, features):
            m, c = module(f)
            maps.append(m)
            counts.append(c)
        end = self.end_count_head(features[-1])
        final = combine_counts(end, counts)
        return PredictionResult(maps=maps, module_counts=counts, end_count=end, final_count=final)

    __call__ = forward

    def config_dict(self):
        return {
            "widths": ",".join(str(w) for w in self.backbone.widths),
            "dense": str(self.backbone.dense).lower(),
            "patch": str(self.patch),
        }

    def save(self, directory, extra=None):
        """Write ``model.mudw`` and a key=value ``model.cfg`` into ``directory``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        T.save_tensors(directory / "model.mudw", self.state_dict())
        config = dict(self.config_dict())
        config.update(extra or {})
        write_kv(directory / "model.cfg", config)

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        config = read_kv(directory / "model.cfg")
        backbone = BackboneConfig(widths=tuple(int(w) for w in config["widths"].split(",")),
                                  dense=config.get("dense", "false") == "true")
        model = cls(backbone=backbone, patch=int(config.get("patch", 224)))
        model.load_state_dict(T.load_tensors(directory / "model.mudw"))
        return model, config


def combine_counts(end_count, module_counts):
    """Final count: mean of the end count and every module count."""
    total = end_count
    for c in module_counts:
        total = total + c
    return total / (len(module_counts) + 1)


def compute_loss(pred, truth_maps, truth_counts, pool="mean"):
    """Summed per-module map MSE plus squared error of the final count.

    ``truth_maps`` is ``N x R x R`` (or ``N x 1 x R x R``); predicted maps
    are block-pooled down to ``R`` first (``pool`` = "mean" or "sum").
    """
    truth_maps = np.asarray(truth_maps)
    if truth_maps.ndim == 3:
        truth_maps = truth_maps[:, None]
    truth_counts = np.asarray(truth_counts, dtype=pred.final_count.dtype).reshape(-1)
    dtype = pred.final_count.dtype
    map_loss = None
    for m in pred.maps:
        size = m.shape[-1]
        res = truth_maps.shape[-1]
        if size % res:
            raise ValueError(f"label resolution {res} does not divide predicted map size {size}")
        pooled = m if res == size else T.block_pool(m, size // res, mode=pool)
        if pooled.shape != truth_maps.shape:
            raise ValueError(f"pooled prediction {pooled.shape} does not match label {truth_maps.shape}")
        term = T.mse(pooled, truth_maps.astype(dtype, copy=False))
        map_loss = term if map_loss is None else map_loss + term
    count_loss = T.mse(pred.final_count, truth_counts)
    return LossBreakdown(map_loss=map_loss, count_loss=count_loss)


def _as_batch(x):
    if not isinstance(x, T.Tensor):
        x = T.Tensor(x)
    if x.ndim == 3:
        return x.reshape(1, *x.shape)
    return x


def write_kv(path, mapping):
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in mapping.items():
            fh.write(f"{key}={value}\n")


def read_kv(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out
