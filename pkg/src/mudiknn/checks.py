"""Finite-difference gradient checks for every operator and for the full model.

All checks run in float64.
"""
import numpy as np

from . import tensorops as T
from .model import MudNet, compute_loss


def _p(rng, *shape):
    return T.parameter(rng.standard_normal(shape))


def operator_checks(seed=0, eps=1e-4):
    """Return ``{operator name: max relative error}``."""
    rng = np.random.default_rng(seed)
    results = {}

    x = _p(rng, 2, 3, 7, 7)
    w = _p(rng, 4, 3, 3, 3)
    b = _p(rng, 4)
    target = rng.standard_normal((2, 4, 3, 3))
    results["conv2d"] = T.grad_check(lambda: T.mse(T.conv2d(x, w, b, stride=2), target), [x, w, b], eps)

    x = _p(rng, 3, 2, 2)
    w = _p(rng, 3, 2, 4, 4)
    b = _p(rng, 2)
    target = rng.standard_normal((2, 8, 8))
    results["conv_transpose2d"] = T.grad_check(
        lambda: T.mse(T.conv_transpose2d(x, w, b, stride=4), target), [x, w, b], eps)

    x = _p(rng, 2, 2, 4, 4)
    target = rng.standard_normal((2, 2, 6, 6))
    results["pad2d"] = T.grad_check(lambda: T.mse(T.pad2d(x, 1), target), [x], eps)

    # keep inputs away from the kink so the difference quotient is valid
    raw = rng.standard_normal((3, 5))
    x = T.parameter(np.where(np.abs(raw) < 0.05, 0.5, raw))
    target = rng.standard_normal((3, 5))
    results["leaky_relu"] = T.grad_check(lambda: T.mse(T.leaky_relu(x), target), [x], eps)

    x = _p(rng, 2, 3, 4, 4)
    target = rng.standard_normal((2, 3))
    results["global_avg_pool"] = T.grad_check(lambda: T.mse(T.global_avg_pool(x), target), [x], eps)

    x = _p(rng, 8)
    w = _p(rng, 8, 8)
    b = _p(rng, 8)
    target = rng.standard_normal(8)
    results["affine"] = T.grad_check(lambda: T.mse(T.affine(x, w, b), target), [x, w, b], eps)

    a = _p(rng, 8, 8)
    c = _p(rng, 8, 8)
    results["mse"] = T.grad_check(lambda: T.mse(a, c), [a, c], eps)

    for mode in ("sum", "mean"):
        x = _p(rng, 2, 1, 8, 8)
        target = rng.standard_normal((2, 1, 2, 2))
        results[f"block_pool[{mode}]"] = T.grad_check(
            lambda: T.mse(T.block_pool(x, 4, mode=mode), target), [x], eps)

    a = _p(rng, 1, 2, 3, 3)
    c = _p(rng, 1, 3, 3, 3)
    target = rng.standard_normal((1, 5, 3, 3))
    results["concat"] = T.grad_check(lambda: T.mse(T.concat([a, c]), target), [a, c], eps)

    a = _p(rng, 4)
    c = _p(rng, 4)
    results["arithmetic"] = T.grad_check(lambda: ((a * c + a) - c * 3.0).sum() / 2.0, [a, c], eps)
    return results


def map_module_check(seed=0, eps=1e-4, patch=16):
    """Gradient of a map module on a small input (full stack, reduced size)."""
    from .model import MapModule

    rng = np.random.default_rng(seed)
    params = {}
    module = MapModule(params, "m", in_channels=3, stride=4, patch=patch, widths=(2, 3))
    for name, shape, fan_in in module.shapes():
        params[name] = T.parameter(rng.standard_normal(shape) * (0.5 if fan_in else 0.1))
    features = T.parameter(rng.standard_normal((2, 3, patch // 4, patch // 4)))
    truth_map = rng.standard_normal((2, 1, patch, patch))
    truth_count = rng.standard_normal(2)

    def loss():
        pred_map, count = module(features)
        return T.mse(pred_map, truth_map) + T.mse(count, truth_count)

    return T.grad_check(loss, [features, *params.values()], eps)


def model_check(seed=0, fraction=0.01, eps=1e-4, backbone=None, patch=224, stats=None):
    """Check ``fraction`` of every parameter tensor of a float64 model (at least one element each).

    Elements whose perturbation crosses a leaky-ReLU kink are skipped and
    counted in ``stats``.
    """
    rng = np.random.default_rng(seed)
    model = MudNet(backbone=backbone, patch=patch, seed=seed, dtype=np.float64)
    image = rng.uniform(0.0, 1.0, (1, 3, patch, patch))
    truth_map = rng.uniform(0.0, 1.0, (1, patch, patch))
    with T.no_grad():
        start = model(image).final_count.data
    truth_count = start + 1.0

    def loss():
        return compute_loss(model(image), truth_map, truth_count).total

    worst = 0.0
    for p in model.parameters():
        n = max(1, int(round(fraction * p.size)))
        worst = max(worst, T.grad_check(loss, [p], eps, max_per_param=n, rng=rng,
                                                skip_kinks=True, stats=stats))
    return worst
