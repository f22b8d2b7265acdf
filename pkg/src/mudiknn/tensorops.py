"""A small reverse-mode autodiff over numpy arrays.

Only the operators the counting network needs are provided: valid 2D
convolution, non-overlapping transposed convolution, zero padding, leaky
ReLU, block pooling, global average pooling, affine maps, channel
concatenation and mean squared error.  Spatial operators take ``N x C x H x W``
batches; a ``C x H x W`` input is treated as a batch of one and the batch axis
is dropped again on output.

Every backward rule is checked against central finite differences by
:func:`grad_check`.
"""
import contextlib
import struct
from collections import OrderedDict

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor", "no_grad", "parameter",
    "conv2d", "conv_transpose2d", "pad2d", "leaky_relu", "global_avg_pool",
    "affine", "mse", "block_pool", "concat", "grad_check",
    "Adam", "save_tensors", "load_tensors",
]

_GRAD_ENABLED = True
# when a list, leaky_relu appends its packed sign mask (kink detection in grad_check)
_SIGN_LOG = None


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference, finite differences)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class Tensor:
    """A graph node: a numpy value plus the rule to push gradients to its inputs."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data)
        if not np.issubdtype(self.data.dtype, np.floating):
            self.data = self.data.astype(np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_not_scalar()

    def numpy(self):
        return self.data

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    def backward(self):
        """Accumulate d(self)/d(node) into ``.grad`` of every node in the graph.

        Gradients are reset on each call, so one backward pass per graph.
        """
        if self.data.size != 1:
            _raise_not_scalar()
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # elementwise arithmetic with numpy broadcasting

    def __add__(self, other):
        other = _as_tensor(other, self.dtype)
        out = _make(self.data + other.data, (self, other))

        def backward(g):
            _accumulate(self, _unbroadcast(g, self.shape))
            _accumulate(other, _unbroadcast(g, other.shape))

        return _attach(out, backward)

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-_as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return _as_tensor(other, self.dtype) + (-self)

    def __mul__(self, other):
        other = _as_tensor(other, self.dtype)
        out = _make(self.data * other.data, (self, other))

        def backward(g):
            _accumulate(self, _unbroadcast(g * other.data, self.shape))
            _accumulate(other, _unbroadcast(g * self.data, other.shape))

        return _attach(out, backward)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / float(scalar))

    def sum(self):
        out = _make(np.asarray(self.data.sum(), dtype=self.dtype), (self,))

        def backward(g):
            _accumulate(self, np.broadcast_to(g, self.shape))

        return _attach(out, backward)

    def mean(self):
        return self.sum() / self.size

    def reshape(self, *shape):
        out = _make(self.data.reshape(*shape), (self,))

        def backward(g):
            _accumulate(self, g.reshape(self.shape))

        return _attach(out, backward)


def parameter(data, name=None):
    return Tensor(data, requires_grad=True, name=name)


def _raise_not_scalar():
    raise ValueError("non-scalar root: gradients need a single-element output")


def _as_tensor(value, dtype):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _make(data, parents):
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
    return out


def _attach(out, backward):
    if out.requires_grad:
        out._backward = backward
    return out


def _accumulate(node, grad):
    if not node.requires_grad:
        return
    if node.grad is None:
        node.grad = np.array(grad, dtype=node.dtype, copy=True)
    else:
        node.grad += grad


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _batched(x):
    """Promote ``C x H x W`` to a batch of one; report whether to squeeze back."""
    if x.ndim == 3:
        return x.reshape(1, *x.shape), True
    if x.ndim != 4:
        raise ValueError(f"expected a C x H x W or N x C x H x W tensor, got shape {x.shape}")
    return x, False


def conv2d(x, weight, bias=None, stride=1):
    """Valid (unpadded) cross-correlation with per-output-channel bias."""
    x4, squeeze = _batched(x)
    n, c, h, w = x4.shape
    o, c_w, kh, kw = weight.shape
    if c != c_w:
        raise ValueError(f"input has {c} channels, kernel expects {c_w}")
    if kh > h or kw > w:
        raise ValueError(f"kernel {kh}x{kw} larger than input {h}x{w}")
    s = int(stride)
    ho = (h - kh) // s + 1
    wo = (w - kw) // s + 1
    windows = sliding_window_view(x4.data, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)
    wmat = weight.data.reshape(o, c * kh * kw)
    out_data = (cols @ wmat.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    if bias is not None:
        out_data = out_data + bias.data.reshape(1, o, 1, 1)
    parents = (x4, weight) if bias is None else (x4, weight, bias)
    out = _make(np.ascontiguousarray(out_data), parents)

    def backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, o)
        if weight.requires_grad:
            _accumulate(weight, (gm.T @ cols).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=(0, 2, 3)))
        if x4.requires_grad:
            dcols = (gm @ wmat).reshape(n, ho, wo, c, kh, kw)
            dx = np.zeros(x4.shape, dtype=x4.dtype)
            for a in range(kh):
                for b in range(kw):
                    dx[:, :, a:a + s * ho:s, b:b + s * wo:s] += dcols[:, :, :, :, a, b].transpose(0, 3, 1, 2)
            _accumulate(x4, dx)

    out = _attach(out, backward)
    return out.reshape(*out.shape[1:]) if squeeze else out


def conv_transpose2d(x, weight, bias=None, stride=None):
    """Transposed convolution in the non-overlapping regime (kernel == stride).

    ``weight`` is ``C_in x C_out x s x s``; each input position scatters
    ``value * kernel`` into its own ``s x s`` output block.
    """
    x4, squeeze = _batched(x)
    n, c, h, w = x4.shape
    c_w, o, kh, kw = weight.shape
    s = kh if stride is None else int(stride)
    if not (s == kh == kw):
        raise ValueError(f"stride {s} must equal kernel size {kh}x{kw}")
    if c != c_w:
        raise ValueError(f"input has {c} channels, kernel expects {c_w}")
    # (n, h, w, o, s, s) -> (n, o, h, s, w, s)
    blocks = np.tensordot(x4.data, weight.data, axes=([1], [0]))
    out_data = blocks.transpose(0, 3, 1, 4, 2, 5).reshape(n, o, h * s, w * s)
    if bias is not None:
        out_data = out_data + bias.data.reshape(1, o, 1, 1)
    parents = (x4, weight) if bias is None else (x4, weight, bias)
    out = _make(np.ascontiguousarray(out_data), parents)

    def backward(g):
        gb = g.reshape(n, o, h, s, w, s).transpose(0, 2, 4, 1, 3, 5)
        if x4.requires_grad:
            dx = np.tensordot(gb, weight.data, axes=([3, 4, 5], [1, 2, 3]))
            _accumulate(x4, dx.transpose(0, 3, 1, 2))
        if weight.requires_grad:
            _accumulate(weight, np.tensordot(x4.data, gb, axes=([0, 2, 3], [0, 1, 2])))
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=(0, 2, 3)))

    out = _attach(out, backward)
    return out.reshape(*out.shape[1:]) if squeeze else out


def pad2d(x, pad):
    """Zero-pad both spatial axes by ``pad`` pixels on every side."""
    x4, squeeze = _batched(x)
    p = int(pad)
    out = _make(np.pad(x4.data, ((0, 0), (0, 0), (p, p), (p, p))), (x4,))

    def backward(g):
        _accumulate(x4, g[:, :, p:g.shape[2] - p, p:g.shape[3] - p])

    out = _attach(out, backward)
    return out.reshape(*out.shape[1:]) if squeeze else out


def leaky_relu(x, slope=0.01):
    positive = x.data > 0
    if _SIGN_LOG is not None:
        _SIGN_LOG.append(np.packbits(positive))
    out = _make(np.where(positive, x.data, x.data * slope).astype(x.dtype, copy=False), (x,))

    def backward(g):
        _accumulate(x, np.where(positive, g, g * slope))

    return _attach(out, backward)


def global_avg_pool(x):
    """``N x C x H x W -> N x C`` (or ``C x H x W -> C``) spatial mean."""
    x4, squeeze = _batched(x)
    n, c, h, w = x4.shape
    out = _make(x4.data.mean(axis=(2, 3)), (x4,))

    def backward(g):
        _accumulate(x4, np.broadcast_to(g[:, :, None, None] / (h * w), x4.shape))

    out = _attach(out, backward)
    return out.reshape(c) if squeeze else out


def affine(x, weight, bias=None):
    """``x @ weight.T + bias`` for ``x`` of shape ``(n,)`` or ``(N, n)``."""
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"affine expects {weight.shape[1]} inputs, got {x.shape[-1]}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValueError(f"bias shape {bias.shape} does not match {weight.shape[0]} outputs")
    out_data = x.data @ weight.data.T
    if bias is not None:
        out_data = out_data + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)
    out = _make(out_data, parents)

    def backward(g):
        _accumulate(x, g @ weight.data)
        if weight.requires_grad:
            _accumulate(weight, np.outer(g, x.data) if x.ndim == 1 else g.T @ x.data)
        if bias is not None:
            _accumulate(bias, g if g.ndim == 1 else g.sum(axis=0))

    return _attach(out, backward)


def mse(a, b):
    """Mean of squared element differences; either side may be a plain array."""
    a = _as_tensor(a, np.float64)
    b = _as_tensor(b, a.dtype)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    out = _make(np.asarray(np.mean(diff * diff), dtype=a.dtype), (a, b))

    def backward(g):
        scaled = g * (2.0 / diff.size) * diff
        _accumulate(a, scaled)
        _accumulate(b, -scaled)

    return _attach(out, backward)


def block_pool(x, factor, mode="mean"):
    """Non-overlapping ``factor x factor`` sum or mean pooling."""
    if mode not in ("sum", "mean"):
        raise ValueError(f"unknown pooling mode {mode!r}")
    x4, squeeze = _batched(x)
    n, c, h, w = x4.shape
    f = int(factor)
    if h % f or w % f:
        raise ValueError(f"pool factor {f} does not divide {h}x{w}")
    scale = 1.0 if mode == "sum" else 1.0 / (f * f)
    pooled = x4.data.reshape(n, c, h // f, f, w // f, f).sum(axis=(3, 5)) * scale
    out = _make(pooled.astype(x4.dtype, copy=False), (x4,))

    def backward(g):
        up = np.repeat(np.repeat(g * scale, f, axis=2), f, axis=3)
        _accumulate(x4, up)

    out = _attach(out, backward)
    return out.reshape(*out.shape[1:]) if squeeze else out


def concat(tensors, axis=1):
    tensors = list(tensors)
    out = _make(np.concatenate([t.data for t in tensors], axis=axis), tensors)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(index)])

    return _attach(out, backward)


def grad_check(fn, params, eps=1e-4, max_per_param=None, rng=None, skip_kinks=False, stats=None):
    """Largest relative error between backprop and central differences.

    ``fn`` rebuilds the graph from the current parameter values and returns a
    scalar tensor.  When ``max_per_param`` is given, that many elements of
    each parameter are sampled (with ``rng``) instead of checking them all.
    The relative error of one element is
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.

    With ``skip_kinks``, a step is rejected when any leaky-ReLU input changes
    sign between the two perturbed evaluations, since the difference quotient
    then straddles a kink.  Steps of ``eps/10`` and ``eps/100`` are tried next;
    the element is skipped only if all three straddle.  ``stats`` (a dict) receives ``checked``
    and ``skipped`` counts.
    """
    params = [p for p in params if p is not None]
    if not params:
        raise ValueError("no parameters")
    root = fn()
    if root.size != 1:
        _raise_not_scalar()
    root.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    rng = np.random.default_rng(0) if rng is None else rng
    worst = 0.0
    checked = skipped = 0
    steps = (eps, eps / 10, eps / 100) if skip_kinks else (eps,)
    with no_grad():
        for p, grad in zip(params, analytic):
            flat = p.data.reshape(-1)
            if max_per_param is None or max_per_param >= flat.size:
                indices = np.arange(flat.size)
            else:
                indices = rng.choice(flat.size, size=max_per_param, replace=False)
            for i in indices:
                original = flat[i]
                for step in steps:
                    flat[i] = original + step
                    up, up_signs = _eval_logged(fn, skip_kinks)
                    flat[i] = original - step
                    down, down_signs = _eval_logged(fn, skip_kinks)
                    flat[i] = original
                    if not skip_kinks or _same_signs(up_signs, down_signs):
                        break
                else:
                    skipped += 1
                    continue
                checked += 1
                numeric = (up - down) / (2 * step)
                exact = float(grad.reshape(-1)[i])
                denom = max(abs(exact), abs(numeric), 1e-8)
                worst = max(worst, abs(exact - numeric) / denom)
    if stats is not None:
        stats["checked"] = stats.get("checked", 0) + checked
        stats["skipped"] = stats.get("skipped", 0) + skipped
    return worst


def _eval_logged(fn, log):
    global _SIGN_LOG
    if not log:
        return fn().item(), None
    _SIGN_LOG = []
    try:
        value = fn().item()
        return value, _SIGN_LOG
    finally:
        _SIGN_LOG = None


def _same_signs(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


class Adam:
    """Adaptive-moment gradient descent over a list of parameter tensors."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        correction1 = 1 - self.beta1 ** self.t
        correction2 = 1 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.beta1
            m += (1 - self.beta1) * p.grad
            v *= self.beta2
            v += (1 - self.beta2) * p.grad * p.grad
            step = self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            p.data -= step.astype(p.dtype, copy=False)


_CHECKPOINT_MAGIC = b"MUDW"
_CHECKPOINT_VERSION = 1


def save_tensors(path, tensors):
    """Write named arrays in the MUDW checkpoint layout (little-endian).

    Layout: ``b"MUDW"``, u32 version, u32 tensor count, then per tensor
    u32 name length, UTF-8 name, u32 rank, u32 dims, float32 data.
    """
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", _CHECKPOINT_VERSION, len(tensors)))
        for name, array in tensors.items():
            raw = name.encode("utf-8")
            array = np.ascontiguousarray(array, dtype="<f4")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", array.ndim))
            fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
            fh.write(array.tobytes())


def load_tensors(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a MUDW checkpoint")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != _CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    offset = 12
    tensors = OrderedDict()
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        shape = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        n = int(np.prod(shape)) if rank else 1
        tensors[name] = np.frombuffer(blob, dtype="<f4", count=n, offset=offset).reshape(shape).copy()
        offset += 4 * n
    return tensors
