"""Dense tensors with reverse-mode differentiation and an Adam optimizer.

Just enough ops for the in-context model: matmul, elementwise arithmetic,
softmax / log-softmax, layer norm, tanh (gelu is composed from it),
embedding lookup / gather, masked fill, concat, reductions, reshape. All
reductions run in numpy's fixed evaluation order, so repeated runs are
bit-identical. Tensors carry at most 4 axes.
"""

from __future__ import annotations

import json
import struct
from contextlib import contextmanager

import numpy as np

MAX_AXES = 4

_grad_enabled = True
_flop_count = None


@contextmanager
def no_grad():
    """Disable tape recording (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class FlopCounter:
    """Counts forward matmul flops; attention-dominated cost shows up here."""

    def __init__(self):
        self.flops = 0


@contextmanager
def count_flops():
    global _flop_count
    prev = _flop_count
    counter = FlopCounter()
    _flop_count = counter
    try:
        yield counter
    finally:
        _flop_count = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A dense numpy array plus an optional slot on the backward tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "name")

    def __init__(self, data, requires_grad=False, _parents=(), _vjp=None, name=""):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if arr.ndim > MAX_AXES:
            raise ValueError(f"tensor has {arr.ndim} axes; at most {MAX_AXES} supported")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._vjp = _vjp
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # Convenience operators; scalars only, tensor-tensor goes through the
    # module-level ops so broadcast checking stays in one place.
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return shift(self, float(other))

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, scale(other, -1.0))
        return shift(self, -float(other))

    def __neg__(self):
        return scale(self, -1.0)


def _result(data, parents, vjp) -> Tensor:
    need = _grad_enabled and any(p.requires_grad or p._parents for p in parents)
    if need:
        return Tensor(data, requires_grad=False, _parents=tuple(parents), _vjp=vjp)
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to `shape` (inverse of numpy trailing-axis broadcast)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    small, big = (sa, sb) if len(sa) < len(sb) else (sb, sa)
    if small != big[len(big) - len(small):]:
        raise ValueError(f"{op}: shapes {sa} and {sb} do not align (leading-axis broadcast only)")


# ---------------------------------------------------------------------------
# elementwise and affine ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(out, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(out, (a, b), vjp)


def scale(a: Tensor, s: float) -> Tensor:
    out = a.data * s

    def vjp(g):
        return (g * s,)

    return _result(out, (a,), vjp)


def shift(a: Tensor, s: float) -> Tensor:
    out = a.data + s

    def vjp(g):
        return (g,)

    return _result(out, (a,), vjp)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return _result(out, (a,), vjp)


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximation gelu, composed from primitives."""
    c = 0.7978845608028654  # sqrt(2/pi)
    inner = scale(add(x, scale(mul(mul(x, x), x), 0.044715)), c)
    return mul(scale(x, 0.5), shift(tanh(inner), 1.0))


def huber(x: Tensor, delta: float = 1.0) -> Tensor:
    """Elementwise Huber penalty of a residual."""
    ax = np.abs(x.data)
    quad = ax <= delta
    out = np.where(quad, 0.5 * x.data * x.data, delta * (ax - 0.5 * delta))

    def vjp(g):
        return (g * np.clip(x.data, -delta, delta),)

    return _result(out, (x,), vjp)


# ---------------------------------------------------------------------------
# matmul


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul: operands must have >= 2 axes, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner axes differ for shapes {a.shape} and {b.shape}")
    out = np.matmul(a.data, b.data)
    if _flop_count is not None:
        _flop_count.flops += 2 * out.size * a.shape[-1]

    def vjp(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _result(out, (a, b), vjp)


# ---------------------------------------------------------------------------
# normalizers


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return _result(out, (x,), vjp)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    z = x.data - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def vjp(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _result(out, (x,), vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ValueError(
            f"layer_norm: gain/bias shapes {gain.shape}/{bias.shape} "
            f"do not match last axis of {x.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def vjp(g):
        gx = g * gain.data
        m1 = gx.mean(axis=-1, keepdims=True)
        m2 = (gx * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (gx - m1 - xhat * m2)
        axes = tuple(range(x.ndim - 1))
        dgain = (g * xhat).sum(axis=axes)
        dbias = g.sum(axis=axes)
        return dx, dgain, dbias

    return _result(out, (x, gain, bias), vjp)


# ---------------------------------------------------------------------------
# lookups, masking, shaping


def embedding_lookup(table: Tensor, idx) -> Tensor:
    """Rows of `table` selected by an integer array of any shape (<= 3 axes)."""
    idx = np.asarray(idx)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ValueError("embedding_lookup: index array must be integral")
    out = table.data[idx]

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (gt,)

    return _result(out, (table,), vjp)


gather0 = embedding_lookup  # same op: gather along the first axis


def take_index(x: Tensor, idx) -> Tensor:
    """out[i] = x[i, idx[i]] for a 2-axis tensor; used by cross-entropy."""
    idx = np.asarray(idx)
    if x.ndim != 2 or idx.shape != (x.shape[0],):
        raise ValueError(f"take_index: need (n, c) and (n,) shapes, got {x.shape} and {idx.shape}")
    rows = np.arange(x.shape[0])
    out = x.data[rows, idx]

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[rows, idx] = g
        return (gx,)

    return _result(out, (x,), vjp)


def masked_fill(x: Tensor, mask, value: float) -> Tensor:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise ValueError(f"masked_fill: mask shape {mask.shape} != tensor shape {x.shape}")
    out = np.where(mask, np.asarray(value, dtype=x.dtype), x.data)

    def vjp(g):
        return (np.where(mask, 0.0, g),)

    return _result(out, (x,), vjp)


def concat(xs, axis: int = 0) -> Tensor:
    xs = list(xs)
    out = np.concatenate([x.data for x in xs], axis=axis)
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(out, tuple(xs), vjp)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = x.data.reshape(shape)

    def vjp(g):
        return (g.reshape(x.shape),)

    return _result(out, (x,), vjp)


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    out = np.swapaxes(x.data, a, b)

    def vjp(g):
        return (np.swapaxes(g, a, b),)

    return _result(out, (x,), vjp)


def expand(x: Tensor, shape) -> Tensor:
    """Explicit broadcast to `shape` (numpy trailing-axis rules)."""
    shape = tuple(shape)
    out = np.broadcast_to(x.data, shape).copy()

    def vjp(g):
        return (_unbroadcast(g, x.shape),)

    return _result(out, (x,), vjp)


def mean(x: Tensor, axis=None) -> Tensor:
    out = x.data.mean(axis=axis)
    n = x.data.size if axis is None else x.shape[axis]

    def vjp(g):
        if axis is None:
            return (np.full_like(x.data, g / n),)
        return (np.expand_dims(g, axis).repeat(n, axis=axis) / n,)

    return _result(out, (x,), vjp)


def sum_(x: Tensor, axis=None) -> Tensor:
    out = x.data.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.full_like(x.data, g),)
        return (np.expand_dims(g, axis).repeat(x.shape[axis], axis=axis),)

    return _result(out, (x,), vjp)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor, params: "ParamStore | None" = None) -> None:
    """Reverse-accumulate d(loss)/d(tensor) into .grad for every reachable tensor.

    Unreached parameters of `params` get zero gradients, per contract.
    """
    if loss.ndim != 0:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._vjp is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._vjp(node.grad)):
            if g is None:
                continue
            g = np.asarray(g, dtype=parent.dtype)
            if parent.grad is None:
                parent.grad = g
            else:
                parent.grad = parent.grad + g

    if params is not None:
        for t in params.params.values():
            if t.grad is None:
                t.grad = np.zeros_like(t.data)


# ---------------------------------------------------------------------------
# parameters and Adam


class ParamStore:
    """Named parameter tensors plus Adam moment state."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def param(self, name: str, init: np.ndarray) -> Tensor:
        """Register (or fetch) a parameter; init is used only on first touch."""
        if name not in self.params:
            t = Tensor(np.asarray(init, dtype=self.dtype), requires_grad=True, name=name)
            self.params[name] = t
            self.m[name] = np.zeros_like(t.data)
            self.v[name] = np.zeros_like(t.data)
        return self.params[name]

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def adam_step(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                  eps: float = 1e-8) -> None:
        """Standard Adam update with bias correction; None grads count as zero."""
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - beta1 ** t
        c2 = 1.0 - beta2 ** t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[name] = beta1 * self.m[name] + (1.0 - beta1) * g
            v = self.v[name] = beta2 * self.v[name] + (1.0 - beta2) * (g * g)
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name, p in self.params.items():
            out[f"p:{name}"] = p.data
            out[f"m:{name}"] = self.m[name]
            out[f"v:{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            key = f"p:{name}"
            if key not in arrays:
                raise KeyError(f"checkpoint is missing parameter {name!r}")
            if arrays[key].shape != p.data.shape:
                raise ValueError(
                    f"checkpoint shape {arrays[key].shape} != parameter shape "
                    f"{p.data.shape} for {name!r}"
                )
            p.data = arrays[key].astype(self.dtype)
            self.m[name] = arrays[f"m:{name}"].astype(self.dtype)
            self.v[name] = arrays[f"v:{name}"].astype(self.dtype)


# ---------------------------------------------------------------------------
# checkpoint container: JSON manifest + raw little-endian tensor blobs

_CKPT_MAGIC = b"RLCP"
_CKPT_VERSION = 1
_ALIGN = 64


def save_checkpoint(path, arrays: dict[str, np.ndarray], manifest: dict) -> None:
    index = {}
    offset = 0
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        raw = arr.tobytes()
        pad = (-offset) % _ALIGN
        offset += pad
        blobs.append((pad, raw))
        index[name] = {"dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset,
                       "length": len(raw)}
        offset += len(raw)
    header = json.dumps({"manifest": manifest, "tensors": index},
                        sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<II", _CKPT_VERSION, 0))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        base = f.tell()
        pad = (-base) % _ALIGN
        f.write(b"\0" * pad)
        for pad, raw in blobs:
            f.write(b"\0" * pad)
            f.write(raw)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _CKPT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}, expected {_CKPT_MAGIC!r}")
        version, _ = struct.unpack("<II", f.read(8))
        if version != _CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode())
        base = f.tell()
        base += (-base) % _ALIGN
        arrays = {}
        for name, meta in header["tensors"].items():
            f.seek(base + meta["offset"])
            raw = f.read(meta["length"])
            if len(raw) != meta["length"]:
                raise ValueError(f"checkpoint truncated while reading tensor {name!r}")
            arrays[name] = np.frombuffer(raw, dtype=np.dtype(meta["dtype"])).reshape(
                meta["shape"]).copy()
    return arrays, header["manifest"]
