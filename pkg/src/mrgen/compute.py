"""Tiny reverse-mode autodiff over numpy arrays.

Just enough machinery for a causal transformer decoder: tensors, a gradient
tape that records backward rules in execution order, and the dozen forward
ops the model needs. Training runs in float32; gradient-check tests switch to
float64 via ``using_dtype``. Every op output is checked finite so a NaN/Inf
surfaces at its source instead of three layers later.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager

import numpy as np

from .errors import MrgenError


class NonFiniteError(MrgenError):
    """An op produced NaN or Inf."""


_dtype = np.float32
_finite_checks = True
_active_tape: "GradTape | None" = None


def default_dtype():
    return _dtype


@contextmanager
def using_dtype(dtype):
    """Temporarily switch the dtype new tensors are created with."""
    global _dtype
    prev = _dtype
    _dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _dtype = prev


@contextmanager
def finite_checks(enabled: bool):
    global _finite_checks
    prev = _finite_checks
    _finite_checks = enabled
    try:
        yield
    finally:
        _finite_checks = prev


class Tensor:
    """An n-d array plus an optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=_dtype)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g):
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def accumulate_owned(self, g):
        """Accumulate a freshly allocated array the caller will not reuse."""
        if self.grad is None:
            self.grad = g
        else:
            self.grad += g

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape}, grad={self.requires_grad})"


class GradTape:
    """Backward rules in execution order; replayed exactly reversed."""

    def __init__(self):
        self.ops: list = []
        self.consumed = False

    def record(self, backward_fn):
        self.ops.append(backward_fn)

    def __enter__(self):
        global _active_tape
        if _active_tape is not None:
            raise MrgenError("a gradient tape is already active")
        _active_tape = self
        return self

    def __exit__(self, *exc):
        global _active_tape
        _active_tape = None
        return False


def backward(loss: Tensor) -> None:
    """Populate .grad on every tensor the scalar loss depends on."""
    tape = _active_tape
    if tape is None:
        raise MrgenError("backward requires an active GradTape")
    if loss.data.shape != ():
        raise MrgenError(f"loss must be scalar, got shape {loss.data.shape}")
    if not tape.ops:
        raise MrgenError("gradient tape is empty")
    if tape.consumed:
        raise MrgenError("tape already consumed; build a fresh tape per step")
    tape.consumed = True
    loss.grad = np.asarray(1.0, dtype=loss.data.dtype)
    for fn in reversed(tape.ops):
        fn()


def _out(data, inputs, backward_fn) -> Tensor:
    if _finite_checks and not np.all(np.isfinite(data)):
        raise NonFiniteError("op produced a non-finite value")
    requires = any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = requires
    out.grad = None
    out.name = ""
    if requires and _active_tape is not None and not _active_tape.consumed:
        _active_tape.record(backward_fn(out))
    return out


def _unbroadcast(g, shape):
    """Sum gradient over axes that were broadcast in the forward op."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- primitive ops -----------------------------------------------------------


def _gemm_ready(arr):
    """Batched matmul is much faster on contiguous operands."""
    if arr.ndim > 2 and not arr.flags.c_contiguous:
        return np.ascontiguousarray(arr)
    return arr


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a @ b; b may be 2-D (shared weights) or match a's batch dims."""
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise MrgenError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    data = np.matmul(_gemm_ready(a.data), _gemm_ready(b.data))

    def bw(out):
        def fn():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a.accumulate_owned(
                    np.matmul(_gemm_ready(g), _gemm_ready(np.swapaxes(b.data, -1, -2)))
                )
            if b.requires_grad:
                if b.data.ndim == 2:
                    k = a.data.shape[-1]
                    n = g.shape[-1]
                    b.accumulate_owned(
                        np.ascontiguousarray(a.data.reshape(-1, k)).T
                        @ np.ascontiguousarray(g.reshape(-1, n))
                    )
                else:
                    b.accumulate_owned(
                        np.matmul(_gemm_ready(np.swapaxes(a.data, -1, -2)), _gemm_ready(g))
                    )
        return fn

    return _out(data, (a, b), bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise MrgenError(f"add shape mismatch: {a.data.shape} + {b.data.shape}") from None

    def bw(out):
        def fn():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a.accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b.accumulate(_unbroadcast(g, b.data.shape))
        return fn

    return _out(data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise MrgenError(f"mul shape mismatch: {a.data.shape} * {b.data.shape}") from None

    def bw(out):
        def fn():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a.accumulate_owned(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b.accumulate_owned(_unbroadcast(g * a.data, b.data.shape))
        return fn

    return _out(data, (a, b), bw)


def scale(a: Tensor, s: float) -> Tensor:
    data = a.data * a.data.dtype.type(s)

    def bw(out):
        def fn():
            if out.grad is not None and a.requires_grad:
                a.accumulate_owned(out.grad * a.data.dtype.type(s))
        return fn

    return _out(data, (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def bw(out):
        def fn():
            if out.grad is not None and a.requires_grad:
                a.accumulate(out.grad.reshape(a.data.shape))
        return fn

    return _out(data, (a,), bw)


def transpose(a: Tensor, axes) -> Tensor:
    data = np.transpose(a.data, axes)
    inverse = np.argsort(axes)

    def bw(out):
        def fn():
            if out.grad is not None and a.requires_grad:
                a.accumulate(np.transpose(out.grad, inverse))
        return fn

    return _out(data, (a,), bw)


def tensor_sum(a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum(), dtype=a.data.dtype)

    def bw(out):
        def fn():
            if out.grad is not None and a.requires_grad:
                a.accumulate(np.broadcast_to(out.grad, a.data.shape).astype(a.data.dtype))
        return fn

    return _out(data, (a,), bw)


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation (GPT2-family convention)."""
    x = a.data
    c = x.dtype.type(np.sqrt(2.0 / np.pi))
    k = x.dtype.type(0.044715)
    u = x * x
    u *= x
    u *= k
    u += x
    u *= c
    t = np.tanh(u, out=u)
    data = t + 1.0
    data *= x
    data *= 0.5

    def bw(out):
        def fn():
            g = out.grad
            if g is None or not a.requires_grad:
                return
            # d/dx [0.5 x (1+t)] = 0.5(1+t) + 0.5 x (1-t^2) c (1 + 3k x^2)
            du = x * x
            du *= 3.0 * k
            du += 1.0
            du *= c
            du *= 1.0 - t * t
            du *= x
            du += 1.0 + t
            du *= 0.5
            du *= g
            a.accumulate_owned(du)
        return fn

    return _out(data, (a,), bw)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, max-subtracted for stability."""
    x = a.data
    data = x - x.max(axis=-1, keepdims=True)
    np.exp(data, out=data)
    data /= data.sum(axis=-1, keepdims=True)

    def bw(out):
        def fn():
            g = out.grad
            if g is None or not a.requires_grad:
                return
            y = out.data
            dx = g - (g * y).sum(axis=-1, keepdims=True)
            dx *= y
            a.accumulate_owned(dx)
        return fn

    return _out(data, (a,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale+shift."""
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = centered * inv_std
    data = xhat * gain.data + bias.data

    def bw(out):
        def fn():
            g = out.grad
            if g is None:
                return
            if bias.requires_grad:
                bias.accumulate_owned(g.reshape(-1, g.shape[-1]).sum(axis=0))
            if gain.requires_grad:
                gain.accumulate_owned((g * xhat).reshape(-1, g.shape[-1]).sum(axis=0))
            if x.requires_grad:
                dxhat = g * gain.data
                m1 = dxhat.mean(axis=-1, keepdims=True)
                m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
                dxhat -= m1
                dxhat -= xhat * m2
                dxhat *= inv_std
                x.accumulate_owned(dxhat)
        return fn

    return _out(data, (x, gain, bias), bw)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of ``table`` by integer ids (any id array shape)."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise MrgenError(
            f"id out of range for embedding table of {table.data.shape[0]} rows"
        )
    data = table.data[ids]

    def bw(out):
        def fn():
            g = out.grad
            if g is None or not table.requires_grad:
                return
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, ids.reshape(-1), g.reshape(-1, g.shape[-1]))
        return fn

    return _out(data, (table,), bw)


def cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean negative log-likelihood over mask=1 positions.

    ``logits`` has shape (..., V); ``targets`` and ``mask`` share the leading
    shape. All-zero mask yields loss 0 with exactly-zero gradients; gradients
    at masked positions are bitwise zero (the mask multiplies them out).
    """
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=logits.data.dtype)
    if targets.shape != logits.data.shape[:-1] or mask.shape != targets.shape:
        raise MrgenError(
            f"cross_entropy shape mismatch: logits {logits.data.shape}, "
            f"targets {targets.shape}, mask {mask.shape}"
        )
    x = logits.data
    m = x.max(axis=-1, keepdims=True)
    shifted = x - m
    lse = np.log(np.exp(shifted).sum(axis=-1)) + m[..., 0]
    picked = np.take_along_axis(x, targets[..., None], axis=-1)[..., 0]
    nll = (lse - picked) * mask
    denom = float(mask.sum())
    scale_ = 1.0 / denom if denom > 0 else 0.0
    data = np.asarray(nll.sum() * scale_, dtype=x.dtype)

    def bw(out):
        def fn():
            g = out.grad
            if g is None or not logits.requires_grad:
                return
            probs = np.exp(shifted)
            probs /= probs.sum(axis=-1, keepdims=True)
            np.subtract.at(probs, (*np.indices(targets.shape), targets), 1.0)
            probs *= (mask * (g * x.dtype.type(scale_)))[..., None]
            probs[mask == 0] = 0.0  # +0.0, not the -0.0 the multiply leaves
            logits.accumulate_owned(probs)
        return fn

    return _out(data, (logits,), bw)


# -- checkpoint io -----------------------------------------------------------

_MAGIC = b"MRGN"
_VERSION = 1
_DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def save_tensors(path, tensors: dict[str, Tensor]) -> None:
    """Binary checkpoint: magic, version, then named tensors with shape and
    raw little-endian values. Reload is bit-exact."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(tensors)))
        for name, t in tensors.items():
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<BB", _DTYPE_CODES[t.data.dtype], t.data.ndim))
            f.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
            f.write(np.ascontiguousarray(t.data, dtype=t.data.dtype.newbyteorder("<")).tobytes())


def load_tensors(path) -> dict[str, Tensor]:
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise MrgenError(f"not a checkpoint file: {path}")
        version, count = struct.unpack("<II", f.read(8))
        if version != _VERSION:
            raise MrgenError(f"unsupported checkpoint version {version}")
        out: dict[str, Tensor] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            code, ndim = struct.unpack("<BB", f.read(2))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            dtype = _CODE_DTYPES[code]
            n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            arr = np.frombuffer(f.read(n_bytes), dtype=dtype.newbyteorder("<")).reshape(shape)
            t = Tensor.__new__(Tensor)
            t.data = arr.astype(dtype, copy=True)
            t.requires_grad = False
            t.grad = None
            t.name = name
            out[name] = t
    return out
