"""Dense f64 tensors with tape-based reverse-mode gradients.

Small by design: only the operations the networks in this package need.
Gradients accumulate additively into ``Tensor.grad``; callers zero grads
between optimizer steps. A :class:`Tape` is single-owner and replays its
recorded nodes in reverse; recording order is construction order, which is
always a valid topological order.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .exceptions import ContractError, DimensionError

MAGIC = b"LFT1"
_DTYPES = {0: np.float32, 1: np.float64}
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class Tensor:
    """Contiguous row-major float64 array plus an optional gradient buffer.

    ``requires_grad=False`` marks constants: no gradient is accumulated into
    them and operations whose inputs are all constants are never recorded.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = True):
        # asarray with order="C" keeps rank-0 tensors rank 0
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Tensor(shape={list(self.shape)})"


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


class Tape:
    """Ordered record of operations; inputs always precede their consumers."""

    __slots__ = ("_nodes",)

    def __init__(self):
        self._nodes: list[Callable[[], None]] = []

    def record(self, backward_fn: Callable[[], None]) -> None:
        self._nodes.append(backward_fn)

    def __len__(self) -> int:
        return len(self._nodes)


def _accum(t: Tensor, g: np.ndarray) -> None:
    """Accumulate g, which may be a view of another live gradient buffer."""
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)  # owning copy, views materialized
    else:
        t.grad += g


def _accum_fresh(t: Tensor, g: np.ndarray) -> None:
    """Accumulate a freshly allocated g the caller relinquishes (no copy)."""
    if t.grad is None:
        t.grad = g
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum an upstream gradient over the axes that were broadcast."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a: tuple[int, ...], b: tuple[int, ...]) -> None:
    for x, y in zip(reversed(a), reversed(b)):
        if x != y and x != 1 and y != 1:
            raise DimensionError(f"shapes {list(a)} and {list(b)} do not broadcast")


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate grads of everything `loss` depends on. `loss` must be scalar."""
    if loss.data.size != 1:
        raise ContractError(f"loss must be scalar, got shape {list(loss.shape)}")
    loss.grad = np.ones_like(loss.data)
    for fn in reversed(tape._nodes):
        fn()


# ---------------------------------------------------------------------------
# operations


def matmul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {list(a.shape)} x {list(b.shape)}")
    out = Tensor(a.data @ b.data, a.requires_grad or b.requires_grad)
    if tape is not None and out.requires_grad:

        def bwd():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                _accum_fresh(a, g @ b.data.T)
            if b.requires_grad:
                _accum_fresh(b, a.data.T @ g)

        tape.record(bwd)
    return out


def add(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    _check_broadcast(a.shape, b.shape)
    out = Tensor(a.data + b.data, a.requires_grad or b.requires_grad)
    if tape is not None and out.requires_grad:

        def bwd():
            g = out.grad
            if g is None:
                return
            for t_in in (a, b):
                if not t_in.requires_grad:
                    continue
                gi = _unbroadcast(g, t_in.shape)
                (_accum if gi is g else _accum_fresh)(t_in, gi)

        tape.record(bwd)
    return out


def mul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    _check_broadcast(a.shape, b.shape)
    out = Tensor(a.data * b.data, a.requires_grad or b.requires_grad)
    if tape is not None and out.requires_grad:

        def bwd():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                _accum_fresh(a, _unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                _accum_fresh(b, _unbroadcast(g * a.data, b.shape))

        tape.record(bwd)
    return out


def scale(a: Tensor, s: float, tape: Tape | None = None) -> Tensor:
    out = Tensor(a.data * s, a.requires_grad)
    if tape is not None and out.requires_grad:

        def bwd():
            if out.grad is not None:
                _accum_fresh(a, out.grad * s)

        tape.record(bwd)
    return out


def silu(a: Tensor, tape: Tape | None = None) -> Tensor:
    # sigmoid via tanh: one libm pass, stable for large |x|
    sig = np.tanh(a.data * 0.5)
    sig += 1.0
    sig *= 0.5
    out = Tensor(a.data * sig, a.requires_grad)
    if tape is not None and out.requires_grad:

        def bwd():
            if out.grad is not None:
                _accum_fresh(a, kernels.silu_backward(out.grad, a.data, sig))

        tape.record(bwd)
    return out


def tsum(a: Tensor, tape: Tape | None = None) -> Tensor:
    """Full reduction to a rank-0 tensor."""
    out = Tensor(a.data.sum(), a.requires_grad)
    if tape is not None and out.requires_grad:

        def bwd():
            if out.grad is not None:
                _accum(a, np.broadcast_to(out.grad, a.shape))

        tape.record(bwd)
    return out


def transpose(a: Tensor, axes: Sequence[int], tape: Tape | None = None) -> Tensor:
    axes = tuple(axes)
    out = Tensor(a.data.transpose(axes), a.requires_grad)
    if tape is not None and out.requires_grad:
        inv = tuple(np.argsort(axes))

        def bwd():
            if out.grad is not None:
                _accum(a, out.grad.transpose(inv))

        tape.record(bwd)
    return out


def reshape(a: Tensor, shape: Sequence[int], tape: Tape | None = None) -> Tensor:
    shape = tuple(shape)
    out = Tensor(a.data.reshape(shape), a.requires_grad)
    if tape is not None and out.requires_grad:
        orig = a.shape

        def bwd():
            if out.grad is not None:
                _accum(a, out.grad.reshape(orig))

        tape.record(bwd)
    return out


def broadcast_to(a: Tensor, shape: Sequence[int], tape: Tape | None = None) -> Tensor:
    shape = tuple(shape)
    _check_broadcast(a.shape, shape)
    out = Tensor(np.broadcast_to(a.data, shape).copy(), a.requires_grad)
    if tape is not None and out.requires_grad:

        def bwd():
            if out.grad is not None:
                _accum(a, _unbroadcast(out.grad, a.shape))

        tape.record(bwd)
    return out


def concat(parts: Sequence[Tensor], axis: int, tape: Tape | None = None) -> Tensor:
    base = list(parts[0].shape)
    for p in parts[1:]:
        other = list(p.shape)
        if len(other) != len(base) or any(
            i != axis and other[i] != base[i] for i in range(len(base))
        ):
            raise DimensionError("concat parts disagree off the concat axis")
    out = Tensor(
        np.concatenate([p.data for p in parts], axis=axis),
        any(p.requires_grad for p in parts),
    )
    if tape is not None and out.requires_grad:
        sizes = [p.shape[axis] for p in parts]
        offsets = np.cumsum([0] + sizes)

        def bwd():
            if out.grad is None:
                return
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                if not p.requires_grad:
                    continue
                sl = [slice(None)] * out.grad.ndim
                sl[axis] = slice(lo, hi)
                _accum(p, out.grad[tuple(sl)])

        tape.record(bwd)
    return out


def conv1d(x: Tensor, w: Tensor, dilation: int = 1, tape: Tape | None = None) -> Tensor:
    """Same-padding dilated conv: x (B,Ci,T), w (Co,Ci,K) -> (B,Co,T)."""
    if x.data.ndim != 3 or w.data.ndim != 3 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"conv1d shapes {list(x.shape)} x {list(w.shape)}")
    out = Tensor(
        kernels.conv1d_forward(x.data, w.data, dilation),
        x.requires_grad or w.requires_grad,
    )
    if tape is not None and out.requires_grad:
        K = w.shape[2]

        def bwd():
            g = out.grad
            if g is None:
                return
            if x.requires_grad:
                _accum_fresh(x, kernels.conv1d_grad_input(g, w.data, dilation))
            if w.requires_grad:
                _accum_fresh(w, kernels.conv1d_grad_weight(g, x.data, K, dilation))

        tape.record(bwd)
    return out


# ---------------------------------------------------------------------------
# LFT1 tensor file format: 4-byte magic, u8 dtype (0=f32, 1=f64), u8 rank,
# little-endian u64 dims, then raw little-endian values.


def write_tensor(path, array, dtype=np.float64) -> None:
    array = np.asarray(array)
    code = _DTYPE_CODES[np.dtype(dtype)]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BB", code, array.ndim))
        fh.write(struct.pack(f"<{array.ndim}Q", *array.shape))
        fh.write(np.ascontiguousarray(array, dtype=dtype).astype("<" + np.dtype(dtype).str[1:]).tobytes())


def read_tensor(path) -> np.ndarray:
    """Read an LFT1 file; f32 payloads are upcast to f64."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ContractError(f"{path}: bad magic {raw[:4]!r}")
    code, rank = struct.unpack_from("<BB", raw, 4)
    if code not in _DTYPES:
        raise ContractError(f"{path}: unknown dtype code {code}")
    dims = struct.unpack_from(f"<{rank}Q", raw, 6)
    dt = np.dtype(_DTYPES[code]).newbyteorder("<")
    data = np.frombuffer(raw, dtype=dt, offset=6 + 8 * rank, count=int(np.prod(dims)) if rank else 1)
    return data.astype(np.float64).reshape(dims)
