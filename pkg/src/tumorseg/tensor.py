"""Dense tensors and tape-based reverse-mode differentiation.

Every primitive takes :class:`Tensor` arguments and returns a new
:class:`Tensor`.  When at least one argument belongs to a :class:`Graph`, the
primitive appends a record (op name, inputs, output, backward closure) to that
graph's tape; otherwise nothing is recorded and the call is a plain numpy
computation.  Inference therefore costs no bookkeeping.

Layout is N, C, H, W throughout.  Convolutions are cross-correlations.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


class Tensor:
    """An immutable n-dimensional array, optionally attached to a graph."""

    __slots__ = ("data", "graph", "name")

    def __init__(self, data, graph: "Graph | None" = None, name: str | None = None):
        data = np.asarray(data)
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        self.data = data
        self.graph = graph
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Record:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Graph:
    """Tape of primitive records plus a registry of named parameters.

    Records are appended in execution order, so the tape is topologically
    sorted by construction.  :meth:`backward` walks it once in reverse.
    """

    def __init__(self):
        self.records: list[Record] = []
        self.params: dict[str, Tensor] = {}

    def parameter(self, name: str, array) -> Tensor:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already registered")
        t = Tensor(array, graph=self, name=name)
        self.params[name] = t
        return t

    def record(self, op, inputs, output, backward) -> None:
        self.records.append(Record(op, tuple(inputs), output, backward))

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Return d(loss)/d(param) for every registered parameter."""
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.graph is not self:
            raise ValueError("loss was not produced on this graph")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.output), None)
            if g is None:
                continue
            for t, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or t.graph is not self:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return {
            name: grads.get(id(t), np.zeros_like(t.data))
            for name, t in self.params.items()
        }


def backward(graph: Graph, loss: Tensor) -> dict[str, np.ndarray]:
    return graph.backward(loss)


def emit(op: str, inputs: Sequence[Tensor], out: np.ndarray, grad_fn) -> Tensor:
    """Wrap ``out`` as a Tensor, recording ``grad_fn`` if any input is tracked."""
    graph = None
    for t in inputs:
        if t.graph is not None:
            if graph is not None and t.graph is not graph:
                raise ValueError(f"{op}: inputs belong to different graphs")
            graph = t.graph
    result = Tensor(out, graph=graph)
    if graph is not None:
        graph.record(op, inputs, result, grad_fn)
    return result


# --------------------------------------------------------------------------
# convolution kernels (numpy in, numpy out)

def _im2col(xp: np.ndarray, ho: int, wo: int, stride: int) -> np.ndarray:
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :ho, :wo]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * 9)


def _col2im(dcols: np.ndarray, padded_shape, ho: int, wo: int, stride: int) -> np.ndarray:
    n, c, hp, wp = padded_shape
    d = dcols.reshape(n, ho, wo, c, 3, 3).transpose(0, 3, 1, 2, 4, 5)
    out = np.zeros(padded_shape, dtype=dcols.dtype)
    for ky in range(3):
        for kx in range(3):
            out[:, :, ky:ky + stride * ho:stride, kx:kx + stride * wo:stride] += d[..., ky, kx]
    return out


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: int):
    n, c, h, wd = x.shape
    k = w.shape[0]
    ho = (h - 1) // stride + 1
    wo = (wd - 1) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = _im2col(xp, ho, wo, stride)
    out = cols @ w.reshape(k, c * 9).T
    return out.reshape(n, ho, wo, k).transpose(0, 3, 1, 2), cols, xp.shape


def _check_conv_shapes(op, x, w, b, in_axis):
    if x.ndim != 4:
        raise ShapeError(f"{op}: input must be 4-D [N,C,H,W], got {x.shape}")
    if w.ndim != 4 or w.shape[2:] != (3, 3):
        raise ShapeError(f"{op}: weight must be [*,*,3,3], got {w.shape}")
    if w.shape[in_axis] != x.shape[1]:
        raise ShapeError(
            f"{op}: input has {x.shape[1]} channels but weight expects {w.shape[in_axis]}"
        )
    out_ch = w.shape[1 - in_axis]
    if b is not None and b.shape != (out_ch,):
        raise ShapeError(f"{op}: bias must have shape ({out_ch},), got {b.shape}")


def conv2d_strided(x, w, stride: int = 2) -> np.ndarray:
    """Plain numpy strided 3x3 convolution, padding 1, no bias.

    This is the forward map whose adjoint :func:`transposed_conv2d` computes.
    ``w`` has shape [C_out, C_in, 3, 3].
    """
    x = np.asarray(x)
    w = np.asarray(w)
    _check_conv_shapes("conv2d_strided", x, w, None, 1)
    return np.ascontiguousarray(_conv_forward(x, w, stride)[0])


# --------------------------------------------------------------------------
# primitives

def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """3x3 cross-correlation, stride 1, zero padding 1; ``w`` is [K, C, 3, 3]."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    _check_conv_shapes("conv2d", x.data, w.data, b.data, 1)
    wd = w.data
    k, c = wd.shape[:2]
    y, cols, pshape = _conv_forward(x.data, wd, 1)
    n, _, h, wi = y.shape
    out = np.ascontiguousarray(y) + b.data.reshape(1, k, 1, 1)

    def grad_fn(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, k)
        dw = (gm.T @ cols).reshape(wd.shape)
        db = gm.sum(axis=0)
        dxp = _col2im(gm @ wd.reshape(k, c * 9), pshape, h, wi, 1)
        return dxp[:, :, 1:-1, 1:-1], dw, db

    return emit("conv2d", (x, w, b), out, grad_fn)


def conv1x1(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Pointwise convolution; ``w`` is [K, C, 1, 1]."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if w.data.ndim != 4 or w.shape[2:] != (1, 1) or w.shape[1] != x.shape[1]:
        raise ShapeError(f"conv1x1: weight {w.shape} does not fit input {x.shape}")
    wm = w.data[:, :, 0, 0]
    out = np.einsum("kc,nchw->nkhw", wm, x.data, optimize=True) + b.data.reshape(1, -1, 1, 1)

    def grad_fn(g):
        dx = np.einsum("kc,nkhw->nchw", wm, g, optimize=True)
        dw = np.einsum("nkhw,nchw->kc", g, x.data, optimize=True)[:, :, None, None]
        return dx, dw, g.sum(axis=(0, 2, 3))

    return emit("conv1x1", (x, w, b), out, grad_fn)


def transposed_conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """3x3 transposed convolution, stride 2, padding 1, output padding 1.

    ``w`` is [C_in, K_out, 3, 3]; an H x W input becomes 2H x 2W.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    _check_conv_shapes("transposed_conv2d", x.data, w.data, b.data, 0)
    xd, wd = x.data, w.data
    n, c, h, wi = xd.shape
    k = wd.shape[1]
    xm = xd.transpose(0, 2, 3, 1).reshape(-1, c)
    cols = (xm @ wd.reshape(c, k * 9)).reshape(n, h, wi, k, 3, 3).transpose(0, 3, 1, 2, 4, 5)
    # buffer index = output index + 1; row 0 / col 0 is the cropped padding
    buf = np.zeros((n, k, 2 * h + 1, 2 * wi + 1), dtype=cols.dtype)
    for ky in range(3):
        for kx in range(3):
            buf[:, :, ky:ky + 2 * h:2, kx:kx + 2 * wi:2] += cols[..., ky, kx]
    out = buf[:, :, 1:, 1:] + b.data.reshape(1, k, 1, 1)

    def grad_fn(g):
        gb = np.pad(g, ((0, 0), (0, 0), (1, 0), (1, 0)))
        gcols = np.empty((n, h, wi, k, 3, 3), dtype=g.dtype)
        for ky in range(3):
            for kx in range(3):
                gcols[..., ky, kx] = gb[:, :, ky:ky + 2 * h:2, kx:kx + 2 * wi:2].transpose(0, 2, 3, 1)
        gm = gcols.reshape(-1, k * 9)
        dx = (gm @ wd.reshape(c, k * 9).T).reshape(n, h, wi, c).transpose(0, 3, 1, 2)
        dw = (xm.T @ gm).reshape(wd.shape)
        return dx, dw, g.sum(axis=(0, 2, 3))

    return emit("transposed_conv2d", (x, w, b), out, grad_fn)


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2.  Ties resolve to the first element in row-major order."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2d: spatial dims must be even, got {h}x{w}")
    win = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        d = np.zeros((n, c, h // 2, w // 2, 4), dtype=g.dtype)
        np.put_along_axis(d, idx[..., None], g[..., None], axis=-1)
        d = d.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (d.reshape(n, c, h, w),)

    return emit("maxpool2d", (x,), out, grad_fn)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return emit("relu", (x,), np.where(mask, x.data, 0).astype(x.dtype), lambda g: (g * mask,))


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise ShapeError("concat_channels: both inputs must be 4-D")
    if (a.shape[0], *a.shape[2:]) != (b.shape[0], *b.shape[2:]):
        raise ShapeError(f"concat_channels: cannot join {a.shape} and {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return emit("concat_channels", (a, b), out, lambda g: (g[:, :ca], g[:, ca:]))


def softmax2(logits: Tensor) -> Tensor:
    """Per-pixel softmax over a two-channel axis."""
    logits = as_tensor(logits)
    if logits.data.ndim != 4 or logits.shape[1] != 2:
        raise ShapeError(f"softmax2: expected [N,2,H,W], got {logits.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def grad_fn(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return emit("softmax2", (logits,), p, grad_fn)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None = None,
            training: bool = True) -> Tensor:
    """Inverted dropout.  Identity when ``rate == 0`` or not training."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1 - rate)
    return emit("dropout", (x,), x.data * keep, lambda g: (g * keep,))


def weighted_sum(x: Tensor, weights=None) -> Tensor:
    """Scalar ``sum(x * weights)``; plain sum when ``weights`` is None."""
    x = as_tensor(x)
    if weights is None:
        return emit("sum", (x,), x.data.sum(), lambda g: (np.broadcast_to(g, x.shape).copy(),))
    wgt = np.asarray(weights, dtype=x.dtype)
    if wgt.shape != x.shape:
        raise ShapeError(f"weighted_sum: weights {wgt.shape} vs input {x.shape}")
    return emit("weighted_sum", (x,), (x.data * wgt).sum(), lambda g: (g * wgt,))
