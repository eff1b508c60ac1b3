"""Central finite-difference checks for the differentiable primitives."""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as T
from .tensor import Graph, Tensor


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max|a - n| scaled by the larger of max|a| and max|n|."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def grad_check(
    fn: Callable[[dict[str, Tensor]], Tensor],
    inputs: dict[str, np.ndarray],
    eps: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare graph gradients of a scalar ``fn`` with central differences.

    ``fn`` receives a dict of Tensors keyed like ``inputs``.  When
    ``max_coords`` is set, only that many randomly chosen coordinates per input
    are perturbed.  Returns the worst :func:`max_relative_error` over inputs.
    """
    inputs = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    g = Graph()
    leaves = {k: g.parameter(k, v) for k, v in inputs.items()}
    grads = g.backward(fn(leaves))

    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for name, base in inputs.items():
        flat = base.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        numeric = np.empty(coords.size)
        for j, i in enumerate(coords):
            orig = flat[i]
            flat[i] = orig + eps
            fp = fn({k: Tensor(v) for k, v in inputs.items()}).item()
            flat[i] = orig - eps
            fm = fn({k: Tensor(v) for k, v in inputs.items()}).item()
            flat[i] = orig
            numeric[j] = (fp - fm) / (2 * eps)
        analytic = grads[name].reshape(-1)[coords]
        worst = max(worst, max_relative_error(analytic, numeric))
    return worst


def _distinct(rng, shape):
    """Shuffled, well-separated values so max-pool never sits on a tie."""
    n = int(np.prod(shape))
    step = 4.0 / n
    vals = -2 + step * np.arange(n) + rng.uniform(0, step / 4, n)
    return rng.permutation(vals).reshape(shape)


def _away_from_zero(rng, shape, margin=1e-2):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin, x)


def check_primitive(op: str, input_shape, seed: int = 0) -> float:
    """Finite-difference check of one named primitive on seeded random inputs.

    The scalar objective is ``sum(op(...) * R)`` for a fixed random ``R`` so
    that every output element contributes a distinct weight.
    """
    rng = np.random.default_rng(seed)
    shape = tuple(input_shape)

    def weighted(out_shape):
        return rng.standard_normal(out_shape)

    if op == "conv2d":
        n, c, h, w = shape
        k = 3
        inputs = {"x": rng.standard_normal(shape), "w": rng.standard_normal((k, c, 3, 3)),
                  "b": rng.standard_normal(k)}
        r = weighted((n, k, h, w))
        fn = lambda t: T.weighted_sum(T.conv2d(t["x"], t["w"], t["b"]), r)
    elif op == "conv1x1":
        n, c, h, w = shape
        k = 2
        inputs = {"x": rng.standard_normal(shape), "w": rng.standard_normal((k, c, 1, 1)),
                  "b": rng.standard_normal(k)}
        r = weighted((n, k, h, w))
        fn = lambda t: T.weighted_sum(T.conv1x1(t["x"], t["w"], t["b"]), r)
    elif op == "transposed_conv2d":
        n, c, h, w = shape
        k = 3
        inputs = {"x": rng.standard_normal(shape), "w": rng.standard_normal((c, k, 3, 3)),
                  "b": rng.standard_normal(k)}
        r = weighted((n, k, 2 * h, 2 * w))
        fn = lambda t: T.weighted_sum(T.transposed_conv2d(t["x"], t["w"], t["b"]), r)
    elif op == "maxpool2d":
        n, c, h, w = shape
        inputs = {"x": _distinct(rng, shape)}
        r = weighted((n, c, h // 2, w // 2))
        fn = lambda t: T.weighted_sum(T.maxpool2d(t["x"]), r)
    elif op == "relu":
        inputs = {"x": _away_from_zero(rng, shape)}
        r = weighted(shape)
        fn = lambda t: T.weighted_sum(T.relu(t["x"]), r)
    elif op == "concat_channels":
        n, c, h, w = shape
        inputs = {"a": rng.standard_normal(shape), "b": rng.standard_normal((n, c + 1, h, w))}
        r = weighted((n, 2 * c + 1, h, w))
        fn = lambda t: T.weighted_sum(T.concat_channels(t["a"], t["b"]), r)
    elif op == "softmax2":
        inputs = {"x": 2 * rng.standard_normal(shape)}
        r = weighted(shape)
        fn = lambda t: T.weighted_sum(T.softmax2(t["x"]), r)
    elif op == "dropout":
        inputs = {"x": rng.standard_normal(shape)}
        r = weighted(shape)
        fn = lambda t: T.weighted_sum(
            T.dropout(t["x"], 0.3, np.random.default_rng(seed + 1)), r)
    else:
        raise KeyError(f"unknown primitive {op!r}")
    return grad_check(fn, inputs)


PRIMITIVES = {
    "conv2d": (1, 2, 5, 5),
    "conv1x1": (2, 3, 4, 4),
    "transposed_conv2d": (1, 2, 4, 4),
    "maxpool2d": (1, 1, 4, 4),
    "relu": (2, 3, 4, 4),
    "concat_channels": (1, 2, 3, 3),
    "softmax2": (2, 2, 3, 3),
    "dropout": (2, 2, 4, 4),
}
