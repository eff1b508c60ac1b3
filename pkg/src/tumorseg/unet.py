"""U-Net construction, forward pass and checkpoint files."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import Graph, Tensor


@dataclass
class UNetConfig:
    num_blocks: int = 5
    base_filters: int = 64
    in_channels: int = 1
    out_channels: int = 2
    input_size: tuple[int, int] = (240, 240)
    dropout_rate: float = 0.0
    l2_lambda: float = 0.0

    def __post_init__(self):
        self.input_size = tuple(int(s) for s in self.input_size)

    def errors(self) -> list[str]:
        errs = []
        # 4-6 is the published range; 2 and 3 are kept for desk-scale networks
        if not 2 <= self.num_blocks <= 6:
            errs.append(f"num_blocks must be between 2 and 6, got {self.num_blocks}")
        if self.base_filters < 1:
            errs.append(f"base_filters must be positive, got {self.base_filters}")
        if self.in_channels < 1:
            errs.append(f"in_channels must be positive, got {self.in_channels}")
        if self.out_channels != 2:
            errs.append(f"out_channels is fixed at 2, got {self.out_channels}")
        if len(self.input_size) != 2 or min(self.input_size) < 1:
            errs.append(f"input_size must be two positive ints, got {self.input_size}")
        else:
            div = 2 ** max(self.num_blocks - 1, 0)
            if any(s % div for s in self.input_size):
                errs.append(
                    f"input_size {self.input_size} must be divisible by 2^(num_blocks-1) = {div}"
                )
        if not 0 <= self.dropout_rate < 1:
            errs.append(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.l2_lambda < 0:
            errs.append(f"l2_lambda must be non-negative, got {self.l2_lambda}")
        return errs

    def validate(self) -> "UNetConfig":
        errs = self.errors()
        if errs:
            raise ValueError("invalid UNetConfig: " + "; ".join(errs))
        return self


def channels_at(config: UNetConfig, depth: int) -> int:
    return config.base_filters * 2 ** depth


def layer_shapes(config: UNetConfig) -> list[tuple[str, tuple[int, ...]]]:
    """(name, shape) for every parameter, in registration order."""
    shapes = []
    c_in = config.in_channels
    for d in range(config.num_blocks):
        c = channels_at(config, d)
        shapes += [(f"enc{d}.conv1.w", (c, c_in, 3, 3)), (f"enc{d}.conv1.b", (c,)),
                   (f"enc{d}.conv2.w", (c, c, 3, 3)), (f"enc{d}.conv2.b", (c,))]
        c_in = c
    for d in reversed(range(config.num_blocks - 1)):
        c = channels_at(config, d)
        shapes += [(f"dec{d}.up.w", (2 * c, c, 3, 3)), (f"dec{d}.up.b", (c,)),
                   (f"dec{d}.conv1.w", (c, 2 * c, 3, 3)), (f"dec{d}.conv1.b", (c,)),
                   (f"dec{d}.conv2.w", (c, c, 3, 3)), (f"dec{d}.conv2.b", (c,))]
    shapes += [("head.w", (config.out_channels, config.base_filters, 1, 1)),
               ("head.b", (config.out_channels,))]
    return shapes


def param_count(config: UNetConfig) -> int:
    """Closed-form parameter count."""
    config.validate()
    b, cin, out = config.base_filters, config.in_channels, config.out_channels
    total = 9 * b * cin + b + 9 * b * b + b
    for d in range(1, config.num_blocks):
        c = b * 2 ** d
        total += 9 * c * (c // 2) + c + 9 * c * c + c
    for d in range(config.num_blocks - 1):
        c = b * 2 ** d
        # up: 2c -> c, conv1: 2c -> c, conv2: c -> c
        total += (9 * 2 * c * c + c) + (9 * 2 * c * c + c) + (9 * c * c + c)
    return total + out * b + out


def encoder_shapes(config: UNetConfig) -> list[tuple[int, int, int]]:
    """(channels, height, width) of each encoder block output."""
    config.validate()
    h, w = config.input_size
    return [(channels_at(config, d), h >> d, w >> d) for d in range(config.num_blocks)]


@dataclass
class UNetModel:
    config: UNetConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params.values()])

    def zero_(self) -> "UNetModel":
        for p in self.params.values():
            p[...] = 0
        return self


def build_unet(config: UNetConfig, seed: int = 0, init_std: float = 0.01,
               dtype=np.float32) -> UNetModel:
    """Weights ~ N(0, init_std^2), biases zero."""
    config.validate()
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in layer_shapes(config):
        if name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            params[name] = (init_std * rng.standard_normal(shape)).astype(dtype)
    return UNetModel(config, params)


def forward(model: UNetModel, batch, training: bool = False, graph: Graph | None = None,
            rng: np.random.Generator | None = None, trace: list | None = None) -> Tensor:
    """Run the network and return per-pixel class probabilities [N, 2, H, W].

    Pass a :class:`Graph` to record the pass for :meth:`Graph.backward`; its
    parameter registry is filled from ``model.params`` (names already
    registered on the graph are reused as they are).  ``trace``, if given,
    collects the shape of every encoder and decoder block output.
    """
    cfg = model.config
    x = T.as_tensor(batch)
    if x.data.ndim != 4 or x.shape[1] != cfg.in_channels or tuple(x.shape[2:]) != cfg.input_size:
        raise T.ShapeError(
            f"forward: expected [N,{cfg.in_channels},{cfg.input_size[0]},{cfg.input_size[1]}], got {x.shape}"
        )
    if graph is not None:
        p = {k: graph.params[k] if k in graph.params else graph.parameter(k, v)
             for k, v in model.params.items()}
    else:
        p = {k: Tensor(v) for k, v in model.params.items()}
    rate = cfg.dropout_rate if training else 0.0

    def block(h, prefix):
        h = T.relu(T.conv2d(h, p[f"{prefix}.conv1.w"], p[f"{prefix}.conv1.b"]))
        h = T.relu(T.conv2d(h, p[f"{prefix}.conv2.w"], p[f"{prefix}.conv2.b"]))
        return T.dropout(h, rate, rng, training)

    skips = []
    h = x
    for d in range(cfg.num_blocks):
        h = block(h, f"enc{d}")
        if trace is not None:
            trace.append(("enc", d, h.shape))
        if d < cfg.num_blocks - 1:
            skips.append(h)
            h = T.maxpool2d(h)
    for d in reversed(range(cfg.num_blocks - 1)):
        h = T.transposed_conv2d(h, p[f"dec{d}.up.w"], p[f"dec{d}.up.b"])
        h = block(T.concat_channels(h, skips[d]), f"dec{d}")
        if trace is not None:
            trace.append(("dec", d, h.shape))
    return T.softmax2(T.conv1x1(h, p["head.w"], p["head.b"]))


def predict_mask(model: UNetModel, images: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Binary foreground masks for a stack of 2-D images [N, H, W] (argmax over classes)."""
    dtype = next(iter(model.params.values())).dtype
    out = np.empty(images.shape, dtype=np.uint8)
    for i in range(0, len(images), batch_size):
        chunk = images[i:i + batch_size, None].astype(dtype)
        probs = forward(model, chunk).data
        out[i:i + batch_size] = probs[:, 1] > probs[:, 0]
    return out


# --------------------------------------------------------------------------
# checkpoint container:
#   b"UNET" | version u8 | header length u32 LE | header JSON (utf-8)
#   | parameters as float32 LE, registration order

CHECKPOINT_MAGIC = b"UNET"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: UNetModel, path, extra: dict | None = None) -> None:
    header = {"config": asdict(model.config),
              "params": [[k, list(v.shape)] for k, v in model.params.items()]}
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC + struct.pack("<BI", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        for v in model.params.values():
            f.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[UNetModel, dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a UNET checkpoint")
    if len(raw) < 9:
        raise CheckpointError(f"{path}: truncated header")
    version, hlen = struct.unpack_from("<BI", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[9:9 + hlen].decode("utf-8"))
    config = UNetConfig(**header["config"])
    offset = 9 + hlen
    params = {}
    for name, shape in header["params"]:
        n = int(np.prod(shape))
        if offset + 4 * n > len(raw):
            raise CheckpointError(f"{path}: truncated while reading {name}")
        params[name] = np.frombuffer(raw, "<f4", n, offset).reshape(shape).astype(np.float32)
        offset += 4 * n
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return UNetModel(config, params), header.get("extra", {})
