"""
U-Net shapes, parameter counts and checkpoints
==============================================

Walk the encoder/decoder of the full-size network, count its parameters in
closed form, and round-trip a small model through a checkpoint file.
"""

import tempfile
import time
from pathlib import Path

import numpy as np

from tumorseg.unet import (UNetConfig, build_unet, encoder_shapes, forward, load_checkpoint,
                           param_count, predict_mask, save_checkpoint)

# Five blocks of width 64 on 240x240 slices
cfg = UNetConfig()
for d, (c, h, w) in enumerate(encoder_shapes(cfg)):
    print(f"encoder level {d}: {c:5d} channels at {h}x{w}")
print(f"parameters: {param_count(cfg):,}")

# Table of sizes for the block counts and a few widths
for blocks in (4, 5, 6):
    row = [f"{param_count(UNetConfig(blocks, base, input_size=(256, 256))):>12,}"
           for base in (8, 16, 32, 64)]
    print(f"{blocks} blocks, base 8/16/32/64:", " ".join(row))

# One full-size forward pass (a few seconds on one core)
model = build_unet(cfg, seed=0)
trace = []
start = time.perf_counter()
probs = forward(model, np.zeros((1, 1, 240, 240), np.float32), trace=trace)
print(f"forward {probs.shape} in {time.perf_counter() - start:.1f}s")
for kind, d, shape in trace:
    print(f"  {kind} {d}: {shape}")

# Small model: predict a mask and round-trip the checkpoint
small = build_unet(UNetConfig(3, 4, input_size=(32, 32)), seed=1)
mask = predict_mask(small, np.random.default_rng(0).standard_normal((2, 32, 32)))
print("mask", mask.shape, mask.dtype, np.unique(mask))
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "small.unet"
    save_checkpoint(small, path, extra={"task": "complete"})
    back, extra = load_checkpoint(path)
    same = all(np.array_equal(back.params[k], small.params[k]) for k in small.params)
    print(f"checkpoint {path.stat().st_size} bytes, identical: {same}, extra: {extra}")
