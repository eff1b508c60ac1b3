"""
Augmentation: draws, one-pass warps and gamma brightness
========================================================

Sample augmentation parameters, see how the affine pieces compose, and
watch the tumour area under the combined affine plus elastic warp.
Pass an output directory to also write PGM previews.
"""

import sys
from pathlib import Path

import numpy as np

from tumorseg.augment import (AugmentationSpec, AugmentDraw, affine_matrix, augment,
                              brightness, elastic_field, sample_params, warp_pair)
from tumorseg.cli import _write_pgm
from tumorseg.data import extract_slices, generate_phantom

spec = AugmentationSpec()
rng = np.random.default_rng(0)
for _ in range(3):
    print(sample_params(spec, rng))

# A 90 degree turn about the centre is an exact permutation of pixels
img = np.arange(16.0).reshape(4, 4)
out, _ = warp_pair(img, np.zeros((4, 4), np.uint8), affine_matrix(AugmentDraw(angle_deg=90), img.shape))
print(out)

# Elastic fields at the default settings: a few pixels of smooth displacement
dx, dy = elastic_field((240, 240), spec.elastic_alpha, spec.elastic_sigma, np.random.default_rng(1))
print(f"elastic displacement: std {np.hypot(dx, dy).std():.2f}px, max {np.hypot(dx, dy).max():.2f}px")

# Gamma acts on min-max rescaled intensities and keeps the endpoints
print(brightness(np.array([[0.0, 0.5, 1.0]]), 2.0))

# Tumour area before and after a few full draws
vols, labels = generate_phantom((64, 64, 16), seed=0)
sample = max(extract_slices(vols, labels, "complete"), key=lambda s: s.target.sum())
for i in range(5):
    aug = augment(sample, spec, np.random.default_rng(i))
    print(f"draw {i}: tumour pixels {sample.target.sum()} -> {aug.target.sum()}, "
          f"labels {np.unique(aug.labels).tolist()}")

if len(sys.argv) > 1:
    out = Path(sys.argv[1])
    out.mkdir(parents=True, exist_ok=True)
    scale = lambda a: np.clip((a - sample.image.min()) / np.ptp(sample.image) * 255, 0, 255)
    _write_pgm(out / "before.pgm", scale(sample.image), 255)
    _write_pgm(out / "after.pgm", scale(aug.image), 255)
    print("previews in", out)
