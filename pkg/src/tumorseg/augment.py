"""Paired image/label augmentation: flips, affine warp, gamma brightness, elastic field.

Geometric transforms are composed into a single 3x3 matrix about the image
centre (flip, then rotate, shear, zoom, shift) and applied together with the
elastic displacement in one inverse-warping pass.  Images are resampled
bilinearly, labels by nearest neighbour; samples falling outside the frame
read as 0.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import gaussian_filter

from .data import SliceSample
from .metrics import region_mask


@dataclass(frozen=True)
class AugmentationSpec:
    flip_h_prob: float = 0.5
    flip_v_prob: float = 0.5
    rotation_deg: float = 20.0
    shift_frac: float = 0.10
    shear_frac: float = 0.20
    zoom_frac: float = 0.10
    gamma_range: tuple[float, float] = (0.8, 1.2)
    elastic_alpha: float = 720.0
    elastic_sigma: float = 24.0
    flip: bool = True
    rotate: bool = True
    shift: bool = True
    shear: bool = True
    zoom: bool = True
    brightness: bool = True
    elastic: bool = True

    @classmethod
    def disabled(cls) -> "AugmentationSpec":
        return cls(flip=False, rotate=False, shift=False, shear=False, zoom=False,
                   brightness=False, elastic=False)

    @property
    def any_enabled(self) -> bool:
        return any((self.flip, self.rotate, self.shift, self.shear, self.zoom,
                    self.brightness, self.elastic))

    def errors(self) -> list[str]:
        errs = []
        for name in ("flip_h_prob", "flip_v_prob"):
            if not 0 <= getattr(self, name) <= 1:
                errs.append(f"{name} must be a probability")
        for name in ("rotation_deg", "shift_frac", "shear_frac", "zoom_frac", "elastic_alpha"):
            if getattr(self, name) < 0:
                errs.append(f"{name} must be non-negative")
        if self.zoom_frac >= 1:
            errs.append("zoom_frac must be below 1")
        lo, hi = self.gamma_range
        if not 0 < lo <= hi:
            errs.append(f"gamma_range must satisfy 0 < lo <= hi, got {self.gamma_range}")
        if self.elastic_sigma <= 0:
            errs.append("elastic_sigma must be positive")
        return errs


@dataclass(frozen=True)
class AugmentDraw:
    flip_h: bool = False
    flip_v: bool = False
    angle_deg: float = 0.0
    shift_x: float = 0.0  # fraction of width
    shift_y: float = 0.0  # fraction of height
    shear: float = 0.0
    zoom: float = 1.0
    gamma: float = 1.0
    elastic: bool = False


IDENTITY_DRAW = AugmentDraw()


def sample_params(spec: AugmentationSpec, rng: np.random.Generator) -> AugmentDraw:
    # Every field is drawn whether or not it is enabled, so toggling one
    # transform does not shift the random stream of the others.
    u = rng.random(9)
    flip_h = bool(u[0] < spec.flip_h_prob)
    flip_v = bool(u[1] < spec.flip_v_prob)
    angle = (2 * u[2] - 1) * spec.rotation_deg
    sx = (2 * u[3] - 1) * spec.shift_frac
    sy = (2 * u[4] - 1) * spec.shift_frac
    shear = u[5] * spec.shear_frac
    zoom = 1 + (2 * u[6] - 1) * spec.zoom_frac
    lo, hi = spec.gamma_range
    gamma = lo + u[7] * (hi - lo)
    return AugmentDraw(
        flip_h=flip_h and spec.flip,
        flip_v=flip_v and spec.flip,
        angle_deg=angle if spec.rotate else 0.0,
        shift_x=sx if spec.shift else 0.0,
        shift_y=sy if spec.shift else 0.0,
        shear=shear if spec.shear else 0.0,
        zoom=zoom if spec.zoom else 1.0,
        gamma=gamma if spec.brightness else 1.0,
        elastic=spec.elastic and spec.elastic_alpha > 0,
    )


# --------------------------------------------------------------------------
# matrices act on homogeneous (x, y, 1) with x = column, y = row, origin at centre

def flip_matrix(h: bool, v: bool) -> np.ndarray:
    return np.diag([-1.0 if h else 1.0, -1.0 if v else 1.0, 1.0])


def rotation_matrix(angle_deg: float) -> np.ndarray:
    a = np.deg2rad(angle_deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def shear_matrix(k: float) -> np.ndarray:
    return np.array([[1.0, k, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


def zoom_matrix(z: float) -> np.ndarray:
    return np.diag([z, z, 1.0])


def shift_matrix(tx: float, ty: float) -> np.ndarray:
    return np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])


def affine_matrix(draw: AugmentDraw, shape: tuple[int, int]) -> np.ndarray:
    """Forward map from source to destination pixel coordinates about the centre.

    Returned in centred coordinates; :func:`warp_pair` handles the origin.
    """
    h, w = shape
    return (shift_matrix(draw.shift_x * w, draw.shift_y * h)
            @ zoom_matrix(draw.zoom)
            @ shear_matrix(draw.shear)
            @ rotation_matrix(draw.angle_deg)
            @ flip_matrix(draw.flip_h, draw.flip_v))


def elastic_field(shape, alpha: float, sigma: float, rng: np.random.Generator):
    """Smoothed random displacement (dx, dy) in pixels.

    Uniform(-1, 1) noise per pixel and axis, convolved with a normalized
    Gaussian (truncated at 4 sigma, zero beyond the frame) and scaled by
    ``alpha``.  Zero padding keeps border pixels from dominating the average.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    noise = rng.uniform(-1, 1, (2, *shape))
    dx = gaussian_filter(noise[0], sigma, mode="constant", truncate=4.0) * alpha
    dy = gaussian_filter(noise[1], sigma, mode="constant", truncate=4.0) * alpha
    return dx, dy


def _bilinear(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    h, w = img.shape
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    fy = ys - y0
    fx = xs - x0
    out = np.zeros(ys.shape, dtype=np.float64)
    for dy, wy in ((0, 1 - fy), (1, fy)):
        for dx, wx in ((0, 1 - fx), (1, fx)):
            yy, xx = y0 + dy, x0 + dx
            ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            wgt = np.where(ok, wy * wx, 0.0)
            nz = wgt != 0
            vals = img[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
            out += np.where(nz, wgt * vals, 0.0)
    return out


def _nearest(lab: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    h, w = lab.shape
    yi = np.floor(ys + 0.5).astype(np.int64)
    xi = np.floor(xs + 0.5).astype(np.int64)
    ok = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
    out = lab[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
    return np.where(ok, out, 0).astype(lab.dtype)


def warp_pair(image, label, matrix=None, field=None):
    """Inverse-warp an image and its label map by ``matrix`` then ``field``.

    Output pixel p reads the source at ``matrix^-1 p + field(p)``.
    """
    image = np.asarray(image)
    label = np.asarray(label)
    if image.shape != label.shape or image.ndim != 2:
        raise ValueError(f"image {image.shape} and label {label.shape} must be equal 2-D shapes")
    h, w = image.shape
    if (matrix is None or np.array_equal(matrix, np.eye(3))) and field is None:
        return image.copy(), label.copy()
    inv = np.linalg.inv(np.eye(3) if matrix is None else matrix)
    cy, cx = (h - 1) / 2, (w - 1) / 2
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    px, py = xx - cx, yy - cy
    sx = inv[0, 0] * px + inv[0, 1] * py + inv[0, 2] + cx
    sy = inv[1, 0] * px + inv[1, 1] * py + inv[1, 2] + cy
    if field is not None:
        sx = sx + field[0]
        sy = sy + field[1]
    # snap coordinates that are integers up to rounding so flips/90-degree turns stay exact
    sx = np.where(np.abs(sx - np.rint(sx)) < 1e-9, np.rint(sx), sx)
    sy = np.where(np.abs(sy - np.rint(sy)) < 1e-9, np.rint(sy), sy)
    out_img = _bilinear(image.astype(np.float64), sy, sx).astype(image.dtype)
    return out_img, _nearest(label, sy, sx)


def brightness(image, gamma: float, eps: float = 1e-12) -> np.ndarray:
    """Gamma power law on min-max rescaled intensities; the range endpoints stay put."""
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    image = np.asarray(image)
    lo, hi = image.min(), image.max()
    if hi == lo or gamma == 1:
        return image.copy()
    x = image.astype(np.float64)
    u = (x - lo) / (hi - lo + eps)
    return (u ** gamma * (hi - lo) + lo).astype(image.dtype)


def augment_arrays(image, label, spec: AugmentationSpec, rng: np.random.Generator):
    """Draw parameters, apply brightness, then one geometric resampling pass."""
    draw = sample_params(spec, rng)
    shape = np.shape(image)
    field = None
    if draw.elastic:
        field = elastic_field(shape, spec.elastic_alpha, spec.elastic_sigma, rng)
    image = brightness(image, draw.gamma)
    return warp_pair(image, label, affine_matrix(draw, shape), field)


def augment(sample: SliceSample, spec: AugmentationSpec, rng: np.random.Generator) -> SliceSample:
    if not spec.any_enabled:
        return sample
    # warp the full label map when present so the preview and target agree
    if sample.labels is not None:
        img, lab = augment_arrays(sample.image, sample.labels, spec, rng)
        return replace(sample, image=img, labels=lab, target=region_mask(lab, sample.task))
    img, tgt = augment_arrays(sample.image, sample.target, spec, rng)
    return replace(sample, image=img, target=tgt)


def sample_seed(master: int, epoch: int, index: int) -> np.random.Generator:
    """Independent generator per (master seed, epoch, sample index)."""
    return np.random.default_rng(np.random.SeedSequence([master, epoch, index]))
