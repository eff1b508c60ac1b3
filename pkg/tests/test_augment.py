import numpy as np
import pytest

from tumorseg.augment import (IDENTITY_DRAW, AugmentationSpec, AugmentDraw, affine_matrix,
                              augment, augment_arrays, brightness, elastic_field, flip_matrix,
                              rotation_matrix, sample_params, shear_matrix, shift_matrix,
                              warp_pair, zoom_matrix)
from tumorseg.data import extract_slices, generate_phantom


def phantom_slice(seed=0, size=64, task="complete"):
    """The phantom slice with the most tumour, as a SliceSample."""
    vols, labels = generate_phantom((size, size, 16), seed=seed)
    samples = extract_slices(vols, labels, task)
    return max(samples, key=lambda s: s.target.sum())


def test_sample_params_deterministic():
    spec = AugmentationSpec()
    a = sample_params(spec, np.random.default_rng(5))
    b = sample_params(spec, np.random.default_rng(5))
    assert a == b


def test_draws_stay_in_bounds_and_flip_is_fair():
    spec = AugmentationSpec()
    rng = np.random.default_rng(0)
    draws = [sample_params(spec, rng) for _ in range(100_000)]
    flips = np.mean([d.flip_h for d in draws])
    assert abs(flips - 0.5) < 0.01
    assert abs(np.mean([d.flip_v for d in draws]) - 0.5) < 0.01
    angle = np.array([d.angle_deg for d in draws])
    assert np.all(np.abs(angle) <= 20) and angle.max() > 19.9 and angle.min() < -19.9
    for attr in ("shift_x", "shift_y"):
        assert np.all(np.abs([getattr(d, attr) for d in draws]) <= 0.1)
    assert np.all([0 <= d.shear <= 0.2 for d in draws])
    assert np.all([0.9 <= d.zoom <= 1.1 for d in draws])
    assert np.all([0.8 <= d.gamma <= 1.2 for d in draws])


def test_disabled_spec_draws_identity():
    d = sample_params(AugmentationSpec.disabled(), np.random.default_rng(1))
    assert d == IDENTITY_DRAW
    assert not AugmentationSpec.disabled().any_enabled


def test_spec_validation():
    assert AugmentationSpec().errors() == []
    errs = AugmentationSpec(flip_h_prob=1.5, elastic_sigma=0, gamma_range=(1.2, 0.8)).errors()
    assert len(errs) == 3


def test_affine_identity_and_order():
    np.testing.assert_array_equal(affine_matrix(IDENTITY_DRAW, (8, 8)), np.eye(3))
    d = AugmentDraw(flip_h=True, angle_deg=13, shift_x=0.05, shift_y=-0.1, shear=0.15, zoom=1.07)
    h, w = 20, 30
    expected = (shift_matrix(0.05 * w, -0.1 * h) @ zoom_matrix(1.07) @ shear_matrix(0.15)
                @ rotation_matrix(13) @ flip_matrix(True, False))
    np.testing.assert_allclose(affine_matrix(d, (h, w)), expected, atol=1e-15)


def test_rotation_90_about_centre():
    m = affine_matrix(AugmentDraw(angle_deg=90), (5, 5))
    # centred coordinates: a point right of centre moves to below centre (rows grow down)
    np.testing.assert_allclose(m @ [2, 0, 1], [0, 2, 1], atol=1e-12)
    img = np.arange(25.0).reshape(5, 5)
    out, lab = warp_pair(img, img.astype(np.uint8), m)
    np.testing.assert_array_equal(out, np.rot90(img, k=-1))
    np.testing.assert_array_equal(lab, np.rot90(img, k=-1).astype(np.uint8))


def test_warp_identity_is_bit_exact():
    rng = np.random.default_rng(0)
    img = rng.normal(size=(16, 12)).astype(np.float32)
    lab = rng.integers(0, 5, (16, 12)).astype(np.uint8)
    out, olab = warp_pair(img, lab, np.eye(3), None)
    assert out.tobytes() == img.tobytes() and olab.tobytes() == lab.tobytes()
    zero = (np.zeros((16, 12)), np.zeros((16, 12)))
    out, olab = warp_pair(img, lab, np.eye(3), zero)
    assert out.tobytes() == img.tobytes() and olab.tobytes() == lab.tobytes()


@pytest.mark.parametrize("h, v", [(True, False), (False, True), (True, True)])
def test_double_flip_is_bit_exact(h, v):
    rng = np.random.default_rng(2)
    img = rng.normal(size=(15, 16))
    lab = rng.integers(0, 5, (15, 16)).astype(np.uint8)
    m = affine_matrix(AugmentDraw(flip_h=h, flip_v=v), img.shape)
    once = warp_pair(img, lab, m)
    twice = warp_pair(*once, m)
    assert twice[0].tobytes() == img.tobytes()
    assert twice[1].tobytes() == lab.tobytes()
    assert not np.array_equal(once[0], img)


def test_label_alphabet_preserved():
    spec = AugmentationSpec()
    s = phantom_slice(0)
    present = set(np.unique(s.labels)) | {0}
    for seed in range(100):
        _, lab = augment_arrays(s.image, s.labels, spec, np.random.default_rng(seed))
        assert set(np.unique(lab)) <= present
        assert lab.dtype == s.labels.dtype


def test_elastic_zero_alpha_is_identity():
    dx, dy = elastic_field((16, 16), 0.0, 24.0, np.random.default_rng(0))
    assert not dx.any() and not dy.any()
    img = np.random.default_rng(1).normal(size=(16, 16))
    lab = (img > 0).astype(np.uint8)
    out, olab = warp_pair(img, lab, np.eye(3), (dx, dy))
    assert out.tobytes() == img.tobytes() and olab.tobytes() == lab.tobytes()


def test_elastic_field_bounded():
    for seed in range(20):
        for alpha, sigma in ((720, 24), (34, 4), (5, 1)):
            dx, dy = elastic_field((32, 40), alpha, sigma, np.random.default_rng(seed))
            assert dx.shape == (32, 40)
            assert np.abs(dx).max() <= alpha and np.abs(dy).max() <= alpha


def test_elastic_field_flattens_for_large_sigma():
    fields = np.array([elastic_field((16, 16), 1.0, 1000.0, np.random.default_rng(s))[0]
                       for s in range(200)])
    across_pixels = fields.var(axis=(1, 2)).mean()
    across_seeds = fields.var(axis=0).mean()
    assert across_pixels < 1e-3 * across_seeds


def test_elastic_rejects_bad_params():
    with pytest.raises(ValueError):
        elastic_field((4, 4), 1.0, 0.0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        elastic_field((4, 4), -1.0, 1.0, np.random.default_rng(0))


def test_brightness_examples():
    img = np.random.default_rng(0).normal(size=(8, 8))
    assert np.max(np.abs(brightness(img, 1.0) - img)) <= 1e-12
    const = np.full((4, 4), 3.5)
    assert np.array_equal(brightness(const, 2.0), const)
    out = brightness(np.array([[0.0, 0.5, 1.0]]), 2.0)
    np.testing.assert_allclose(out, [[0.0, 0.25, 1.0]], atol=1e-11)
    out = brightness(img, 0.8)
    assert out.min() == pytest.approx(img.min(), abs=1e-12)
    assert out.max() == pytest.approx(img.max(), abs=1e-10)
    with pytest.raises(ValueError):
        brightness(img, 0.0)


def test_augment_disabled_and_deterministic():
    s = phantom_slice(1, size=32)
    assert augment(s, AugmentationSpec.disabled(), np.random.default_rng(0)) is s
    spec = AugmentationSpec()
    a = augment(s, spec, np.random.default_rng(4))
    b = augment(s, spec, np.random.default_rng(4))
    assert a.image.tobytes() == b.image.tobytes() and a.target.tobytes() == b.target.tobytes()
    assert not np.array_equal(a.image, s.image)
    assert set(np.unique(a.target)) <= {0, 1}


def test_augment_target_follows_labels():
    s = phantom_slice(2, size=32, task="core")
    out = augment(s, AugmentationSpec(), np.random.default_rng(0))
    assert np.array_equal(out.target, np.isin(out.labels, (1, 3, 4)).astype(np.uint8))


def test_foreground_ratio_bounded():
    spec = AugmentationSpec()
    ratios = []
    for seed in range(3):
        s = phantom_slice(seed)
        before = s.target.sum()
        for i in range(334):
            _, tgt = augment_arrays(s.image, s.target, spec, np.random.default_rng([seed, i]))
            ratios.append(tgt.sum() / before)
    ratios = np.array(ratios)
    assert ratios.size >= 1000
    assert ratios.min() >= 0.5 and ratios.max() <= 2.0
