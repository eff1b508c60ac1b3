import numpy as np
import pytest

from tumorseg.augment import AugmentationSpec
from tumorseg.data import SliceSample
from tumorseg.gradcheck import grad_check
from tumorseg.metrics import confusion, dsc
from tumorseg.optim import Adam, TrainConfig, soft_dice_loss, train, write_loss_log
from tumorseg.tensor import Graph, ShapeError
from tumorseg.unet import UNetConfig, build_unet


def hard_probs(mask):
    mask = np.asarray(mask, np.float64)
    return np.stack([1 - mask, mask], axis=1)


def test_perfect_prediction_loss_near_zero():
    g = (np.random.default_rng(0).random((2, 32, 32)) < 0.3).astype(np.uint8)
    assert soft_dice_loss(hard_probs(g), g).item() < 1e-3


def test_half_probability_half_target():
    g = np.zeros((1, 40, 40), np.uint8)
    g[:, :20] = 1
    p = np.full((1, 2, 40, 40), 0.5)
    assert soft_dice_loss(p, g, smooth=0.0).item() == pytest.approx(1 / 3, abs=1e-12)
    assert soft_dice_loss(p, g).item() == pytest.approx(1 / 3, abs=1e-3)


def test_empty_empty_loss_zero():
    p = hard_probs(np.zeros((1, 8, 8)))
    assert soft_dice_loss(p, np.zeros((1, 8, 8), np.uint8)).item() == 0.0


def test_loss_bounds():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        n, h, w = rng.integers(1, 4), rng.integers(1, 9), rng.integers(1, 9)
        fg = rng.random((n, h, w)) ** rng.uniform(0.2, 5)
        p = np.stack([1 - fg, fg], axis=1)
        g = (rng.random((n, h, w)) < rng.random()).astype(np.uint8)
        loss = soft_dice_loss(p, g).item()
        assert 0.0 <= loss <= 1.0


def test_loss_matches_dsc_on_hard_predictions():
    # the smoothing term shifts 1 - loss by (1 - dsc) / (|A| + |B| + 1), so the
    # 1e-3 link holds once the two masks together cover 10^3 voxels
    rng = np.random.default_rng(2)
    for _ in range(50):
        pred = rng.random((2, 32, 32)) < rng.uniform(0.3, 0.7)
        truth = rng.random((2, 32, 32)) < rng.uniform(0.3, 0.7)
        assert pred.sum() + truth.sum() >= 1000
        loss = soft_dice_loss(hard_probs(pred), truth.astype(np.uint8)).item()
        assert abs((1 - loss) - dsc(confusion(pred, truth))) < 1e-3


def test_loss_is_smoothed_dice_on_hard_predictions():
    rng = np.random.default_rng(3)
    for _ in range(200):
        pred = rng.random((1, 4, 4)) < rng.random()
        truth = rng.random((1, 4, 4)) < rng.random()
        c = confusion(pred, truth)
        expected = (2 * c.tp + 1) / (2 * c.tp + c.fp + c.fn + 1)
        loss = soft_dice_loss(hard_probs(pred), truth.astype(np.uint8)).item()
        assert abs((1 - loss) - expected) < 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_loss_gradient(seed):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.05, 0.95, (2, 2, 3, 3))
    g = (rng.random((2, 3, 3)) < 0.5).astype(np.uint8)
    err = grad_check(lambda t: soft_dice_loss(t["p"], g), {"p": p})
    assert err < 1e-5


def test_loss_input_validation():
    with pytest.raises(ShapeError):
        soft_dice_loss(np.zeros((1, 3, 4, 4)), np.zeros((1, 4, 4)))
    with pytest.raises(ShapeError):
        soft_dice_loss(np.zeros((1, 2, 4, 4)), np.zeros((1, 4, 5)))
    with pytest.raises(ValueError):
        soft_dice_loss(np.zeros((1, 2, 2, 2)), np.full((1, 2, 2), 2))


def test_loss_records_on_graph():
    graph = Graph()
    p = graph.parameter("p", np.full((1, 2, 2, 2), 0.5))
    grads = graph.backward(soft_dice_loss(p, np.ones((1, 2, 2), np.uint8)))
    assert np.all(grads["p"][:, 0] == 0) and np.all(grads["p"][:, 1] < 0)


def test_adam_first_step():
    params = {"w": np.zeros(1)}
    Adam(lr=1e-4).step(params, {"w": np.ones(1)})
    assert params["w"][0] == pytest.approx(-1e-4, rel=1e-7)


def test_adam_zero_gradient_keeps_params():
    params = {"w": np.array([1.5, -2.0])}
    Adam().step(params, {"w": np.zeros(2)})
    assert params["w"].tolist() == [1.5, -2.0]


def test_adam_scale_invariant():
    g = np.random.default_rng(0).normal(size=5)
    a, b = {"w": np.zeros(5)}, {"w": np.zeros(5)}
    Adam().step(a, {"w": g})
    Adam().step(b, {"w": 37.0 * g})
    np.testing.assert_allclose(a["w"], b["w"], rtol=1e-6)


def test_adam_l2_and_shapes():
    params = {"w": np.ones(2)}
    Adam(l2_lambda=0.5).step(params, {"w": np.zeros(2)})
    assert np.all(params["w"] < 1)
    with pytest.raises(ShapeError):
        Adam().step({"w": np.ones(2)}, {"w": np.ones(3)})
    with pytest.raises(ValueError):
        Adam(lr=-1)


def tiny_samples(n=6, size=16, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        img = rng.normal(size=(size, size)).astype(np.float32)
        out.append(SliceSample(img, (img > 0.5).astype(np.uint8), "x", i))
    return out


def test_train_zero_lr_leaves_params():
    model = build_unet(UNetConfig(2, 4, input_size=(16, 16)), seed=0)
    before = {k: v.copy() for k, v in model.params.items()}
    train(model, tiny_samples(), AugmentationSpec(), TrainConfig(learning_rate=0.0, max_epochs=2))
    for k in before:
        assert model.params[k].tobytes() == before[k].tobytes()


def test_train_deterministic(tmp_path):
    cfg = UNetConfig(2, 4, input_size=(16, 16), dropout_rate=0.2)
    runs = []
    for i in range(2):
        model = build_unet(cfg, seed=1)
        hist = train(model, tiny_samples(), AugmentationSpec(), TrainConfig(1e-3, 3, 2, seed=5))
        write_loss_log(hist, tmp_path / f"loss{i}.csv", include_time=False)
        runs.append((hist, model))
    assert [h.mean_loss for h in runs[0][0]] == [h.mean_loss for h in runs[1][0]]
    assert (tmp_path / "loss0.csv").read_bytes() == (tmp_path / "loss1.csv").read_bytes()
    assert runs[0][1].flat().tobytes() == runs[1][1].flat().tobytes()


def test_train_rejects_bad_input():
    model = build_unet(UNetConfig(2, 4, input_size=(16, 16)))
    with pytest.raises(ValueError, match="empty"):
        train(model, [], None, TrainConfig())
    with pytest.raises(ValueError, match="max_epochs"):
        train(model, tiny_samples(), None, TrainConfig(max_epochs=0))


def test_loss_log_format(tmp_path):
    model = build_unet(UNetConfig(2, 4, input_size=(16, 16)))
    hist = train(model, tiny_samples(), None, TrainConfig(max_epochs=2))
    write_loss_log(hist, tmp_path / "a.csv")
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == "epoch,mean_loss,wall_seconds"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["1", "2"]
    assert float(lines[1].split(",")[1]) == hist[0].mean_loss


def test_overfit_window_means_non_increasing(overfit_run):
    losses = np.array([h.mean_loss for h in overfit_run["history"]])
    windows = losses.reshape(-1, 20).mean(axis=1)
    assert np.all(np.diff(windows) <= 0), windows
