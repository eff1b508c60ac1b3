import time

import numpy as np
import pytest

from tumorseg.data import extract_slices, generate_phantom
from tumorseg.metrics import confusion, dsc
from tumorseg.optim import TrainConfig, train
from tumorseg.unet import UNetConfig, build_unet, predict_mask


def overfit_samples():
    """20 slices of 64x64: planes 6..10 of four seeded phantoms."""
    samples = []
    for seed in range(4):
        vols, labels = generate_phantom((64, 64, 16), seed=seed)
        samples += [s for s in extract_slices(vols, labels, "complete", f"p{seed}")
                    if 6 <= s.index <= 10]
    return samples


@pytest.fixture(scope="session")
def overfit_run():
    """Train the 3-block, base-8 network on the fixture once per session."""
    samples = overfit_samples()
    model = build_unet(UNetConfig(3, 8, input_size=(64, 64)), seed=0)
    start = time.perf_counter()
    history = train(model, samples, None, TrainConfig(learning_rate=1e-3, max_epochs=200))
    seconds = time.perf_counter() - start
    pred = predict_mask(model, np.stack([s.image for s in samples]))
    score = dsc(confusion(pred, np.stack([s.target for s in samples])))
    return {"samples": samples, "history": history, "seconds": seconds, "dsc": score}


_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line: criterion(ok, detail) then assert ok."""
    name = request.node.name.removeprefix("test_")

    def record(ok: bool, detail: str):
        _ACCEPTANCE.append((name, bool(ok), detail))
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
