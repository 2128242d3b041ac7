import json
from pathlib import Path

import numpy as np
import pytest

from tiattack.models import LinearSumModel, TinyCnn, load_model

ROOT = Path(__file__).resolve().parents[1]
ZOO = ROOT / "zoo"
FIXTURES = Path(__file__).resolve().parent / "fixtures"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_cnn():
    # untrained, so the loss is not saturated and finite differences stay well conditioned
    return TinyCnn(num_classes=10, input_shape=(1, 12, 12), channels=(4, 6), strides=(1, 2), seed=3)


@pytest.fixture(scope="session")
def linear_model():
    r = np.random.default_rng(7)
    return LinearSumModel(r.normal(scale=0.05, size=(5, 2)), r.normal(size=5), input_shape=(2, 10, 10))


@pytest.fixture(scope="session")
def zoo():
    if not (ZOO / "zoo.json").is_file():
        pytest.skip("trained zoo missing; run `tiattack train --zoo zoo`")
    return {p.name: load_model(p) for p in sorted(ZOO.iterdir()) if (p / "manifest.txt").is_file()}


@pytest.fixture(scope="session")
def fixture_values():
    return json.loads((FIXTURES / "values.json").read_text())


def band_dataset(n, seed, size=12):
    """Three-class toy images: class c has a bright horizontal band in rows 4c..4c+3."""
    from tiattack.datasets import LabeledDataset

    r = np.random.default_rng(seed)
    y = r.integers(0, 3, size=n)
    x = r.random((n, 1, size, size)) * 0.3
    for c in range(3):
        x[y == c, 0, 4 * c : 4 * c + 4, :] += 0.6
    return LabeledDataset(np.clip(x, 0, 1), y)


@pytest.fixture(scope="session")
def toy_world(tmp_path_factory):
    """IDX files plus three small trained models on disk, for plan and CLI tests."""
    from tiattack.datasets import write_idx
    from tiattack.models import save_model, train

    root = tmp_path_factory.mktemp("toy")
    data = band_dataset(120, seed=0)
    write_idx(root / "images.idx", np.rint(data.images[:, 0] * 255).astype(np.uint8))
    write_idx(root / "labels.idx", data.labels.astype(np.uint8))
    models = {}
    for seed in (1, 2, 3):
        net = TinyCnn(num_classes=3, input_shape=(1, 12, 12), channels=(4, 6), strides=(1, 2))
        res = train(net, band_dataset(200, seed=10 + seed), epochs=4, lr=0.1, seed=seed, batch_size=16)
        save_model(res.model, root / f"m{seed}")
        models[f"m{seed}"] = f"m{seed}"
    return root, models


def toy_plan(models, **extra):
    plan = {
        "dataset": {"images": "images.idx", "labels": "labels.idx"},
        "models": models,
        "attacks": [{"method": "FGSM", "epsilon": 0.1}, {"method": "MIFGSM", "epsilon": 0.1, "kernel": {"kind": "gaussian", "k": 1}}],
        "sources": ["m1"],
        "targets": ["m1", "m2", "m3"],
        "samples": 60,
        "seed": 0,
        "input_dim": 144,
    }
    plan.update(extra)
    return plan


_ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number, name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {name}" + (f"  [{detail}]" if detail else "")
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
