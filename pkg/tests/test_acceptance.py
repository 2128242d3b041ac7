"""One test per acceptance criterion; each prints a PASS/FAIL line.

Criteria 8 to 10 and 12 need the trained zoo in ``zoo/`` and are marked slow.
"""

import time
from fractions import Fraction

import mpmath
import numpy as np
import pytest

from conftest import ROOT
from tiattack.attacks import AttackConfig, attack, l2_epsilon, smooth_gradient
from tiattack.datasets import load_bundled_mnist
from tiattack.harness import ExperimentPlan, kernel_size_sweep, run_plan
from tiattack.kernels import make_kernel
from tiattack.models import LinearSumModel, TinyCnn, fuse_logits, loss, loss_and_input_grad, train
from tiattack.oracle import ensemble_gradient
from tiattack.tensor import conv2d_same, shift

KINDS = ("uniform", "linear", "gaussian")
METHODS = ("FGSM", "BIM", "MIFGSM", "DIM")
PLANS = ROOT / "plans"


def reference_value(kind, k, i, j):
    if kind == "uniform":
        return Fraction(1, (2 * k + 1) ** 2)
    if kind == "linear":
        tri = [Fraction(k + 1 - abs(t), k + 1) for t in range(-k, k + 1)]
        s = sum(tri)
        return tri[k + i] / s * tri[k + j] / s
    mpmath.mp.dps = 40
    sigma2 = mpmath.mpf(k) ** 2 / 3
    w = lambda t: mpmath.e ** (-mpmath.mpf(t) ** 2 / (2 * sigma2))  # noqa: E731
    s = sum(w(t) for t in range(-k, k + 1))
    return w(i) * w(j) / s**2


def same(a, b):
    return a.x_adv.tobytes() == b.x_adv.tobytes() and a.loss_trace.tobytes() == b.loss_trace.tobytes()


def test_criterion_01_kernel_suite(verdict):
    t0 = time.perf_counter()
    worst_sum, symmetric = 0.0, True
    for kind in KINDS:
        for k in range(11):
            m = make_kernel(kind, k).matrix
            worst_sum = max(worst_sum, abs(m.sum() - 1.0))
            symmetric &= bool(np.array_equal(m, m[::-1, ::-1]))
    elapsed = time.perf_counter() - t0
    worst_k1 = max(
        abs(make_kernel(kind, 1).matrix[1 + i, 1 + j] - float(reference_value(kind, 1, i, j)))
        for kind in KINDS for i in (-1, 0, 1) for j in (-1, 0, 1)
    )
    ok = worst_sum <= 1e-12 and symmetric and worst_k1 <= 1e-9 and elapsed < 1.0
    verdict(1, "kernel suite", ok, f"sum err {worst_sum:.1e}, k=1 err {worst_k1:.1e}, {elapsed:.3f}s")


def test_criterion_02_convolution_identity(verdict):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        h, w = rng.integers(5, 30, size=2)
        kh = 2 * rng.integers(0, (min(h, w) - 1) // 2 + 1) + 1
        kw = 2 * rng.integers(0, (min(h, w) - 1) // 2 + 1) + 1
        t = rng.normal(size=(rng.integers(1, 3), rng.integers(1, 4), h, w))
        K = rng.normal(size=(kh, kw))
        ref = sum(K[a, b] * shift(t, -(a - kh // 2), -(b - kw // 2)) for a in range(kh) for b in range(kw))
        worst = max(worst, np.abs(conv2d_same(t, K) - ref).max())
    elapsed = time.perf_counter() - t0
    verdict(2, "convolution equals shift-and-sum", worst <= 1e-9 and elapsed < 10, f"max err {worst:.1e}, {elapsed:.2f}s")


def test_criterion_03_ensemble_exactness(verdict):
    rng = np.random.default_rng(3)
    model = LinearSumModel(rng.normal(scale=0.01, size=(10, 1)), rng.normal(size=10), input_shape=(1, 28, 28))
    data = load_bundled_mnist("test").subset(20)
    _, g = loss_and_input_grad(model, data.images, data.labels)
    t0 = time.perf_counter()
    worst = 0.0
    for kind in KINDS:
        for k in range(6):
            K = make_kernel(kind, k)
            exact = ensemble_gradient(model, data.images, data.labels, K, "circular")
            worst = max(worst, np.abs(exact - smooth_gradient(g, K, "circular")).max())
    elapsed = time.perf_counter() - t0
    verdict(3, "ensemble gradient equals smoothed gradient", worst <= 1e-9 and elapsed < 30, f"max err {worst:.1e}, {elapsed:.1f}s")


def _shift_matrix(h, w, i, j, mode):
    m = np.zeros((h * w, h * w))
    for a in range(h):
        for b in range(w):
            sa, sb = a - i, b - j
            if mode == "circular":
                sa, sb = sa % h, sb % w
            elif not (0 <= sa < h and 0 <= sb < w):
                continue
            m[a * w + b, sa * w + sb] = 1.0
    return m


def test_criterion_04_chain_rule_adjoint(verdict):
    rng = np.random.default_rng(4)
    model = TinyCnn(seed=4)
    data = load_bundled_mnist("test").subset(4)
    x, y = data.images, data.labels
    worst = 0.0
    for n in range(20):
        i, j = (int(v) for v in rng.integers(-10, 11, size=2))
        mode = ("zero", "circular")[n % 2]
        S = _shift_matrix(28, 28, i, j, mode)
        _, g = loss_and_input_grad(model, shift(x, i, j, mode), y)
        through_shift = (g.reshape(len(x), -1) @ S).reshape(x.shape)  # backprop through the linear map
        worst = max(worst, np.abs(through_shift - shift(g, -i, -j, mode)).max())
    verdict(4, "chain-rule adjoint of shift", worst <= 1e-9, f"max err {worst:.1e}")


def _fd_relative_error(model, x, y, rng):
    _, g = loss_and_input_grad(model, x, y)
    h = 1e-5
    fd, bp = [], []
    for _ in range(50):
        idx = tuple(int(rng.integers(0, s)) for s in x.shape)
        n = idx[0]
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        fd.append((loss(model, xp[n : n + 1], y[n : n + 1])[0] - loss(model, xm[n : n + 1], y[n : n + 1])[0]) / (2 * h))
        bp.append(g[idx])
    return np.linalg.norm(np.subtract(fd, bp)) / np.linalg.norm(bp)


def test_criterion_05_finite_differences(verdict):
    # random interior inputs: MNIST's exact-zero background sits on ReLU kinks
    # where a central difference averages two one-sided slopes
    rng = np.random.default_rng(5)
    x = rng.random((4, 1, 28, 28))
    y = rng.integers(0, 10, size=4)
    cnn_a, cnn_b = TinyCnn(seed=5), TinyCnn(seed=6)
    models = {
        "TinyCnn": cnn_a,
        "TinyCnn stride-1": TinyCnn(channels=(8, 16), strides=(1, 1), seed=7),
        "LinearSumModel": LinearSumModel(rng.normal(scale=0.01, size=(10, 1)), rng.normal(size=10), (1, 28, 28)),
        "fused": fuse_logits([cnn_a, cnn_b], [0.4, 0.6]),
    }
    errs = {name: _fd_relative_error(m, x, y, rng) for name, m in models.items()}
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
    verdict(5, "finite differences vs backprop", max(errs.values()) < 1e-6, detail)


def _degeneracies(model, x, y, norm, eps):
    base = dict(norm=norm, epsilon=eps, seed=11)
    k0 = make_kernel("gaussian", 0)
    failed = []
    for method in METHODS:
        if not same(attack(model, x, y, AttackConfig(method=method, **base)),
                    attack(model, x, y, AttackConfig(method=method, kernel=k0, **base))):
            failed.append(f"TI-{method}")
    bim = attack(model, x, y, AttackConfig(method="BIM", **base))
    if not same(attack(model, x, y, AttackConfig(method="MIFGSM", mu=0.0, **base)), bim):
        failed.append("MI(mu=0)")
    if not same(attack(model, x, y, AttackConfig(method="DIM", mu=0.0, dim_prob=0.0, **base)), bim):
        failed.append("DIM(p=0,mu=0)")
    fgsm = attack(model, x, y, AttackConfig(method="FGSM", **base))
    if not same(fgsm, attack(model, x, y, AttackConfig(method="BIM", iterations=1, alpha=eps, **base))):
        failed.append("FGSM")
    return failed


def _mnist_batch(n=50):
    data = load_bundled_mnist("test").subset(n)
    return data.images, data.labels


def test_criterion_06_degeneracies(verdict):
    x, y = _mnist_batch()
    failed = _degeneracies(TinyCnn(seed=1), x, y, "linf", 16 / 255)
    verdict(6, "degeneracy equalities (linf)", not failed, "all bit-exact" if not failed else f"failed: {failed}")


def _random_runs(norm, count):
    rng = np.random.default_rng(7 if norm == "linf" else 11)
    model = TinyCnn(input_shape=(1, 12, 12), channels=(4, 6), strides=(1, 2), seed=2)
    d = 144
    violations = 0
    for run in range(count):
        x = rng.random((2, 1, 12, 12))
        if rng.random() < 0.2:
            x = np.round(x)  # many pixels on the bounds
        y = rng.integers(0, 10, size=2)
        kernel = None if rng.random() < 0.3 else make_kernel(KINDS[rng.integers(3)], int(rng.integers(0, 6)))
        eps = float(rng.uniform(0, 0.5)) if norm == "linf" else l2_epsilon(d) * float(rng.uniform(0.2, 2.0))
        cfg = AttackConfig(
            method=METHODS[rng.integers(4)], kernel=kernel, norm=norm, epsilon=eps,
            iterations=int(rng.integers(1, 6)), mu=float(rng.choice([0.0, 0.5, 1.0])),
            dim_prob=float(rng.uniform()), seed=run,
        )
        res = attack(model, x, y, cfg)
        delta = (res.x_adv - x).reshape(2, -1)
        size = np.abs(delta).max(axis=1) if norm == "linf" else np.linalg.norm(delta, axis=1)
        violations += int(np.any(size > eps + 1e-9) or res.x_adv.min() < 0 or res.x_adv.max() > 1)
    return violations


def test_criterion_07_constraints(verdict):
    v = _random_runs("linf", 1000)
    verdict(7, "constraint satisfaction, 1000 linf runs", v == 0, f"{v} violations")


@pytest.mark.slow
def test_criterion_08_white_box(verdict, fixture_values):
    data = load_bundled_mnist("train")
    test = load_bundled_mnist("test")
    result = train(TinyCnn(), data, epochs=30, lr=0.05, seed=1, batch_size=32, momentum=0.9, lr_drop_epoch=20, test_data=test)
    adv = attack(result.model, test.images, test.labels, AttackConfig(method="BIM", epsilon=0.3, iterations=10, alpha=0.03))
    rate = float(adv.success.mean())
    assert rate == fixture_values["bim_white_box"]["success_rate"]
    ok = result.test_accuracy >= 0.95 and rate >= 0.95
    verdict(8, "white-box efficacy", ok, f"test acc {result.test_accuracy:.3f}, BIM success {rate:.3f} on {len(adv.success)}")


@pytest.mark.slow
def test_criterion_09_transfer_margin(verdict, zoo, fixture_values):
    report = run_plan(ExperimentPlan.load(PLANS / "transfer.json"))
    ti = report.rate("cnn-s2", "TI-MI-FGSM", "cnn-s1-shift3")
    mi = report.rate("cnn-s2", "MI-FGSM", "cnn-s1-shift3")
    margin = ti - mi
    assert margin == pytest.approx(fixture_values["transfer"]["margin"], abs=1e-12)
    verdict(9, "TI-MI-FGSM beats MI-FGSM on shift-augmented target", margin > 0, f"{ti:.3f} vs {mi:.3f}, margin {margin:+.3f}")


@pytest.mark.slow
def test_criterion_10_sweep_shape(verdict, zoo, fixture_values):
    report = kernel_size_sweep(ExperimentPlan.load(PLANS / "sweep.json"), range(11))
    by_k = {r.k: r.success_rate for r in report.rows}
    assert [by_k[k] for k in range(11)] == fixture_values["sweep"]["success_by_k"]
    mid = np.mean([by_k[k] for k in range(3, 8)])
    low = np.mean([by_k[0], by_k[1]])
    verdict(10, "kernel-size sweep rises from k=0", mid >= low, f"mean k3..7 {mid:.3f} vs k0..1 {low:.3f}")


def test_criterion_11_l2_suite(verdict):
    x, y = _mnist_batch()
    failed = _degeneracies(TinyCnn(seed=1), x, y, "l2", l2_epsilon(784))
    v = _random_runs("l2", 1000)
    ok = not failed and v == 0
    verdict(11, "L2 degeneracies and constraints", ok, f"degeneracy failures {failed or 'none'}, {v} violations in 1000 runs")


@pytest.mark.slow
def test_criterion_12_reproducibility(verdict, zoo, tmp_path):
    identical = True
    for name in ("transfer.json", "ensemble_l2.json"):
        runs = []
        for attempt in range(2):
            plan = ExperimentPlan.load(PLANS / name)
            plan.output_dir = tmp_path / f"{name}-{attempt}"
            run_plan(plan)
            runs.append((plan.output_dir / "report.csv").read_bytes())
        identical &= runs[0] == runs[1]
    verdict(12, "plan reruns give byte-identical CSV", identical, "transfer.json, ensemble_l2.json")
