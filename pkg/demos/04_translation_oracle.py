"""
Checking the smoothing shortcut against brute force
===================================================

The TI attacks replace the gradient of a loss averaged over many translated
images with one kernel-smoothed gradient. Here both are computed and compared,
first on a model where the shortcut is exact, then on a trained CNN.
"""

from pathlib import Path

import numpy as np

from tiattack import LinearSumModel, compare, load_bundled_mnist, load_model, loss_surface, make_kernel

test = load_bundled_mnist("test").subset(20)
x, y = test.images, test.labels

# a model that only sees pixel sums cannot tell circular shifts apart
rng = np.random.default_rng(0)
lin = LinearSumModel(rng.normal(scale=0.01, size=(10, 1)), rng.normal(size=10), input_shape=(1, 28, 28))
for kind in ("uniform", "linear", "gaussian"):
    rep = compare(lin, x, y, make_kernel(kind, 3), mode="circular")
    print(f"linear-sum {kind:8s} cosine {rep.cosine:.12f} max abs error {rep.max_abs_error:.2e}")

zoo = Path(__file__).resolve().parents[1] / "zoo" / "cnn-s1"
if not zoo.is_dir():
    raise SystemExit("train the zoo first: tiattack train --zoo zoo")
cnn = load_model(zoo)

# a real CNN is only roughly shift invariant, so the shortcut is approximate
for k in (1, 2, 3):
    rep = compare(cnn, x, y, make_kernel("gaussian", k))
    print(f"cnn-s1 gaussian k={k} cosine {rep.cosine:.4f}  per-image mean {rep.mean_image_cosine:.4f}")

batch = load_bundled_mnist("test").subset(200)
surface = loss_surface(cnn, batch.images, batch.labels, k=10)
print("loss at the centre", round(float(surface.grid[10, 10]), 4))
print("loss two pixels right", round(float(surface.grid[10, 12]), 4))
print("worst relative change over +-10 px", round(surface.max_relative_deviation(), 2))
