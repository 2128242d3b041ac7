"""
A small CNN on MNIST, written in numpy
======================================

Trains one TinyCnn on the bundled MNIST subset (4,500 train / 500 test
images) and verifies its input gradient with central differences.
Pass ``--quick`` for a 3-epoch run.
"""

import sys

import numpy as np

from tiattack import TinyCnn, load_bundled_mnist, loss, loss_and_input_grad, train

quick = "--quick" in sys.argv
train_set = load_bundled_mnist("train")
test_set = load_bundled_mnist("test")
print("train", train_set.images.shape, "test", test_set.images.shape)

net = TinyCnn()
print("parameters:", {k: v.shape for k, v in net.params.items()})

result = train(
    net, train_set,
    epochs=3 if quick else 30,
    lr=0.05, seed=1, batch_size=32, lr_drop_epoch=None if quick else 20,
    test_data=test_set, log=print,
)
print("test accuracy", result.test_accuracy)

# central differences on a few random pixels of a few test images
x, y = test_set.images[:4], test_set.labels[:4]
_, g = loss_and_input_grad(result.model, x, y)
rng = np.random.default_rng(0)
h = 1e-5
for _ in range(5):
    n, a, b = rng.integers(4), rng.integers(28), rng.integers(28)
    xp, xm = x.copy(), x.copy()
    xp[n, 0, a, b] += h
    xm[n, 0, a, b] -= h
    fd = (loss(result.model, xp[n : n + 1], y[n : n + 1])[0] - loss(result.model, xm[n : n + 1], y[n : n + 1])[0]) / (2 * h)
    print(f"pixel ({a:2d},{b:2d}) of image {n}: backprop {g[n, 0, a, b]: .6e}  finite diff {fd: .6e}")
