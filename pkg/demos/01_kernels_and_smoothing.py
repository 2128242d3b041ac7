"""
Translation kernels and gradient smoothing
==========================================

Builds the three kernel families, checks that they are normalised, and shows
that smoothing a gradient is the same as averaging shifted copies of it.
"""

import numpy as np

from tiattack import make_kernel, shift, smooth_gradient

np.set_printoptions(precision=4, suppress=True)

# the k=1 kernels are small enough to read
for kind in ("uniform", "linear", "gaussian"):
    K = make_kernel(kind, 1)
    print(kind)
    print(K.matrix)
    print("sum:", K.matrix.sum())

# a 15x15 Gaussian, the default for the TI attacks
K = make_kernel("gaussian", 7)
print("gaussian-15 centre weight", K.matrix[7, 7], "corner weight", K.matrix[0, 0])

rng = np.random.default_rng(0)
g = rng.normal(size=(1, 1, 28, 28))

# explicit average over every shift the kernel covers
k = K.k
by_hand = sum(K.matrix[k + i, k + j] * shift(g, -i, -j) for i in range(-k, k + 1) for j in range(-k, k + 1))
fast = smooth_gradient(g, K)
print("max difference, shift-sum vs convolution:", np.abs(by_hand - fast).max())

# smoothing kills high frequencies, so the sign pattern becomes blocky
print("sign changes along a row before:", int(np.sum(np.diff(np.sign(g[0, 0, 14])) != 0)))
print("sign changes along a row after: ", int(np.sum(np.diff(np.sign(fast[0, 0, 14])) != 0)))
