"""Translation weight matrices for gradient smoothing.

``Kernel.matrix[k + i, k + j]`` holds the weight given to the image
translated by ``(i, j)``. All three kinds are centrally symmetric, so the
matrix is the same whether it is read as a correlation or a convolution
kernel.
"""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass

import numpy as np


class KernelKind(str, enum.Enum):
    UNIFORM = "uniform"
    LINEAR = "linear"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True, eq=False)
class Kernel:
    kind: KernelKind
    k: int
    matrix: np.ndarray

    @property
    def size(self) -> int:
        return 2 * self.k + 1

    def __repr__(self) -> str:
        return f"Kernel({self.kind.value}, k={self.k})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, Kernel):
            return NotImplemented
        return self.kind is other.kind and self.k == other.k and np.array_equal(self.matrix, other.matrix)

    def __hash__(self) -> int:
        return hash((self.kind, self.k))


def _check_k(k) -> int:
    if int(k) != k or k < 0:
        raise ValueError(f"kernel half-width must be a non-negative integer, got {k!r}")
    return int(k)


def _offsets(k: int) -> np.ndarray:
    return np.arange(-k, k + 1, dtype=np.float64)


def _frozen(kind: KernelKind, k: int, m: np.ndarray) -> Kernel:
    m.setflags(write=False)
    return Kernel(kind, k, m)


def uniform_kernel(k: int) -> Kernel:
    k = _check_k(k)
    n = 2 * k + 1
    return _frozen(KernelKind.UNIFORM, k, np.full((n, n), 1.0 / n**2))


def linear_kernel(k: int) -> Kernel:
    k = _check_k(k)
    profile = 1.0 - np.abs(_offsets(k)) / (k + 1)
    m = np.outer(profile, profile)
    return _frozen(KernelKind.LINEAR, k, m / m.sum())


def gaussian_kernel(k: int) -> Kernel:
    """Gaussian weights sampled on the integer lattice with ``sigma = k / sqrt(3)``.

    ``k = 0`` has no defined sigma and returns the 1x1 identity kernel, so a
    zero-width Gaussian degenerates to the unsmoothed attack like the other
    kinds do.
    """
    k = _check_k(k)
    if k == 0:
        return _frozen(KernelKind.GAUSSIAN, 0, np.ones((1, 1)))
    sigma = k / math.sqrt(3.0)
    x = _offsets(k)
    sq = x[:, None] ** 2 + x[None, :] ** 2
    # the 1/(2 pi sigma^2) prefactor cancels in the normalisation
    m = np.exp(-sq / (2.0 * sigma**2))
    return _frozen(KernelKind.GAUSSIAN, k, m / m.sum())


_BUILDERS = {
    KernelKind.UNIFORM: uniform_kernel,
    KernelKind.LINEAR: linear_kernel,
    KernelKind.GAUSSIAN: gaussian_kernel,
}


def make_kernel(kind: KernelKind | str, k: int) -> Kernel:
    return _BUILDERS[KernelKind(kind)](k)


def kernel_to_csv(kernel: Kernel) -> str:
    buf = io.StringIO()
    for row in kernel.matrix:
        buf.write(",".join(repr(float(v)) for v in row))
        buf.write("\n")
    return buf.getvalue()
