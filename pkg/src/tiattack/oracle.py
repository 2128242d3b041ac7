"""Brute-force checks of the gradient-smoothing shortcut.

:func:`ensemble_gradient` differentiates the weighted sum of losses over all
``(2k+1)^2`` translated copies of the input, one backward pass per
translation. :func:`compare` sets it against the single-gradient smoothing
used by the attacks.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass

import numpy as np

from .attacks import smooth_gradient
from .kernels import Kernel
from .models import Classifier, loss, loss_and_input_grad
from .tensor import ShiftMode, shift


def _offsets(k: int):
    for i in range(-k, k + 1):
        for j in range(-k, k + 1):
            yield i, j


def ensemble_gradient(
    model: Classifier, x: np.ndarray, y, kernel: Kernel, mode: ShiftMode | str = ShiftMode.ZERO
) -> np.ndarray:
    """Gradient of ``sum_ij w_ij J(T_ij(x), y)``, evaluating every translation explicitly."""
    mode = ShiftMode(mode)
    k = kernel.k
    if k >= min(x.shape[-2:]):
        raise ValueError(f"kernel half-width {k} must be smaller than the image")
    total = None
    for i, j in _offsets(k):
        w = kernel.matrix[k + i, k + j]
        _, g = loss_and_input_grad(model, shift(x, i, j, mode), y)
        term = w * shift(g, -i, -j, mode)
        total = term if total is None else total + term
    return total


def translated_objective(
    model: Classifier, x: np.ndarray, y, kernel: Kernel, mode: ShiftMode | str = ShiftMode.ZERO
) -> np.ndarray:
    """``sum_ij w_ij J(T_ij(x), y)`` per item."""
    k = kernel.k
    total = np.zeros(len(x))
    for i, j in _offsets(k):
        total = total + kernel.matrix[k + i, k + j] * loss(model, shift(x, i, j, mode), y)
    return total


@dataclass
class ApproximationReport:
    cosine: float
    mean_image_cosine: float
    max_abs_error: float
    relative_l2_error: float
    kernel_kind: str
    k: int
    shift_mode: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2) + "\n"


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 and nb == 0:
        return 1.0  # two vanishing gradients agree
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def compare(
    model: Classifier, x: np.ndarray, y, kernel: Kernel, mode: ShiftMode | str = ShiftMode.ZERO
) -> ApproximationReport:
    """How far the smoothed single gradient is from the exact translated-ensemble gradient."""
    mode = ShiftMode(mode)
    exact = ensemble_gradient(model, x, y, kernel, mode)
    _, g = loss_and_input_grad(model, x, y)
    approx = smooth_gradient(g, kernel, mode)
    diff = exact - approx
    ref = np.linalg.norm(exact)
    rel = float(np.linalg.norm(diff) / ref) if ref > 0 else float(np.linalg.norm(diff) > 0)
    per_image = [_cosine(e.ravel(), a.ravel()) for e, a in zip(exact, approx)]
    return ApproximationReport(
        cosine=_cosine(exact.ravel(), approx.ravel()),
        mean_image_cosine=float(np.mean(per_image)),
        max_abs_error=float(np.abs(diff).max()),
        relative_l2_error=rel,
        kernel_kind=kernel.kind.value,
        k=kernel.k,
        shift_mode=mode.value,
    )


@dataclass
class LossSurface:
    grid: np.ndarray  # grid[k + i, k + j] = mean loss of the batch translated by (i, j)
    k: int
    model_id: str

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("shift_i," + ",".join(f"j={j}" for j in range(-self.k, self.k + 1)) + "\n")
        for row, i in zip(self.grid, range(-self.k, self.k + 1)):
            buf.write(f"{i}," + ",".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue()

    def max_relative_deviation(self) -> float:
        centre = self.grid[self.k, self.k]
        return float(np.abs(self.grid - centre).max() / abs(centre)) if centre else float("inf")


def loss_surface(
    model: Classifier,
    x: np.ndarray,
    y,
    k: int = 10,
    mode: ShiftMode | str = ShiftMode.ZERO,
    model_id: str = "model",
) -> LossSurface:
    """Mean raw cross-entropy of the batch at every translation in ``[-k, k]^2``."""
    grid = np.zeros((2 * k + 1, 2 * k + 1))
    for i, j in _offsets(k):
        grid[k + i, k + j] = loss(model, shift(x, i, j, mode), y).mean()
    return LossSurface(grid, k, model_id)
