"""FGSM, BIM, MI-FGSM and DIM with optional translation-invariant smoothing.

Passing a :class:`~tiattack.kernels.Kernel` in the config turns any of the
four methods into its TI variant: the input gradient is convolved with the
kernel before the update direction is formed.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .kernels import Kernel, make_kernel
from .models import Classifier, loss, loss_and_input_grad
from .tensor import ShiftMode, as_tensor, conv2d_same, per_item_norm, resize_nearest, resize_nearest_adjoint, save_npy


class Method(str, enum.Enum):
    FGSM = "FGSM"
    BIM = "BIM"
    MIFGSM = "MIFGSM"
    DIM = "DIM"


class Norm(str, enum.Enum):
    LINF = "linf"
    L2 = "l2"


_DISPLAY = {Method.FGSM: "FGSM", Method.BIM: "BIM", Method.MIFGSM: "MI-FGSM", Method.DIM: "DIM"}


def l2_epsilon(d: int, pixels: float = 10.0) -> float:
    """L2 budget ``pixels * sqrt(d)`` on the [0, 255] scale, expressed in [0, 1] units."""
    return pixels / 255.0 * math.sqrt(d)


@dataclass(frozen=True)
class AttackConfig:
    method: Method = Method.MIFGSM
    kernel: Kernel | None = None
    norm: Norm = Norm.LINF
    epsilon: float = 16 / 255
    iterations: int = 10
    alpha: float | None = None  # None means epsilon / iterations
    mu: float = 1.0
    dim_prob: float = 0.7
    dim_resize_low: float = 0.9
    pixel_bounds: tuple[float, float] = (0.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("method", Method(self.method))
        set_("norm", Norm(self.norm))
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.method is Method.FGSM:
            set_("iterations", 1)
            set_("alpha", float(self.epsilon))
        if self.iterations < 1:
            raise ValueError("iterations must be a positive integer")
        if self.alpha is None:
            set_("alpha", float(self.epsilon) / self.iterations)
        if self.alpha <= 0 and self.epsilon > 0:
            raise ValueError("alpha must be positive")
        if self.mu < 0:
            raise ValueError("mu must be non-negative")
        if not 0.0 <= self.dim_prob <= 1.0:
            raise ValueError("dim_prob must lie in [0, 1]")
        if not 0.0 < self.dim_resize_low <= 1.0:
            raise ValueError("dim_resize_low must lie in (0, 1]")
        lo, hi = self.pixel_bounds
        if not lo < hi:
            raise ValueError("pixel_bounds must be an increasing pair")
        set_("pixel_bounds", (float(lo), float(hi)))

    @property
    def uses_momentum(self) -> bool:
        return self.method in (Method.MIFGSM, Method.DIM) and self.mu > 0

    @property
    def label(self) -> str:
        base = _DISPLAY[self.method]
        return f"TI-{base}" if self.kernel is not None else base

    @property
    def kernel_label(self) -> str:
        return "none" if self.kernel is None else f"{self.kernel.kind.value}-{self.kernel.size}"

    def with_kernel(self, kernel: Kernel | None) -> "AttackConfig":
        return replace(self, kernel=kernel)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["method"] = self.method.value
        d["norm"] = self.norm.value
        d["kernel"] = None if self.kernel is None else {"kind": self.kernel.kind.value, "k": self.kernel.k}
        d["pixel_bounds"] = list(self.pixel_bounds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        d = dict(d)
        kernel = d.pop("kernel", None)
        if kernel is not None:
            kernel = make_kernel(kernel["kind"], kernel["k"])
        if "pixel_bounds" in d:
            d["pixel_bounds"] = tuple(d["pixel_bounds"])
        # FGSM derives these; accept echoed values from a previous to_dict()
        if Method(d.get("method", cls.method)) is Method.FGSM:
            d.pop("alpha", None)
            d.pop("iterations", None)
        return cls(kernel=kernel, **d)


@dataclass
class AdversarialResult:
    x_adv: np.ndarray
    perturbation_norm: np.ndarray  # per image, in the configured norm
    success: np.ndarray  # source model misclassifies x_adv
    loss_trace: np.ndarray  # (iterations + 1, n): loss at each iterate, last row at x_adv
    zero_gradient: np.ndarray  # (iterations, n): the (smoothed) gradient vanished
    config: AttackConfig = field(repr=False)


def smooth_gradient(g: np.ndarray, kernel: Kernel | np.ndarray, mode: ShiftMode | str = ShiftMode.ZERO) -> np.ndarray:
    """Convolve each channel of ``g`` with the translation weights.

    Attacks always use zero padding; ``mode`` exists for the circular-shift
    oracle comparison.
    """
    matrix = kernel.matrix if isinstance(kernel, Kernel) else kernel
    return conv2d_same(g, matrix, mode)


def _identity(g: np.ndarray) -> np.ndarray:
    return g


def di_transform(
    x: np.ndarray, cfg: AttackConfig, rng: np.random.Generator
) -> tuple[np.ndarray, Callable[[np.ndarray], np.ndarray]]:
    """Random resize-and-pad applied to the whole batch with probability ``cfg.dim_prob``.

    Returns the transformed batch and the adjoint of the (linear) transform,
    which maps a gradient on the output back onto ``x``.
    """
    if rng.random() >= cfg.dim_prob:
        return x, _identity
    h, w = x.shape[-2:]
    rh = int(rng.integers(round(cfg.dim_resize_low * h), h + 1))
    rw = rh if h == w else max(1, round(rh * w / h))
    top = int(rng.integers(0, h - rh + 1))
    left = int(rng.integers(0, w - rw + 1))
    if rh == h and rw == w:
        return x, _identity
    out = np.zeros_like(x)
    out[..., top : top + rh, left : left + rw] = resize_nearest(x, rh, rw)

    def backward(g: np.ndarray) -> np.ndarray:
        return resize_nearest_adjoint(g[..., top : top + rh, left : left + rw], h, w)

    return out, backward


def _normalize(g: np.ndarray, norm: str) -> np.ndarray:
    # zero vectors stay zero instead of becoming 0/0
    n = per_item_norm(g, norm)
    out = np.zeros_like(g)
    nz = n > 0
    out[nz] = g[nz] / n[nz, None, None, None]
    return out


def project(x: np.ndarray, x_real: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    """Map ``x`` into the epsilon-ball around ``x_real``, then into the pixel bounds."""
    if x.shape != x_real.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_real.shape}")
    eps = cfg.epsilon
    if cfg.norm is Norm.LINF:
        x = np.clip(x, x_real - eps, x_real + eps)
    else:
        delta = x - x_real
        n = per_item_norm(delta, "l2")
        outside = n > eps
        if np.any(outside):
            x = x.copy()
            x[outside] = x_real[outside] + delta[outside] * (eps / n[outside])[:, None, None, None]
    return np.clip(x, *cfg.pixel_bounds)


def attack(model: Classifier, x_real: np.ndarray, y, cfg: AttackConfig) -> AdversarialResult:
    """Untargeted attack maximising the cross-entropy of ``model`` at labels ``y``."""
    x_real = as_tensor(x_real)
    y = np.asarray(y, dtype=np.int64)
    lo, hi = cfg.pixel_bounds
    if x_real.min(initial=lo) < lo or x_real.max(initial=hi) > hi:
        raise ValueError("x_real lies outside the pixel bounds")
    rng = np.random.default_rng(cfg.seed)
    n = len(x_real)
    x = x_real.copy()
    momentum = np.zeros_like(x_real)
    trace = np.zeros((cfg.iterations + 1, n))
    zero = np.zeros((cfg.iterations, n), dtype=bool)

    for t in range(cfg.iterations):
        if cfg.method is Method.DIM:
            xt, backward = di_transform(x, cfg, rng)
            losses, grad = loss_and_input_grad(model, xt, y)
            grad = backward(grad)
            if backward is not _identity:
                losses = loss(model, x, y)
        else:
            losses, grad = loss_and_input_grad(model, x, y)
        trace[t] = losses
        if cfg.kernel is not None:
            grad = smooth_gradient(grad, cfg.kernel)
        zero[t] = ~np.any(grad.reshape(n, -1) != 0, axis=1)

        if cfg.uses_momentum:
            momentum = cfg.mu * momentum + _normalize(grad, "l1")
            direction = momentum
        else:
            direction = grad
        if cfg.norm is Norm.LINF:
            step = np.sign(direction)
        else:
            step = _normalize(direction, "l2")
        x = project(x + cfg.alpha * step, x_real, cfg)

    trace[-1] = loss(model, x, y)
    norm_name = "linf" if cfg.norm is Norm.LINF else "l2"
    return AdversarialResult(
        x_adv=x,
        perturbation_norm=per_item_norm(x - x_real, norm_name),
        success=model.predict(x) != y,
        loss_trace=trace,
        zero_gradient=zero,
        config=cfg,
    )


def save_adversarial_batch(result: AdversarialResult, path, extra: dict | None = None) -> tuple[Path, Path]:
    """Write ``x_adv`` as ``<path>.npy`` and a JSON sidecar ``<path>.json``."""
    path = Path(path)
    npy = path.with_suffix(".npy")
    sidecar = path.with_suffix(".json")
    path.parent.mkdir(parents=True, exist_ok=True)
    save_npy(npy, result.x_adv)
    meta = {
        "config": result.config.to_dict(),
        "attack": result.config.label,
        "seed": result.config.seed,
        "success": result.success.astype(bool).tolist(),
        "perturbation_norm": result.perturbation_norm.tolist(),
        "zero_gradient_steps": result.zero_gradient.sum(axis=0).astype(int).tolist(),
    }
    if extra:
        meta.update(extra)
    sidecar.write_text(json.dumps(meta, indent=2) + "\n")
    return npy, sidecar
