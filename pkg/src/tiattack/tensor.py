"""Dense NCHW float64 arrays and the handful of operations the attacks need.

Tensors are plain ``numpy.ndarray`` objects of shape ``(n, c, h, w)`` and
dtype float64. Every function here returns a new array and leaves its
inputs untouched.
"""

from __future__ import annotations

import enum
from pathlib import Path

import numpy as np


class ShiftMode(str, enum.Enum):
    ZERO = "zero"
    CIRCULAR = "circular"


def as_tensor(a) -> np.ndarray:
    """Return ``a`` as a 4-D float64 array, promoting 2-D and 3-D input."""
    t = np.asarray(a, dtype=np.float64)
    if t.ndim == 2:
        t = t[None, None]
    elif t.ndim == 3:
        t = t[None]
    if t.ndim != 4:
        raise ValueError(f"expected a (n, c, h, w) tensor, got shape {t.shape}")
    return t


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def shift(t: np.ndarray, i: int, j: int, mode: ShiftMode | str = ShiftMode.ZERO) -> np.ndarray:
    """Translate ``t`` by ``i`` rows and ``j`` columns: ``out[a, b] = t[a - i, b - j]``.

    With ``ShiftMode.ZERO`` the vacated rows/columns are filled with 0; with
    ``ShiftMode.CIRCULAR`` indices wrap around.
    """
    mode = ShiftMode(mode)
    h, w = t.shape[-2:]
    if abs(i) >= h or abs(j) >= w:
        raise ValueError(f"shift ({i}, {j}) must be smaller than spatial extent ({h}, {w})")
    if mode is ShiftMode.CIRCULAR:
        return np.roll(t, (i, j), axis=(-2, -1))
    out = np.zeros_like(t)
    src_r = slice(max(-i, 0), h - max(i, 0))
    dst_r = slice(max(i, 0), h - max(-i, 0))
    src_c = slice(max(-j, 0), w - max(j, 0))
    dst_c = slice(max(j, 0), w - max(-j, 0))
    out[..., dst_r, dst_c] = t[..., src_r, src_c]
    return out


def conv2d_same(t: np.ndarray, kernel: np.ndarray, mode: ShiftMode | str = ShiftMode.ZERO) -> np.ndarray:
    """Depthwise 'same' cross-correlation.

    ``out[a, b] = sum_{i, j} kernel[i, j] * t[a + i, b + j]`` with ``i, j``
    measured from the kernel centre. The kernel is not flipped. Pixels
    outside the image read as zero, or wrap around with
    ``ShiftMode.CIRCULAR``.
    """
    mode = ShiftMode(mode)
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2:
        raise ValueError("kernel must be a 2-D matrix")
    kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"kernel sides must be odd, got {kernel.shape}")
    h, w = t.shape[-2:]
    if kh > h or kw > w:
        raise ValueError(f"kernel {kernel.shape} larger than image ({h}, {w})")
    ph, pw = kh // 2, kw // 2
    padded = np.pad(
        t,
        [(0, 0)] * (t.ndim - 2) + [(ph, ph), (pw, pw)],
        mode="wrap" if mode is ShiftMode.CIRCULAR else "constant",
    )
    # first term initialises the sum so a 1x1 kernel [[1]] returns t bit for bit
    out = kernel[0, 0] * padded[..., 0:h, 0:w]
    for a in range(kh):
        for b in range(kw):
            if a == 0 and b == 0:
                continue
            out += kernel[a, b] * padded[..., a : a + h, b : b + w]
    return out


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same_shape(a, b)
    return a + b


def sub(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same_shape(a, b)
    return a - b


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same_shape(a, b)
    return a * b


def scale(a: np.ndarray, s: float) -> np.ndarray:
    return a * s


def clamp(a: np.ndarray, lo, hi) -> np.ndarray:
    return np.clip(a, lo, hi)


def sign(a: np.ndarray) -> np.ndarray:
    return np.sign(a)


def l1(a: np.ndarray) -> float:
    return float(np.abs(a).sum())


def l2(a: np.ndarray) -> float:
    return float(np.sqrt(np.square(a).sum()))


def linf(a: np.ndarray) -> float:
    return float(np.abs(a).max()) if a.size else 0.0


def per_item_norm(a: np.ndarray, norm: str) -> np.ndarray:
    """Norm of each batch item, flattened over (c, h, w)."""
    flat = a.reshape(a.shape[0], -1)
    if norm == "l1":
        return np.abs(flat).sum(axis=1)
    if norm == "l2":
        return np.sqrt(np.square(flat).sum(axis=1))
    if norm == "linf":
        return np.abs(flat).max(axis=1)
    raise ValueError(f"unknown norm {norm!r}")


def _nearest_index(orig: int, new: int) -> np.ndarray:
    return (np.arange(new) * orig) // new


def resize_nearest(t: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    if new_h < 1 or new_w < 1:
        raise ValueError("target size must be at least 1x1")
    h, w = t.shape[-2:]
    rows = _nearest_index(h, new_h)
    cols = _nearest_index(w, new_w)
    return t[..., rows, :][..., cols]


def resize_nearest_adjoint(g: np.ndarray, orig_h: int, orig_w: int) -> np.ndarray:
    """Transpose of :func:`resize_nearest`: scatter-add each element to its source pixel."""
    if orig_h < 1 or orig_w < 1:
        raise ValueError("original size must be at least 1x1")
    new_h, new_w = g.shape[-2:]
    rows = _nearest_index(orig_h, new_h)
    cols = _nearest_index(orig_w, new_w)
    lead = g.shape[:-2]
    tmp = np.zeros(lead + (orig_h, new_w))
    np.add.at(tmp, (Ellipsis, rows, slice(None)), g)
    out = np.zeros(lead + (orig_h, orig_w))
    np.add.at(out, (Ellipsis, slice(None), cols), tmp)
    return out


def save_npy(path, t: np.ndarray) -> None:
    np.save(Path(path), np.ascontiguousarray(t, dtype="<f8"), allow_pickle=False)


def load_npy(path) -> np.ndarray:
    return np.load(Path(path), allow_pickle=False).astype(np.float64, copy=False)


def save_pgm(path, image: np.ndarray) -> None:
    """Write one single-channel image with values in [0, 1] as binary PGM (P5)."""
    img = np.asarray(image, dtype=np.float64)
    img = np.squeeze(img)
    if img.ndim != 2:
        raise ValueError(f"PGM export needs a single-channel image, got shape {image.shape}")
    h, w = img.shape
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())
