"""IDX (MNIST-style) dataset files and the bundled MNIST subset."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import IdxFormatError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    images: np.ndarray  # (n, 1, h, w), values in [0, 1]
    labels: np.ndarray  # (n,), int64

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ValueError("pixel values must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, n: int) -> "LabeledDataset":
        return LabeledDataset(self.images[:n], self.labels[:n])


def _read_bytes(path) -> bytes:
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(2)
    opener = gzip.open if head == b"\x1f\x8b" else open
    with opener(path, "rb") as f:
        return f.read()


def _parse(raw: bytes, magic: int, ndim: int) -> np.ndarray:
    if len(raw) < 4:
        raise IdxFormatError("file too short for magic number", len(raw))
    (found,) = struct.unpack_from(">I", raw, 0)
    if found != magic:
        raise IdxFormatError(f"bad magic 0x{found:08x}, expected 0x{magic:08x}", 0)
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise IdxFormatError("truncated header", len(raw))
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    expected = int(np.prod(dims))
    body = len(raw) - header_len
    if body < expected:
        raise IdxFormatError(
            f"truncated data: need {expected} bytes, found {body}", len(raw)
        )
    if body > expected:
        raise IdxFormatError(
            f"{body - expected} trailing bytes after data", header_len + expected
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header_len).reshape(dims)


def read_idx_images(path) -> np.ndarray:
    return _parse(_read_bytes(path), IMAGES_MAGIC, 3)


def read_idx_labels(path) -> np.ndarray:
    return _parse(_read_bytes(path), LABELS_MAGIC, 1)


def load_idx_dataset(images_path, labels_path) -> LabeledDataset:
    """Load an IDX image/label pair, scaling pixels to [0, 1]. Gzipped files are accepted."""
    raw_images = _read_bytes(images_path)
    images = _parse(raw_images, IMAGES_MAGIC, 3)
    labels = _parse(_read_bytes(labels_path), LABELS_MAGIC, 1)
    if len(images) != len(labels):
        # the count field of the image header sits at offset 4
        raise IdxFormatError(
            f"image count {len(images)} does not match label count {len(labels)}", 4
        )
    x = images.astype(np.float64)[:, None] / 255.0
    return LabeledDataset(x, labels.astype(np.int64))


def write_idx(path, array: np.ndarray, gz: bool = False) -> None:
    array = np.asarray(array)
    magic = {3: IMAGES_MAGIC, 1: LABELS_MAGIC}[array.ndim]
    payload = struct.pack(f">I{array.ndim}I", magic, *array.shape)
    payload += array.astype(np.uint8).tobytes()
    if gz:
        with gzip.GzipFile(path, "wb", mtime=0) as f:
            f.write(payload)
    else:
        Path(path).write_bytes(payload)


def bundled_paths(split: str) -> tuple[Path, Path]:
    """Paths of the bundled MNIST subset (``split`` is ``"train"`` or ``"test"``)."""
    if split not in ("train", "test"):
        raise ValueError(f"unknown split {split!r}")
    root = resources.files("tiattack") / "data"
    return (
        Path(str(root / f"mnist5k-{split}-images-idx3-ubyte.gz")),
        Path(str(root / f"mnist5k-{split}-labels-idx1-ubyte.gz")),
    )


def load_bundled_mnist(split: str) -> LabeledDataset:
    """4500 training / 500 test digits drawn from MNIST."""
    return load_idx_dataset(*bundled_paths(split))
