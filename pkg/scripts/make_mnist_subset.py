"""Write the bundled MNIST subset as gzipped IDX files.

Source: the 5000-digit MNIST sample shipped with mlxtend (500 per class,
drawn from the MNIST training set). Only needed to regenerate the files
under src/tiattack/data; the package itself does not import mlxtend.
"""

import gzip
import struct
from pathlib import Path

import numpy as np
from mlxtend.data import mnist_data

OUT = Path(__file__).resolve().parents[1] / "src" / "tiattack" / "data"
N_TEST = 500


def write_idx(path, array, magic):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in array.shape)
    # mtime=0 keeps the archive bytes reproducible
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + array.astype(np.uint8).tobytes())


def main():
    images, labels = mnist_data()
    images = images.reshape(-1, 28, 28)
    perm = np.random.default_rng(0).permutation(len(labels))
    test, train = perm[:N_TEST], perm[N_TEST:]
    for name, idx in [("train", train), ("test", test)]:
        write_idx(OUT / f"mnist5k-{name}-images-idx3-ubyte.gz", images[idx], 0x00000803)
        write_idx(OUT / f"mnist5k-{name}-labels-idx1-ubyte.gz", labels[idx], 0x00000801)
        print(name, len(idx), np.bincount(labels[idx]))


if __name__ == "__main__":
    main()
