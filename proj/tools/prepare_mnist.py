#!/usr/bin/env python3
"""Build gzipped MNIST IDX files from the digit subset shipped in the npm
`mnist` package (10000 real MNIST digits, pixels stored as value/255 rounded
to three decimals).

The digits are shuffled with a fixed seed and split into a 2000-image
"train" file and an 8000-image "t10k" file so the standard IDX loaders and
the MNIST7 split logic can be used unchanged.

Usage:
    tools/prepare_mnist.py [--package DIR_OR_TGZ] [--out data/mnist]

Without --package the script runs `npm pack mnist@1.1.0` in a temporary
directory.
"""
import argparse
import gzip
import json
import pathlib
import struct
import subprocess
import tarfile
import tempfile

import numpy as np

TRAIN_COUNT = 2000
SHUFFLE_SEED = 20240607


def find_digits(package: pathlib.Path, tmp: pathlib.Path) -> pathlib.Path:
    if package.is_file():
        with tarfile.open(package) as tar:
            tar.extractall(tmp)
        package = tmp / "package"
    digits = package / "src" / "digits"
    if not digits.is_dir():
        raise SystemExit(f"no src/digits directory under {package}")
    return digits


def load_digits(digits: pathlib.Path):
    images, labels = [], []
    for label in range(10):
        data = json.loads((digits / f"{label}.json").read_text())["data"]
        pixels = np.rint(np.asarray(data, dtype=np.float64) * 255.0)
        pixels = np.clip(pixels, 0, 255).astype(np.uint8).reshape(-1, 28 * 28)
        images.append(pixels)
        labels.append(np.full(len(pixels), label, dtype=np.uint8))
    return np.concatenate(images), np.concatenate(labels)


def write_idx(path: pathlib.Path, images: np.ndarray, labels: np.ndarray, prefix: str):
    with gzip.GzipFile(path / f"{prefix}-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        f.write(images.tobytes())
    with gzip.GzipFile(path / f"{prefix}-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.tobytes())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--package", type=pathlib.Path)
    ap.add_argument("--out", type=pathlib.Path, default=pathlib.Path("data/mnist"))
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmpdir:
        tmp = pathlib.Path(tmpdir)
        package = args.package
        if package is None:
            subprocess.run(["npm", "pack", "mnist@1.1.0", "--silent"], cwd=tmp, check=True)
            package = tmp / "mnist-1.1.0.tgz"
        images, labels = load_digits(find_digits(package, tmp))

    order = np.random.RandomState(SHUFFLE_SEED).permutation(len(labels))
    images, labels = images[order], labels[order]
    args.out.mkdir(parents=True, exist_ok=True)
    write_idx(args.out, images[:TRAIN_COUNT], labels[:TRAIN_COUNT], "train")
    write_idx(args.out, images[TRAIN_COUNT:], labels[TRAIN_COUNT:], "t10k")
    test = labels[TRAIN_COUNT:]
    print(f"wrote {TRAIN_COUNT} train / {len(test)} test images to {args.out}")
    print("test label counts:", np.bincount(test, minlength=10).tolist())


if __name__ == "__main__":
    main()
