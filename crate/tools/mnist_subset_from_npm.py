#!/usr/bin/env python3
"""Rebuild IDX files from the 10k-digit MNIST subset shipped in the npm `mnist` package.

The npm package stores each digit class as a flat list of pixel intensities
rounded to three decimals (byte / 255). Three decimals are enough to recover
the original byte exactly, so the output is a bit-faithful IDX subset.

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/mnist_subset_from_npm.py package/src/digits data/mnist-subset
"""

import gzip
import json
import struct
import sys
from pathlib import Path


def main() -> None:
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)

    per_class = []
    for digit in range(10):
        flat = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(flat) % 784 == 0
        images = []
        for i in range(len(flat) // 784):
            raw = flat[i * 784:(i + 1) * 784]
            px = bytes(round(v * 255) for v in raw)
            assert all(abs(b / 255 - v) < 6e-4 for b, v in zip(px, raw))
            images.append(px)
        per_class.append(images)

    # Round-robin interleave so the file is not sorted by class.
    images, labels = [], []
    longest = max(len(c) for c in per_class)
    for i in range(longest):
        for digit, imgs in enumerate(per_class):
            if i < len(imgs):
                images.append(imgs[i])
                labels.append(digit)

    n = len(images)
    with gzip.GzipFile(out / "train-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 2051, n, 28, 28))
        for px in images:
            f.write(px)
    with gzip.GzipFile(out / "train-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 2049, n))
        f.write(bytes(labels))
    print(f"wrote {n} images to {out}")


if __name__ == "__main__":
    main()
