#!/usr/bin/env python3
"""Build the bundled MNIST subset in IDX format.

Source: the `mnist` npm package (10,000 MNIST digits stored as JSON, pixels
normalised to three decimals). Pixels are mapped back to bytes, the digits
are shuffled with a fixed seed and split 8000 / 2000 into train / test IDX
files, then packed into data/mnist-subset.tar.gz.

usage: make_mnist_subset.py <extracted npm package dir> <out dir>
"""
import json
import pathlib
import random
import struct
import sys
import tarfile


def write_idx_images(path, images, rows=28, cols=28):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), rows, cols))
        for img in images:
            f.write(bytes(img))


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    pkg, out = pathlib.Path(sys.argv[1]), pathlib.Path(sys.argv[2])
    samples = []
    for digit in range(10):
        data = json.loads((pkg / "src" / "digits" / f"{digit}.json").read_text())["data"]
        assert len(data) % 784 == 0
        for i in range(0, len(data), 784):
            pixels = [min(255, max(0, round(v * 255))) for v in data[i:i + 784]]
            samples.append((pixels, digit))
    random.Random(20181105).shuffle(samples)
    train, test = samples[:8000], samples[8000:10000]
    out.mkdir(parents=True, exist_ok=True)
    staging = out / "mnist-subset"
    staging.mkdir(exist_ok=True)
    write_idx_images(staging / "train-images-idx3-ubyte", [s[0] for s in train])
    write_idx_labels(staging / "train-labels-idx1-ubyte", [s[1] for s in train])
    write_idx_images(staging / "t10k-images-idx3-ubyte", [s[0] for s in test])
    write_idx_labels(staging / "t10k-labels-idx1-ubyte", [s[1] for s in test])
    with tarfile.open(out / "mnist-subset.tar.gz", "w:gz") as tar:
        for p in sorted(staging.iterdir()):
            info = tar.gettarinfo(str(p), arcname=f"mnist-subset/{p.name}")
            info.mtime = 0
            info.uid = info.gid = 0
            info.uname = info.gname = ""
            with open(p, "rb") as fh:
                tar.addfile(info, fh)
    print(f"{len(samples)} digits -> {len(train)} train / {len(test)} test")


if __name__ == "__main__":
    main()
