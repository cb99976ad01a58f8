#!/usr/bin/env python3
"""Build a small MNIST subset in IDX format from the `mnist` npm package.

The package bundles ~1000 real MNIST digits per class as JSON arrays of
784 floats in [0, 1]. This script writes 600 images per class to the
train files and the next 100 per class to the t10k files, shuffled with a
fixed seed.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/make_mnist_desk.py package/src/digits data/mnist-desk
"""
import json
import random
import struct
import sys
from pathlib import Path

TRAIN_PER_CLASS = 600
TEST_PER_CLASS = 100
SIDE = 28


def load_digits(src: Path):
    per_class = []
    for d in range(10):
        raw = json.loads((src / f"{d}.json").read_text())["data"]
        n = len(raw) // (SIDE * SIDE)
        imgs = [
            bytes(round(v * 255) for v in raw[i * SIDE * SIDE:(i + 1) * SIDE * SIDE])
            for i in range(n)
        ]
        per_class.append(imgs)
    return per_class


def write_idx(images, labels, out: Path, prefix: str):
    with open(out / f"{prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), SIDE, SIDE))
        for img in images:
            f.write(img)
    with open(out / f"{prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    per_class = load_digits(src)
    train, test = [], []
    for d, imgs in enumerate(per_class):
        train += [(img, d) for img in imgs[:TRAIN_PER_CLASS]]
        test += [(img, d) for img in imgs[TRAIN_PER_CLASS:TRAIN_PER_CLASS + TEST_PER_CLASS]]
    rng = random.Random(20240531)
    rng.shuffle(train)
    rng.shuffle(test)
    write_idx([i for i, _ in train], [l for _, l in train], out, "train")
    write_idx([i for i, _ in test], [l for _, l in test], out, "t10k")


if __name__ == "__main__":
    main()
