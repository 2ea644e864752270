#!/usr/bin/env python3
"""Build the desk-scale MNIST subset used by the learning acceptance test.

Source: the `mnist` npm package (v1.1.0), which ships 10,000 MNIST digits as
JSON arrays of pixel intensities in [0, 1] (rounded to three decimals).

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 scripts/make_mnist_subset.py package/src/digits data/mnist-subset

Per class, the first 200 digits go to the training split and the next 100 to
the test split. Both splits are shuffled with a fixed seed and written as
uncompressed IDX files.
"""
import json
import random
import struct
import sys
from pathlib import Path

TRAIN_PER_CLASS = 200
TEST_PER_CLASS = 100
SIDE = 28


def load_digit(path):
    data = json.loads(Path(path).read_text())["data"]
    n = len(data) // (SIDE * SIDE)
    return [data[i * SIDE * SIDE:(i + 1) * SIDE * SIDE] for i in range(n)]


def to_bytes(img):
    return bytes(max(0, min(255, round(v * 255))) for v in img)


def write_split(out, prefix, samples):
    with open(out / f"{prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(samples), SIDE, SIDE))
        for img, _ in samples:
            f.write(to_bytes(img))
    with open(out / f"{prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(samples)))
        f.write(bytes(label for _, label in samples))


def main():
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    train, test = [], []
    for label in range(10):
        imgs = load_digit(src / f"{label}.json")
        train += [(img, label) for img in imgs[:TRAIN_PER_CLASS]]
        test += [(img, label) for img in imgs[TRAIN_PER_CLASS:TRAIN_PER_CLASS + TEST_PER_CLASS]]
    rng = random.Random(20240601)
    rng.shuffle(train)
    rng.shuffle(test)
    write_split(out, "train", train)
    write_split(out, "t10k", test)


if __name__ == "__main__":
    main()
