#!/usr/bin/env python3
"""Build IDX-format MNIST subset files from the npm `mnist` package.

The package (https://www.npmjs.com/package/mnist) bundles 10,000 MNIST digits
as per-digit JSON arrays of 784 floats in [0, 1]. This script converts them
back to u8 pixels and writes standard IDX files with a balanced, deterministic
train/test split:

    train-images-idx3-ubyte / train-labels-idx1-ubyte   (default 8000 images)
    t10k-images-idx3-ubyte  / t10k-labels-idx1-ubyte    (default 2000 images)

Usage:
    npm install mnist
    python3 scripts/mnist_json_to_idx.py --src node_modules/mnist/src/digits \
        --out data/mnist

The full-resolution official dataset works identically with the toolkit; this
subset exists so the test suite can run in offline environments.
"""

import argparse
import json
import pathlib
import struct


def lcg(seed):
    state = seed & 0xFFFFFFFF
    while True:
        state = (1103515245 * state + 12345) & 0x7FFFFFFF
        yield state


def shuffle(items, seed):
    rng = lcg(seed)
    for i in range(len(items) - 1, 0, -1):
        j = next(rng) % (i + 1)
        items[i], items[j] = items[j], items[i]


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--src", required=True, help="directory with 0.json .. 9.json")
    ap.add_argument("--out", required=True, help="output directory for IDX files")
    ap.add_argument("--test-frac", type=float, default=0.2)
    ap.add_argument("--seed", type=int, default=12345)
    args = ap.parse_args()

    src = pathlib.Path(args.src)
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    train, test = [], []
    for digit in range(10):
        raw = json.loads((src / f"{digit}.json").read_text())
        flat = raw["data"] if isinstance(raw, dict) else raw
        n = len(flat) // 784
        images = [
            [min(255, max(0, round(flat[i * 784 + p] * 255))) for p in range(784)]
            for i in range(n)
        ]
        n_test = int(n * args.test_frac)
        for img in images[: n - n_test]:
            train.append((img, digit))
        for img in images[n - n_test:]:
            test.append((img, digit))

    shuffle(train, args.seed)
    shuffle(test, args.seed + 1)

    write_images(out / "train-images-idx3-ubyte", [img for img, _ in train])
    write_labels(out / "train-labels-idx1-ubyte", [lab for _, lab in train])
    write_images(out / "t10k-images-idx3-ubyte", [img for img, _ in test])
    write_labels(out / "t10k-labels-idx1-ubyte", [lab for _, lab in test])
    print(f"wrote {len(train)} train and {len(test)} test images to {out}")


if __name__ == "__main__":
    main()
