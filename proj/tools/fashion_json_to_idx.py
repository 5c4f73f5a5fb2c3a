#!/usr/bin/env python3
"""Convert the per-class JSON dump of Fashion-MNIST (npm package `fashion-mnist`,
src/clothes/<class>.json) into IDX files.

The dump holds 70k images grouped by class, each class listing its 1000 test
images first and then its 6000 training images (class 0 carries empty
separator entries, which are dropped). Classes are interleaved round-robin so
labels are mixed.
"""
import argparse
import json
import os
import struct


def write_idx(prefix, images, labels):
    with open(prefix + "-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))
    with open(prefix + "-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("clothes_dir")
    ap.add_argument("out_dir")
    ap.add_argument("--train-per-class", type=int, default=6000)
    ap.add_argument("--test-per-class", type=int, default=1000)
    args = ap.parse_args()

    per_class = []
    for c in range(10):
        with open(os.path.join(args.clothes_dir, f"{c}.json")) as f:
            per_class.append([img for img in json.load(f)["data"] if len(img) == 784])

    def interleave(lo, hi):
        images, labels = [], []
        for i in range(lo, hi):
            for c in range(10):
                images.append(per_class[c][i])
                labels.append(c)
        return images, labels

    ntr, nte = args.train_per_class, args.test_per_class
    os.makedirs(args.out_dir, exist_ok=True)
    write_idx(os.path.join(args.out_dir, "t10k"), *interleave(0, nte))
    write_idx(os.path.join(args.out_dir, "train"), *interleave(nte, nte + ntr))


if __name__ == "__main__":
    main()
