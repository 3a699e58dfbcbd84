#!/usr/bin/env python3
"""Build a Fashion-MNIST subset as gzip IDX files.

The images come from the `fashion-mnist` npm package (MIT), which ships all
70k images as per-class JSON arrays of raw 0-255 pixels. The script dedupes
them, shuffles with a fixed seed and writes a training pool plus a disjoint
test set in the standard IDX layout.

    python3 scripts/fetch_fashion_mnist.py [--out data/fashion-mnist]
"""
import argparse
import gzip
import json
import os
import random
import struct
import subprocess
import tarfile
import tempfile


def write_idx_images(path, images):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_idx_labels(path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/fashion-mnist")
    ap.add_argument("--train", type=int, default=10000)
    ap.add_argument("--test", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=20200101)
    ap.add_argument("--tarball", help="pre-downloaded fashion-mnist npm tarball")
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        tarball = args.tarball
        if tarball is None:
            subprocess.run(["npm", "pack", "fashion-mnist@1.1.0"], cwd=tmp, check=True)
            tarball = os.path.join(tmp, "fashion-mnist-1.1.0.tgz")
        with tarfile.open(tarball) as tf:
            tf.extractall(tmp)
        seen = set()
        examples = []
        for label in range(10):
            with open(os.path.join(tmp, "package/src/clothes/%d.json" % label)) as f:
                for img in json.load(f)["data"]:
                    key = bytes(img)
                    if len(img) != 784 or key in seen:
                        continue
                    seen.add(key)
                    examples.append((img, label))

    random.Random(args.seed).shuffle(examples)
    need = args.train + args.test
    if len(examples) < need:
        raise SystemExit("only %d unique images available" % len(examples))
    train = examples[: args.train]
    test = examples[args.train : need]

    os.makedirs(args.out, exist_ok=True)
    for name, part in (("train", train), ("test", test)):
        write_idx_images(os.path.join(args.out, "%s-images-idx3-ubyte.gz" % name), [e[0] for e in part])
        write_idx_labels(os.path.join(args.out, "%s-labels-idx1-ubyte.gz" % name), [e[1] for e in part])
    print("wrote %d train / %d test examples to %s" % (len(train), len(test), args.out))


if __name__ == "__main__":
    main()
