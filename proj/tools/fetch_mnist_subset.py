#!/usr/bin/env python3
"""Writes a stratified 4000/1000 MNIST split (IDX format) from the 5000-digit sample shipped in mlxtend.

Usage: fetch_mnist_subset.py [--wheel PATH] [--out data/mnist-5k]

Without --wheel the mlxtend wheel is downloaded with pip.
"""
import argparse
import csv
import gzip
import io
import pathlib
import random
import struct
import subprocess
import sys
import tempfile
import zipfile

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"
TRAIN_PER_CLASS = 400


def find_wheel(path):
    if path:
        return pathlib.Path(path)
    tmp = pathlib.Path(tempfile.mkdtemp())
    subprocess.check_call([sys.executable, "-m", "pip", "download", "--no-deps", "-d", str(tmp), "mlxtend==0.24.0"])
    return next(tmp.glob("mlxtend-*.whl"))


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--wheel")
    ap.add_argument("--out", default="data/mnist-5k")
    ap.add_argument("--seed", type=int, default=20190410)
    args = ap.parse_args()

    with zipfile.ZipFile(find_wheel(args.wheel)) as zf:
        raw = gzip.decompress(zf.read(MEMBER)).decode()
    rows = [list(map(int, r)) for r in csv.reader(io.StringIO(raw)) if r]
    by_class = {}
    for r in rows:
        by_class.setdefault(r[-1], []).append(r[:-1])

    rng = random.Random(args.seed)
    train, test = [], []
    for label in sorted(by_class):
        samples = by_class[label]
        rng.shuffle(samples)
        train += [(s, label) for s in samples[:TRAIN_PER_CLASS]]
        test += [(s, label) for s in samples[TRAIN_PER_CLASS:]]
    rng.shuffle(train)
    rng.shuffle(test)

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, split in (("train", train), ("t10k", test)):
        write_images(out / f"{name}-images-idx3-ubyte", [s for s, _ in split])
        write_labels(out / f"{name}-labels-idx1-ubyte", [l for _, l in split])
    print(f"wrote {len(train)} train and {len(test)} test digits to {out}")


if __name__ == "__main__":
    main()
