#!/usr/bin/env python3
"""Convert the digits bundled in the npm `mnist` package into gzip'd IDX files.

The package ships 10,000 MNIST digits (1,000 per class) as JSON arrays of
pixel intensities rounded to three decimals. Each class is split 800/200
into `train-*` and `t10k-*` files so the standard loader can read them.

usage: npm pack mnist && tar xzf mnist-1.1.0.tgz
       python3 scripts/mnist_from_npm.py package/src/digits data/mnist
"""
import gzip
import json
import struct
import sys
from pathlib import Path

TRAIN_PER_CLASS = 800


def write_idx(path, magic, dims, payload):
    with gzip.GzipFile(path, "wb", mtime=0) as fh:
        fh.write(struct.pack(">I", magic))
        for d in dims:
            fh.write(struct.pack(">I", d))
        fh.write(payload)


def main(src, dst):
    src, dst = Path(src), Path(dst)
    dst.mkdir(parents=True, exist_ok=True)
    splits = {"train": ([], []), "t10k": ([], [])}
    for digit in range(10):
        data = json.loads((src / f"{digit}.json").read_text())["data"]
        n = len(data) // 784
        for i in range(n):
            px = bytes(min(255, max(0, round(v * 255))) for v in data[i * 784:(i + 1) * 784])
            name = "train" if i < TRAIN_PER_CLASS else "t10k"
            splits[name][0].append(px)
            splits[name][1].append(digit)
    for name, (images, labels) in splits.items():
        # interleave classes so a prefix of the file is class balanced
        order = sorted(range(len(labels)), key=lambda i: (i % (len(labels) // 10), labels[i]))
        imgs = b"".join(images[i] for i in order)
        labs = bytes(labels[i] for i in order)
        write_idx(dst / f"{name}-images-idx3-ubyte.gz", 0x803, [len(order), 28, 28], imgs)
        write_idx(dst / f"{name}-labels-idx1-ubyte.gz", 0x801, [len(order)], labs)
        print(name, len(order))


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
