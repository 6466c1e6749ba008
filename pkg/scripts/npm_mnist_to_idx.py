#!/usr/bin/env python3
"""Convert the digits bundled in the npm ``mnist`` package into IDX files.

The npm package (``npm pack mnist``) ships 10,000 MNIST digits as JSON
arrays of 28x28 floats in [0, 1], one file per digit class.  This script
rebuilds uint8 pixels, shuffles with a fixed seed and writes the usual
``train-*`` / ``t10k-*`` IDX pairs (gzipped) so the loader can read them
like the original distribution.

    npm pack mnist && tar xzf mnist-*.tgz
    python scripts/npm_mnist_to_idx.py package/src/digits data/mnist
"""
import argparse
import gzip
import json
import random
import struct
from pathlib import Path

ROWS = COLS = 28


def write_idx(path, magic, dims, payload):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    # mtime=0 keeps the gzip output byte-stable
    with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as fh:
        fh.write(header + payload)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("digits_dir", type=Path)
    parser.add_argument("out_dir", type=Path)
    parser.add_argument("--test-count", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    samples = []
    for digit in range(10):
        flat = json.loads((args.digits_dir / f"{digit}.json").read_text())["data"]
        size = ROWS * COLS
        for start in range(0, len(flat), size):
            pixels = bytes(min(255, max(0, round(v * 255))) for v in flat[start:start + size])
            samples.append((pixels, digit))

    random.Random(args.seed).shuffle(samples)
    splits = {"t10k": samples[:args.test_count], "train": samples[args.test_count:]}

    args.out_dir.mkdir(parents=True, exist_ok=True)
    for name, items in splits.items():
        write_idx(args.out_dir / f"{name}-images-idx3-ubyte.gz", 0x00000803,
                  (len(items), ROWS, COLS), b"".join(p for p, _ in items))
        write_idx(args.out_dir / f"{name}-labels-idx1-ubyte.gz", 0x00000801,
                  (len(items),), bytes(d for _, d in items))
        print(f"{name}: {len(items)} samples")


if __name__ == "__main__":
    main()
