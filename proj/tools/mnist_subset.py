#!/usr/bin/env python3
"""Write the first N training samples and the full test set of MNIST as gzipped IDX files.

Usage: mnist_subset.py SRC_DIR DST_DIR [--train 10000]
SRC_DIR holds the four standard IDX files, plain or gzipped.
"""
import argparse
import gzip
import struct
from pathlib import Path

STEMS = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
         "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


def read(src: Path, stem: str) -> bytes:
    plain = src / stem
    if plain.exists():
        return plain.read_bytes()
    return gzip.decompress((src / (stem + ".gz")).read_bytes())


def cut(blob: bytes, count: int) -> bytes:
    magic = struct.unpack(">I", blob[:4])[0]
    rank = magic & 0xFF
    dims = list(struct.unpack(">" + "I" * rank, blob[4:4 + 4 * rank]))
    item = 1
    for d in dims[1:]:
        item *= d
    count = min(count, dims[0]) if count else dims[0]
    dims[0] = count
    head = struct.pack(">I", magic) + struct.pack(">" + "I" * rank, *dims)
    body_start = 4 + 4 * rank
    return head + blob[body_start:body_start + count * item]


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("src", type=Path)
    ap.add_argument("dst", type=Path)
    ap.add_argument("--train", type=int, default=10000)
    a = ap.parse_args()
    a.dst.mkdir(parents=True, exist_ok=True)
    for stem in STEMS:
        count = a.train if stem.startswith("train") else 0
        with gzip.GzipFile(a.dst / (stem + ".gz"), "wb", mtime=0) as f:
            f.write(cut(read(a.src, stem), count))


if __name__ == "__main__":
    main()
