#!/usr/bin/env python3
"""Export the UCI Optical Handwritten Digits corpus (bundled with scikit-learn)
as IDX files under data/digits/, upsampled to 32x32.

The files use the same IDX layout and conventional names as MNIST, so any
config pointing at a MNIST directory works against this corpus unchanged.
Run once; the output files are committed as test fixtures.
"""
import struct
import numpy as np
from sklearn.datasets import load_digits

OUT = "data/digits"
SIZE = 32
TRAIN = 1500


def write_idx_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), SIZE, SIZE))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    ds = load_digits()
    imgs = ds.images  # (1797, 8, 8), float values 0..16
    labels = ds.target.astype(np.uint8)

    # nearest-neighbour upsample 8x8 -> 32x32, intensities to u8
    up = np.repeat(np.repeat(imgs, 4, axis=1), 4, axis=2)
    up = np.rint(up / 16.0 * 255.0).clip(0, 255).astype(np.uint8)

    rng = np.random.RandomState(0)
    order = rng.permutation(len(up))
    up, labels = up[order], labels[order]

    write_idx_images(f"{OUT}/train-images-idx3-ubyte", up[:TRAIN])
    write_idx_labels(f"{OUT}/train-labels-idx1-ubyte", labels[:TRAIN])
    write_idx_images(f"{OUT}/t10k-images-idx3-ubyte", up[TRAIN:])
    write_idx_labels(f"{OUT}/t10k-labels-idx1-ubyte", labels[TRAIN:])
    print(f"wrote {TRAIN} train / {len(up) - TRAIN} test images to {OUT}/")


if __name__ == "__main__":
    main()
