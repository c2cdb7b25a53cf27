"""Write a small MNIST split as IDX files under <root>/mnist/.

Use this when the official IDX files cannot be downloaded. The source is the
5000-image MNIST sample bundled with ``mlxtend`` (500 per class). A seeded
permutation puts 4000 images in the train files and 1000 in the t10k files.

    python scripts/prepare_mnist_subset.py --root data
"""
import argparse
import gzip
from pathlib import Path

import numpy as np

from repeatnet.data import write_idx


def find_csv(explicit):
    if explicit:
        return Path(explicit)
    import mlxtend.data.mnist as m

    return Path(m.DATA_PATH)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--root", default="data")
    ap.add_argument("--csv", help="path to mnist_5k.csv.gz (default: the copy inside mlxtend)")
    ap.add_argument("--test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    with gzip.open(find_csv(args.csv), "rt") as fh:
        table = np.loadtxt(fh, delimiter=",", dtype=np.int64)
    images = table[:, :-1].astype(np.uint8).reshape(-1, 28, 28)
    labels = table[:, -1].astype(np.uint8)
    perm = np.random.default_rng(args.seed).permutation(len(labels))
    test, train = perm[: args.test], perm[args.test:]

    out = Path(args.root) / "mnist"
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / "train-images-idx3-ubyte", images[train])
    write_idx(out / "train-labels-idx1-ubyte", labels[train])
    write_idx(out / "t10k-images-idx3-ubyte", images[test])
    write_idx(out / "t10k-labels-idx1-ubyte", labels[test])
    print(f"wrote {len(train)} train / {len(test)} test images to {out}")


if __name__ == "__main__":
    main()
