"""Dataset readers (MNIST IDX, CIFAR-10 binary) and batch preparation."""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32
_IDX_DTYPES = {0x08: np.dtype("u1"), 0x09: np.dtype("i1"), 0x0B: np.dtype(">i2"), 0x0C: np.dtype(">i4"),
               0x0D: np.dtype(">f4"), 0x0E: np.dtype(">f8")}


class DataFormatError(ValueError):
    """A dataset file is malformed."""


@dataclass
class DatasetHandle:
    name: str
    split: str
    images: np.ndarray  # uint8, N x C x H x W
    labels: np.ndarray  # uint8, N
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DataFormatError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def subset(self, n: int, seed: int = 0) -> "DatasetHandle":
        """First ``n`` samples of a seeded permutation."""
        idx = np.sort(np.random.default_rng(seed).permutation(len(self))[:n])
        return DatasetHandle(self.name, self.split, self.images[idx], self.labels[idx], self.mean, self.std)

    def with_stats(self, mean, std) -> "DatasetHandle":
        return DatasetHandle(self.name, self.split, self.images, self.labels,
                             np.asarray(mean, np.float64), np.asarray(std, np.float64))


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def load_idx(path, expect: str | None = None) -> np.ndarray:
    """Parse an IDX file (optionally gzipped) into an array.

    ``expect`` may be ``"images"`` or ``"labels"`` to pin the magic number.
    """
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise DataFormatError(f"{path}: truncated IDX header")
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    magic = struct.unpack(">I", raw[:4])[0]
    if expect == "labels" and magic != IDX_LABELS_MAGIC:
        raise DataFormatError(f"{path}: expected label magic 0x{IDX_LABELS_MAGIC:08x}, found 0x{magic:08x}")
    if expect == "images" and magic != IDX_IMAGES_MAGIC:
        raise DataFormatError(f"{path}: expected image magic 0x{IDX_IMAGES_MAGIC:08x}, found 0x{magic:08x}")
    if zero != 0 or dtype_code not in _IDX_DTYPES:
        raise DataFormatError(f"{path}: bad IDX magic 0x{magic:08x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError(f"{path}: truncated IDX dimensions")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    dt = _IDX_DTYPES[dtype_code]
    need = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
    if len(raw) - header < need:
        raise DataFormatError(f"{path}: truncated IDX payload ({len(raw) - header} of {need} bytes)")
    if len(raw) - header > need:
        raise DataFormatError(f"{path}: {len(raw) - header - need} trailing bytes after IDX payload")
    return np.frombuffer(raw, dt, offset=header, count=need // dt.itemsize).reshape(dims).astype(dt.newbyteorder("="))


def write_idx(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        raise DataFormatError(f"write_idx supports uint8 arrays only, got {arr.dtype}")
    header = struct.pack(">HBB", 0, 0x08, arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape)
    data = header + arr.tobytes()
    if str(path).endswith(".gz"):
        data = gzip.compress(data, mtime=0)
    Path(path).write_bytes(data)


_MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _find(root: Path, stem: str) -> Path:
    for cand in (stem, stem + ".gz", stem.replace("-idx", ".idx"), stem.replace("-idx", ".idx") + ".gz"):
        if (root / cand).exists():
            return root / cand
    raise FileNotFoundError(f"{stem}[.gz] not found under {root}")


def load_mnist(root, split: str = "train") -> DatasetHandle:
    root = Path(root)
    img_name, lbl_name = _MNIST_FILES[split]
    images = load_idx(_find(root, img_name), expect="images")
    labels = load_idx(_find(root, lbl_name), expect="labels")
    if images.ndim != 3:
        raise DataFormatError(f"MNIST images should be 3-d, got {images.shape}")
    if len(images) != len(labels):
        raise DataFormatError(f"MNIST {split}: {len(images)} images vs {len(labels)} labels")
    return DatasetHandle("mnist", split, images[:, None, :, :].copy(), labels.astype(np.uint8))


def read_cifar10_file(path) -> tuple[np.ndarray, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) == 0 or len(raw) % CIFAR_RECORD:
        raise DataFormatError(f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD}")
    rec = np.frombuffer(raw, np.uint8).reshape(-1, CIFAR_RECORD)
    return rec[:, 1:].reshape(-1, 3, 32, 32).copy(), rec[:, 0].copy()


def write_cifar10_file(path, images: np.ndarray, labels: np.ndarray) -> None:
    images = np.asarray(images, np.uint8).reshape(len(images), -1)
    rec = np.concatenate([np.asarray(labels, np.uint8)[:, None], images], axis=1)
    Path(path).write_bytes(rec.tobytes())


def load_cifar10_bin(root, split: str = "train") -> DatasetHandle:
    """Read the binary CIFAR-10 batches (``data_batch_1..5.bin`` / ``test_batch.bin``)."""
    root = Path(root)
    if (root / "cifar-10-batches-bin").is_dir():
        root = root / "cifar-10-batches-bin"
    names = [f"data_batch_{i}.bin" for i in range(1, 6)] if split == "train" else ["test_batch.bin"]
    files = [root / n for n in names if (root / n).exists()]
    if not files:
        raise FileNotFoundError(f"no CIFAR-10 {split} batches under {root}")
    parts = [read_cifar10_file(f) for f in files]
    images = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    if labels.max() >= 10:
        raise DataFormatError(f"{root}: CIFAR-10 label {labels.max()} out of range")
    return DatasetHandle("cifar10", split, images, labels)


def data_root(explicit=None) -> Path:
    """Dataset root: explicit argument, else ``$REPEATNET_DATA_DIR``, else ``./data``."""
    if explicit:
        return Path(explicit)
    return Path(os.environ.get("REPEATNET_DATA_DIR", "data"))


def load_dataset(name: str, split: str, root=None) -> DatasetHandle:
    root = data_root(root)
    if name == "mnist":
        return load_mnist(root / "mnist" if (root / "mnist").is_dir() else root, split)
    if name == "cifar10":
        return load_cifar10_bin(root / "cifar10" if (root / "cifar10").is_dir() else root, split)
    raise ValueError(f"unknown dataset {name!r}")


def channel_stats(ds: DatasetHandle) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean / std of pixel values scaled to [0, 1]."""
    x = ds.images.astype(np.float64) / 255.0
    return x.mean(axis=(0, 2, 3)), x.std(axis=(0, 2, 3))


def normalize(images: np.ndarray, mean, std, dtype=np.float32) -> np.ndarray:
    x = images.astype(dtype) / dtype(255.0)
    shape = (1, -1, 1, 1)
    return (x - np.asarray(mean, dtype).reshape(shape)) / np.asarray(std, dtype).reshape(shape)


def augment(batch: np.ndarray, rng: np.random.Generator, crop_pad: int = 4, flip: bool = True) -> np.ndarray:
    """Random ``crop_pad``-pixel-padded crop and horizontal flip, per sample."""
    n, c, h, w = batch.shape
    out = batch
    if crop_pad:
        p = crop_pad
        padded = np.pad(batch, ((0, 0), (0, 0), (p, p), (p, p)))
        dy = rng.integers(0, 2 * p + 1, n)
        dx = rng.integers(0, 2 * p + 1, n)
        out = np.empty_like(batch)
        for i in range(n):
            out[i] = padded[i, :, dy[i]:dy[i] + h, dx[i]:dx[i] + w]
    if flip:
        mask = rng.random(n) < 0.5
        if out is batch:
            out = batch.copy()
        out[mask] = out[mask, :, :, ::-1]
    return out
