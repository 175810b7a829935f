"""Dataset loading (IDX, CIFAR-10 binary), synthetic fixtures and batching."""
from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 3073


@dataclass
class Dataset:
    images: np.ndarray  # [N, C, H, W]
    labels: np.ndarray  # [N] int64
    num_classes: int = 10
    split: str = "train"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise FormatError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise FormatError(f"labels outside [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    @property
    def shape(self):
        return tuple(self.images.shape[1:])

    def subset(self, idx):
        return replace(self, images=self.images[idx], labels=self.labels[idx])


@dataclass
class BatchPlan:
    batch_size: int = 64
    seed: int = 0
    drop_last: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")


# -- IDX -------------------------------------------------------------------

def _read_idx(path, magic, ndim):
    raw = Path(path).read_bytes()
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise FormatError(f"{path}: truncated IDX header")
    got = struct.unpack(">I", raw[:4])[0]
    if got != magic:
        raise FormatError(f"{path}: bad IDX magic 0x{got:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    need = int(np.prod(dims))
    if len(raw) - head != need:
        raise FormatError(f"{path}: payload has {len(raw) - head} bytes, header implies {need}")
    return np.frombuffer(raw, dtype=np.uint8, offset=head).reshape(dims)


def load_idx(images_path, labels_path, split="train", num_classes=10):
    """MNIST-style IDX pair -> ``[N, 1, H, W]`` pixels scaled to [0, 1]."""
    imgs = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if len(imgs) != len(labels):
        raise FormatError(f"{len(imgs)} images but {len(labels)} labels")
    x = (imgs.astype(np.float32) / 255.0)[:, None]
    return Dataset(x, labels.astype(np.int64), num_classes, split)


def write_idx(images_path, labels_path, images_u8, labels):
    """Inverse of :func:`load_idx` for uint8 ``[N, H, W]`` images."""
    n, h, w = images_u8.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w)
                                  + np.ascontiguousarray(images_u8, dtype=np.uint8).tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, n)
                                  + np.asarray(labels, dtype=np.uint8).tobytes())


# -- CIFAR-10 binary -------------------------------------------------------------

def balanced_subset(labels, size, num_classes):
    """Indices of the first ``size // K`` examples of each class, in file
    order; the remainder goes one each to the lowest class ids."""
    per = [size // num_classes + (1 if c < size % num_classes else 0) for c in range(num_classes)]
    picked = []
    for c in range(num_classes):
        idx = np.flatnonzero(labels == c)[: per[c]]
        if len(idx) < per[c]:
            raise ConfigError(f"class {c} has only {len(idx)} examples, subset needs {per[c]}")
        picked.append(idx)
    return np.sort(np.concatenate(picked))


def load_cifar_bin(paths, subset=None, split="train"):
    """CIFAR-10 binary batches (1 label byte + 3072 channel-major pixels)."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    chunks = []
    for p in paths:
        raw = Path(p).read_bytes()
        if len(raw) % CIFAR_RECORD:
            raise FormatError(f"{p}: length {len(raw)} is not a multiple of {CIFAR_RECORD}")
        chunks.append(np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD))
    rec = np.concatenate(chunks) if chunks else np.zeros((0, CIFAR_RECORD), np.uint8)
    labels = rec[:, 0].astype(np.int64)
    if len(labels) and labels.max() >= 10:
        raise FormatError("CIFAR-10 label byte out of range")
    x = rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    ds = Dataset(x, labels, 10, split)
    if subset is not None:
        ds = ds.subset(balanced_subset(labels, subset, 10))
    return ds


# -- synthetic / bundled ------------------------------------------------------------

def synth_dataset(n, classes=10, seed=0, noise=0.1, size=8, channels=1, split="train"):
    """Class-conditional Gaussian blobs rendered into small images.

    Each class owns a fixed blob centre and width per channel; examples are
    the class template plus i.i.d. pixel noise. Fully determined by ``seed``.
    """
    if n < classes:
        raise ConfigError("synth_dataset needs n >= classes")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    templates = np.empty((classes, channels, size, size))
    for c in range(classes):
        for ch in range(channels):
            cy, cx = rng.uniform(1, size - 2, 2)
            s = rng.uniform(0.8, 1.8)
            templates[c, ch] = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
    labels = rng.permutation(np.arange(n) % classes)
    x = templates[labels] + noise * rng.standard_normal((n, channels, size, size))
    return Dataset(np.clip(x, 0, 1).astype(np.float32), labels.astype(np.int64), classes, split)


def load_digits_split(test_fraction=0.3, seed=0):
    """scikit-learn's bundled 8x8 handwritten digits, stratified into
    train/test splits. Pixel values 0..16 are scaled to [0, 1]."""
    from sklearn.datasets import load_digits

    d = load_digits()
    x = (d.images / 16.0).astype(np.float32)[:, None]
    y = d.target.astype(np.int64)
    rng = np.random.default_rng(seed)
    test = []
    for c in range(10):
        idx = rng.permutation(np.flatnonzero(y == c))
        test.append(idx[: int(round(len(idx) * test_fraction))])
    test = np.sort(np.concatenate(test))
    train = np.setdiff1d(np.arange(len(y)), test)
    return Dataset(x[train], y[train], 10, "train"), Dataset(x[test], y[test], 10, "test")


# -- normalization and batching -------------------------------------------------------

def channel_stats(train):
    """Per-channel mean/std of a train split (float64)."""
    x = train.images.astype(np.float64)
    mean = x.mean(axis=(0, 2, 3))
    std = x.std(axis=(0, 2, 3))
    return mean, np.where(std > 0, std, 1.0)


def normalize(ds, stats):
    mean, std = stats
    x = (ds.images.astype(np.float64) - mean[None, :, None, None]) / std[None, :, None, None]
    return replace(ds, images=x.astype(ds.images.dtype))


def denormalize(ds, stats):
    mean, std = stats
    x = ds.images.astype(np.float64) * std[None, :, None, None] + mean[None, :, None, None]
    return replace(ds, images=x.astype(ds.images.dtype))


def batch_order(n, plan, epoch):
    return np.random.default_rng([plan.seed, epoch]).permutation(n)


def batches(ds, plan, epoch=0):
    """Yield ``(images, labels)`` in a shuffle fixed by ``(plan.seed, epoch)``."""
    order = batch_order(len(ds), plan, epoch)
    stop = len(order) - (len(order) % plan.batch_size if plan.drop_last else 0)
    for i in range(0, stop, plan.batch_size):
        idx = order[i:i + plan.batch_size]
        yield ds.images[idx], ds.labels[idx]
