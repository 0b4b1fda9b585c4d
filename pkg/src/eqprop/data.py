"""Dataset ingestion (IDX and CIFAR binary formats) and synthetic task
generation for desk-scale checks."""

import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class LabeledDataset:
    images: np.ndarray  # (N, C, H, W), values in [0, 1]
    labels: np.ndarray  # (N,) integer classes
    class_count: int
    split: str = "train"

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError("image/label count mismatch")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError("label outside [0, class_count)")

    def __len__(self):
        return self.images.shape[0]

    def subset(self, idx, split=None):
        return LabeledDataset(
            images=self.images[idx],
            labels=self.labels[idx],
            class_count=self.class_count,
            split=split or self.split,
        )


def _read_exact(f, n, path):
    buf = f.read(n)
    if len(buf) != n:
        raise ValueError(f"{path}: truncated at byte offset {f.tell()} "
                         f"(wanted {n} bytes, got {len(buf)})")
    return buf


def load_idx(images_path, labels_path, class_count=10, split="train"):
    """Load an IDX image/label file pair (big-endian, as published for
    MNIST-family datasets); pixel bytes are scaled to [0, 1]."""
    with open(images_path, "rb") as f:
        magic, n, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, images_path))
        if magic != IDX_IMAGES_MAGIC:
            raise ValueError(f"{images_path}: bad magic 0x{magic:08x}")
        raw = _read_exact(f, n * rows * cols, images_path)
        images = np.frombuffer(raw, dtype=np.uint8).reshape(n, 1, rows, cols)
    with open(labels_path, "rb") as f:
        magic, nl = struct.unpack(">II", _read_exact(f, 8, labels_path))
        if magic != IDX_LABELS_MAGIC:
            raise ValueError(f"{labels_path}: bad magic 0x{magic:08x}")
        labels = np.frombuffer(_read_exact(f, nl, labels_path), dtype=np.uint8)
    if n != nl:
        raise ValueError(f"image count {n} != label count {nl}")
    return LabeledDataset(
        images=images.astype(np.float64) / 255.0,
        labels=labels.astype(np.int64),
        class_count=class_count,
        split=split,
    )


def load_cifar_binary(paths, coarse_byte=False, class_count=10, split="train"):
    """Load CIFAR binary batch files.  Each record is one label byte (plus a
    leading coarse-label byte for CIFAR-100) followed by 3072 channel-major
    pixel bytes; the fine label is used."""
    record = (2 if coarse_byte else 1) + 3072
    all_images, all_labels = [], []
    for path in paths:
        with open(path, "rb") as f:
            raw = f.read()
        if len(raw) % record:
            raise ValueError(f"{path}: length {len(raw)} is not a multiple of record size {record}")
        arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, record)
        labels = arr[:, 1] if coarse_byte else arr[:, 0]
        pixels = arr[:, record - 3072:].reshape(-1, 3, 32, 32)
        all_images.append(pixels)
        all_labels.append(labels)
    images = np.concatenate(all_images).astype(np.float64) / 255.0
    labels = np.concatenate(all_labels).astype(np.int64)
    return LabeledDataset(images=images, labels=labels, class_count=class_count, split=split)


def synthetic_prototypes(class_count, image_shape, seed):
    """The class prototype images make_synthetic draws for a given seed."""
    rng = np.random.default_rng(seed)
    return rng.uniform(0.1, 0.9, size=(class_count,) + tuple(image_shape))


def make_synthetic(class_count, per_class, image_shape, seed, noise=0.1):
    """Class-prototype images plus iid Gaussian noise, clipped to [0, 1].
    Deterministic in the seed; linearly separable at low noise."""
    if class_count <= 0 or per_class <= 0:
        raise ValueError("sizes must be positive")
    rng = np.random.default_rng(seed)
    protos = rng.uniform(0.1, 0.9, size=(class_count,) + tuple(image_shape))
    images = np.repeat(protos, per_class, axis=0)
    labels = np.repeat(np.arange(class_count), per_class)
    if noise:
        images = images + rng.normal(0.0, noise, size=images.shape)
    images = np.clip(images, 0.0, 1.0)
    perm = rng.permutation(images.shape[0])
    return LabeledDataset(
        images=images[perm],
        labels=labels[perm].astype(np.int64),
        class_count=class_count,
        split="train",
    )


def pad_images(ds, size):
    """Zero-pad images symmetrically up to a square spatial size (used to
    bring 28x28 inputs to a pool-friendly 32x32)."""
    n, c, h, w = ds.images.shape
    if h > size or w > size:
        raise ValueError(f"cannot pad {h}x{w} down to {size}")
    if (h, w) == (size, size):
        return ds
    ph, pw = size - h, size - w
    images = np.pad(
        ds.images,
        ((0, 0), (0, 0), (ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2)),
    )
    return LabeledDataset(images=images, labels=ds.labels,
                          class_count=ds.class_count, split=ds.split)


def one_hot(labels, class_count, dtype=np.float64):
    out = np.zeros((labels.shape[0], class_count), dtype=dtype)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def holdout_split(ds, holdout=5000):
    """Split off the last `holdout` samples as a validation set."""
    n = len(ds)
    if holdout >= n:
        raise ValueError("holdout larger than dataset")
    return ds.subset(np.arange(n - holdout)), ds.subset(np.arange(n - holdout, n), split="val")
