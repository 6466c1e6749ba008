"""Datasets: IDX (MNIST) parsing, stratified subsetting and Gaussian blobs."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, IdxFormatError, IdxTruncatedError, ValidationError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValidationError(
                f"features {self.features.shape} and labels {self.labels.shape} do not align")
        if np.any(~np.isfinite(self.features)):
            raise ValidationError("features contain NaN or Inf")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValidationError(f"label indices must lie in [0, {self.n_classes})")

    def __len__(self):
        return len(self.labels)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)


@dataclass(frozen=True)
class BlobSpec:
    n_classes: int
    dim: int
    samples_per_class: int
    cluster_spread: float
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.n_classes}")
        if self.dim < 1 or self.samples_per_class < 1:
            raise ConfigError("dim and samples_per_class must be positive")
        if not self.cluster_spread > 0:
            raise ConfigError(f"cluster spread must be positive, got {self.cluster_spread}")


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    try:
        with opener(path, "rb") as fh:
            return fh.read()
    except EOFError as exc:  # gzip stream cut short
        raise IdxTruncatedError(f"{path}: truncated gzip stream") from exc


def _parse_idx(raw: bytes, path, magic: int, ndim: int) -> np.ndarray:
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise IdxTruncatedError(f"{path}: file too short for an IDX header ({len(raw)} bytes)")
    (found,) = struct.unpack_from(">I", raw, 0)
    if found != magic:
        raise IdxFormatError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    size = int(np.prod(dims))
    if len(raw) - header_len < size:
        raise IdxTruncatedError(f"{path}: payload has {len(raw) - header_len} bytes, header promises {size}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header_len).reshape(dims)


def load_idx(images_path, labels_path, n_classes: int = 10) -> Dataset:
    """Read an IDX image/label pair (optionally gzipped) into a Dataset.

    Images become rows of ``rows * cols`` pixels scaled by 1/255.
    """
    images = _parse_idx(_read_bytes(images_path), images_path, IMAGES_MAGIC, 3)
    labels = _parse_idx(_read_bytes(labels_path), labels_path, LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise ValidationError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(features, labels.astype(np.int64), n_classes)


def write_idx(path, array, magic=None):
    """Write a uint8 array as IDX; magic defaults from the array rank."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    if magic is None:
        magic = 0x00000800 | array.ndim
    header = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape)
    path = Path(path)
    payload = header + array.tobytes()
    if path.suffix == ".gz":
        with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as fh:
            fh.write(payload)
    else:
        path.write_bytes(payload)
    return path


def _find(data_dir: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        if (data_dir / name).exists():
            return data_dir / name
    raise FileNotFoundError(f"{data_dir}: missing {stem}[.gz]")


def load_mnist(data_dir):
    """Return ``(train, test)`` from the standard MNIST file names in ``data_dir``."""
    data_dir = Path(data_dir)
    train = load_idx(_find(data_dir, "train-images-idx3-ubyte"), _find(data_dir, "train-labels-idx1-ubyte"))
    test = load_idx(_find(data_dir, "t10k-images-idx3-ubyte"), _find(data_dir, "t10k-labels-idx1-ubyte"))
    return train, test


def make_blobs(spec: BlobSpec) -> Dataset:
    """Isotropic Gaussian clusters around centers on the unit sphere.

    Samples are shuffled; the same spec always gives the same dataset.
    """
    rng = np.random.default_rng(spec.seed)
    centers = rng.normal(size=(spec.n_classes, spec.dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    labels = np.repeat(np.arange(spec.n_classes), spec.samples_per_class)
    noise = rng.normal(scale=spec.cluster_spread, size=(labels.size, spec.dim))
    features = np.clip(centers[labels] + noise, -1e6, 1e6)
    order = rng.permutation(labels.size)
    return Dataset(features[order], labels[order], spec.n_classes)


def blob_centers(spec: BlobSpec) -> np.ndarray:
    """Centers used by ``make_blobs`` for the same spec."""
    rng = np.random.default_rng(spec.seed)
    centers = rng.normal(size=(spec.n_classes, spec.dim))
    return centers / np.linalg.norm(centers, axis=1, keepdims=True)


def subset(ds: Dataset, per_class: int, seed: int) -> Dataset:
    """Stratified sample with exactly ``per_class`` rows of every class, shuffled."""
    counts = ds.class_counts()
    if per_class < 1 or per_class > counts.min():
        raise ValidationError(
            f"requested {per_class} per class but the smallest class has {counts.min()} samples")
    rng = np.random.default_rng(seed)
    picked = [rng.choice(np.flatnonzero(ds.labels == c), size=per_class, replace=False)
              for c in range(ds.n_classes)]
    idx = rng.permutation(np.concatenate(picked))
    return Dataset(ds.features[idx], ds.labels[idx], ds.n_classes)


def select_classes(ds: Dataset, classes) -> Dataset:
    """Keep only ``classes`` and relabel them 0..k-1 in the given order."""
    classes = list(classes)
    mapping = np.full(ds.n_classes, -1)
    mapping[classes] = np.arange(len(classes))
    keep = mapping[ds.labels] >= 0
    return Dataset(ds.features[keep], mapping[ds.labels[keep]], len(classes))
