"""Datasets: CIFAR-10 binary files and a synthetic Gaussian-blob generator."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Union

import numpy as np

RECORD_BYTES = 3073  # 1 label byte + 3x32x32 pixels
CIFAR_CLASSES = 10


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_eval: np.ndarray
    y_eval: np.ndarray
    num_classes: int
    mean: Optional[np.ndarray] = None
    std: Optional[np.ndarray] = None
    flip: bool = False
    crop_padding: int = 0
    name: str = "dataset"
    normalized: bool = field(default=False)
    # un-normalised class means, known only for synthetic data
    prototypes: Optional[np.ndarray] = None

    def __post_init__(self):
        for x, y in ((self.x_train, self.y_train), (self.x_eval, self.y_eval)):
            if x.ndim != 4 or len(x) != len(y):
                raise DatasetError("images must be [N, C, H, W] with one label each")
            if len(y) and (y.min() < 0 or y.max() >= self.num_classes):
                raise DatasetError("label out of range")

    def normalize(self) -> "Dataset":
        """Per-channel standardisation with train statistics (idempotent)."""
        if self.normalized:
            return self
        xt = self.x_train.astype(np.float64)
        self.mean = xt.mean(axis=(0, 2, 3))
        self.std = xt.std(axis=(0, 2, 3))
        self.std[self.std == 0] = 1.0
        m, s = self.mean[None, :, None, None], self.std[None, :, None, None]
        self.x_train = ((xt - m) / s).astype(np.float32)
        self.x_eval = ((self.x_eval.astype(np.float64) - m) / s).astype(np.float32)
        self.normalized = True
        return self

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.x_train.shape[1:])


# ---------------------------------------------------------------------------
# CIFAR-10 binary format
# ---------------------------------------------------------------------------

def read_cifar10_records(path: Union[str, os.PathLike]) -> tuple[np.ndarray, np.ndarray]:
    """(uint8 images [N,3,32,32], int64 labels) from one binary batch file."""
    raw = Path(path).read_bytes()
    if len(raw) == 0 or len(raw) % RECORD_BYTES:
        raise DatasetError(f"{path}: size {len(raw)} is not a multiple of {RECORD_BYTES}")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    labels = rec[:, 0].astype(np.int64)
    if labels.max() >= CIFAR_CLASSES:
        bad = int(np.argmax(labels >= CIFAR_CLASSES))
        raise DatasetError(f"{path}: record {bad} has label {labels[bad]}")
    return rec[:, 1:].reshape(-1, 3, 32, 32).copy(), labels


def write_cifar10_records(path, images: np.ndarray, labels: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8).reshape(len(labels), -1)
    if images.shape[1] != RECORD_BYTES - 1:
        raise DatasetError("CIFAR-10 images are 3x32x32")
    rec = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], images], axis=1)
    Path(path).write_bytes(rec.tobytes())


def load_cifar10_binary(path, eval_path=None, eval_fraction: float = 0.1, flip: bool = True,
                        crop_padding: int = 4) -> Dataset:
    """Load CIFAR-10 binary batches.

    ``path`` is a directory holding ``data_batch_*.bin`` / ``test_batch.bin``
    or a single batch file. Without a separate eval file the last
    ``eval_fraction`` of the records is held out.
    """
    p = Path(path)
    if not p.exists():
        raise DatasetError(f"{path}: no such file or directory")
    if p.is_dir():
        train_files = sorted(p.glob("data_batch_*.bin"))
        if not train_files:
            raise DatasetError(f"{path}: no data_batch_*.bin files")
        if eval_path is None and (p / "test_batch.bin").exists():
            eval_path = p / "test_batch.bin"
    else:
        train_files = [p]
    parts = [read_cifar10_records(f) for f in train_files]
    x = np.concatenate([a for a, _ in parts])
    y = np.concatenate([b for _, b in parts])
    if eval_path is not None:
        xe, ye = read_cifar10_records(eval_path)
    else:
        n_eval = int(round(len(y) * eval_fraction))
        x, xe, y, ye = x[:len(y) - n_eval], x[len(y) - n_eval:], y[:len(y) - n_eval], y[len(y) - n_eval:]
    return Dataset(x.astype(np.float32) / 255, y, xe.astype(np.float32) / 255, ye, CIFAR_CLASSES,
                   flip=flip, crop_padding=crop_padding, name="cifar10").normalize()


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Class-conditioned Gaussian blobs plus i.i.d. pixel noise.

    Each class has a prototype image (a coloured Gaussian blob); class
    prototypes are scaled so that the closest two are ``separation * noise_std``
    apart in pixel space.
    """

    num_classes: int = 10
    n_train: int = 2000
    n_eval: int = 500
    image_size: int = 32
    channels: int = 3
    separation: float = 10.0
    noise_std: float = 1.0
    blob_width: float = 0.18
    flip: bool = False
    crop_padding: int = 0

    def __post_init__(self):
        if self.num_classes < 2 or self.n_train < 1 or self.n_eval < 0:
            raise ValueError("invalid synthetic dataset sizes")
        if self.separation <= 0 or self.noise_std <= 0:
            raise ValueError("separation and noise_std must be positive")


def class_prototypes(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    s = spec.image_size
    yy, xx = np.mgrid[0:s, 0:s] / (s - 1)
    protos = np.empty((spec.num_classes, spec.channels, s, s))
    for k in range(spec.num_classes):
        cy, cx = rng.uniform(0.2, 0.8, 2)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * spec.blob_width ** 2))
        color = rng.normal(size=spec.channels)
        protos[k] = color[:, None, None] * blob
    flat = protos.reshape(spec.num_classes, -1)
    d = np.sqrt(((flat[:, None] - flat[None]) ** 2).sum(-1))
    closest = d[~np.eye(spec.num_classes, dtype=bool)].min()
    return protos * (spec.separation * spec.noise_std / closest)


def generate_synthetic(spec: SyntheticSpec = SyntheticSpec(), seed: int = 0) -> Dataset:
    rng = np.random.default_rng(seed)
    protos = class_prototypes(spec, rng)

    def draw(n):
        y = rng.integers(0, spec.num_classes, n)
        x = protos[y] + spec.noise_std * rng.normal(size=(n,) + protos.shape[1:])
        return x.astype(np.float32), y

    xt, yt = draw(spec.n_train)
    xe, ye = draw(spec.n_eval)
    ds = Dataset(xt, yt, xe, ye, spec.num_classes, flip=spec.flip, crop_padding=spec.crop_padding,
                 name="synthetic", prototypes=protos)
    return ds.normalize()


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def augment(x: np.ndarray, rng: np.random.Generator, flip: bool, crop_padding: int) -> np.ndarray:
    """Random horizontal flips and zero-padded random crops."""
    out = x
    if flip:
        mask = rng.random(len(x)) < 0.5
        out = out.copy()
        out[mask] = out[mask, :, :, ::-1]
    if crop_padding:
        p = crop_padding
        n, _, h, w = out.shape
        padded = np.pad(out, ((0, 0), (0, 0), (p, p), (p, p)))
        offs = rng.integers(0, 2 * p + 1, size=(n, 2))
        out = np.stack([padded[i, :, dy:dy + h, dx:dx + w] for i, (dy, dx) in enumerate(offs)])
    return out


def iterate_batches(ds: Dataset, batch_size: int, rng: np.random.Generator,
                    train: bool = True) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Shuffled, augmented training batches, or ordered eval batches."""
    if train:
        order = rng.permutation(len(ds.y_train))
        for i in range(0, len(order), batch_size):
            idx = order[i:i + batch_size]
            yield augment(ds.x_train[idx], rng, ds.flip, ds.crop_padding), ds.y_train[idx]
    else:
        for i in range(0, len(ds.y_eval), batch_size):
            yield ds.x_eval[i:i + batch_size], ds.y_eval[i:i + batch_size]


def prototype_accuracy(ds: Dataset, split: str = "eval") -> float:
    """Accuracy of the nearest-true-prototype rule (the Bayes classifier for isotropic noise)."""
    if ds.prototypes is None:
        raise DatasetError("dataset has no known prototypes")
    x, y = (ds.x_eval, ds.y_eval) if split == "eval" else (ds.x_train, ds.y_train)
    x = x.astype(np.float64)
    if ds.normalized:
        x = x * ds.std[None, :, None, None] + ds.mean[None, :, None, None]
    x = x.reshape(len(x), -1)
    p = ds.prototypes.reshape(len(ds.prototypes), -1)
    d = (x ** 2).sum(1)[:, None] - 2 * x @ p.T + (p ** 2).sum(1)[None]
    return float((d.argmin(1) == y).mean())


def pairwise_error_bound(separation: float, num_classes: int) -> float:
    """Union bound on the Bayes error: (K-1) * Phi(-separation / 2)."""
    from math import erfc, sqrt
    return (num_classes - 1) * 0.5 * erfc(separation / 2 / sqrt(2))


def nearest_mean_accuracy(ds: Dataset) -> float:
    """Accuracy of the (linear) nearest-class-mean rule fitted on train, scored on eval."""
    xt = ds.x_train.reshape(len(ds.x_train), -1)
    xe = ds.x_eval.reshape(len(ds.x_eval), -1)
    means = np.stack([xt[ds.y_train == k].mean(0) for k in range(ds.num_classes)])
    d = (xe ** 2).sum(1)[:, None] - 2 * xe @ means.T + (means ** 2).sum(1)[None]
    return float((d.argmin(1) == ds.y_eval).mean())
