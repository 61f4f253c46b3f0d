"""Desk-scale datasets, IDX/CSV ingestion, augmentation and corruptions.

Images are stored as ``(N, C, H, W)`` float arrays with pixels in ``[0, 1]``;
tabular data as ``(N, D)``.  Augmentation and corruption operate on raw
pixels and normalisation is applied afterwards.

Corruption severity table (level 0 is the identity)::

    gaussian-noise  additive N(0, s^2), s      = 0.05, 0.1, 0.2, 0.35, 0.5
    blur-3x3-box    repeated 3x3 box passes    = 1, 2, 3, 4, 5
    contrast-scale  x -> m + c (x - m), c      = 0.8, 0.6, 0.4, 0.3, 0.2
    pixel-dropout   zeroing probability        = 0.05, 0.1, 0.2, 0.35, 0.5
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .numeric import RngStream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

SEVERITY = {
    "gaussian-noise": (0.0, 0.05, 0.1, 0.2, 0.35, 0.5),
    "blur-3x3-box": (0, 1, 2, 3, 4, 5),
    "contrast-scale": (1.0, 0.8, 0.6, 0.4, 0.3, 0.2),
    "pixel-dropout": (0.0, 0.05, 0.1, 0.2, 0.35, 0.5),
}


class DataFormatError(ValueError):
    pass


class BadMagicError(DataFormatError):
    pass


class TruncatedFileError(DataFormatError):
    pass


class CountMismatchError(DataFormatError):
    pass


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    n_classes: int
    split: str = "train"
    norm_mean: np.ndarray | None = None
    norm_std: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if len(self.x) != len(self.y):
            raise ValueError("features and labels differ in length")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ValueError("labels outside the class range")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def is_image(self) -> bool:
        return self.x.ndim == 4

    @property
    def input_shape(self) -> tuple[int, ...]:
        return self.x.shape[1:]

    def subset(self, idx) -> "Dataset":
        return replace(self, x=self.x[idx], y=self.y[idx])


# -- synthetic generators ------------------------------------------------------

def _balanced_counts(n: int, k: int) -> list[int]:
    return [n // k + (1 if c < n % k else 0) for c in range(k)]


def two_moons(n: int, noise_sigma: float, rng: RngStream) -> Dataset:
    if n < 2:
        raise ValueError("two_moons needs n >= 2")
    n0, n1 = _balanced_counts(n, 2)
    t0 = np.pi * rng.random(n0)
    t1 = np.pi * rng.random(n1)
    upper = np.stack([np.cos(t0), np.sin(t0)], axis=1)
    lower = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    x = np.concatenate([upper, lower])
    y = np.concatenate([np.zeros(n0, np.int64), np.ones(n1, np.int64)])
    if noise_sigma:
        x = x + noise_sigma * rng.normal(x.shape)
    order = rng.permutation(n)
    return Dataset(x[order], y[order], 2)


def gaussian_blobs(n: int, k: int, spread: float, rng: RngStream,
                   centers=None, n_classes: int | None = None) -> Dataset:
    """Isotropic blobs; default centres sit on a circle of radius 5."""
    if k < 1 or n < k:
        raise ValueError("gaussian_blobs needs n >= k >= 1")
    if centers is None:
        ang = 2 * np.pi * np.arange(k) / k
        centers = 5.0 * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    centers = np.asarray(centers, dtype=np.float64)
    if len(centers) != k:
        raise ValueError("need one centre per blob")
    xs, ys = [], []
    for c, cnt in enumerate(_balanced_counts(n, k)):
        xs.append(centers[c] + spread * rng.normal((cnt, centers.shape[1])))
        ys.append(np.full(cnt, c, np.int64))
    x, y = np.concatenate(xs), np.concatenate(ys)
    order = rng.permutation(n)
    return Dataset(x[order], y[order] % (n_classes or k), n_classes or k)


def synthetic_digits(n: int, rng: RngStream, part: str = "train") -> tuple[np.ndarray, np.ndarray]:
    """28x28 uint8 digit images rendered from scikit-learn's 8x8 digits.

    The source glyphs are split 75/25 between ``part="train"`` and ``"test"``
    so the two parts never share a source image.  Each sample is upscaled,
    rotated, shifted and speckled.
    """
    from sklearn.datasets import load_digits

    digits = load_digits()
    cut = int(0.75 * len(digits.images))
    sl = slice(0, cut) if part == "train" else slice(cut, None)
    src, lab = digits.images[sl] / 16.0, digits.target[sl]
    pick = rng.integers(0, len(src), n)
    angles = rng.uniform(-15.0, 15.0, n)
    shifts = rng.integers(-2, 3, (n, 2))
    noise = rng.random((n, 28, 28))
    out = np.zeros((n, 28, 28))
    for i in range(n):
        g = ndimage.zoom(src[pick[i]], 2.5, order=1)
        g = ndimage.rotate(g, angles[i], reshape=False, order=1)
        oy, ox = 4 + shifts[i]
        out[i, oy:oy + 20, ox:ox + 20] = g
    out = np.clip(out + 0.15 * (noise - 0.5) * (noise > 0.9), 0.0, 1.0)
    return np.round(out * 255).astype(np.uint8), lab[pick].astype(np.uint8)


# -- IDX format ------------------------------------------------------------------

def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: file too short for an IDX header")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise BadMagicError(f"{path}: bad magic number 0x{got:08x}, expected 0x{magic:08x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise TruncatedFileError(f"{path}: expected {size} data bytes, found {len(raw) - header}")
    if len(raw) - header > size:
        raise DataFormatError(f"{path}: {len(raw) - header - size} trailing bytes after data")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx_images(path_images, path_labels, n_classes: int = 10, split: str = "train") -> Dataset:
    images = _read_idx(path_images, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(path_labels, IDX_LABELS_MAGIC, 1)
    if len(images) != len(labels):
        raise CountMismatchError(f"{len(images)} images but {len(labels)} labels")
    x = images.astype(np.float64)[:, None, :, :] / 255.0
    return Dataset(x, labels.astype(np.int64), n_classes, split)


def load_csv(path, n_classes: int | None = None, split: str = "train") -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty CSV") from None
        if "label" not in header:
            raise DataFormatError(f"{path}: no 'label' column in header")
        li = header.index("label")
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataFormatError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                labels.append(int(row[li]))
                feats.append([float(v) for i, v in enumerate(row) if i != li])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
    x = np.array(feats, dtype=np.float64).reshape(len(labels), len(header) - 1)
    y = np.array(labels, dtype=np.int64)
    k = n_classes if n_classes is not None else (int(y.max()) + 1 if len(y) else 1)
    return Dataset(x, y, k, split)


# -- augmentation, normalisation, splits -------------------------------------------

def pad_crop_flip(img: np.ndarray, offset: tuple[int, int], flip: bool, pad: int = 4) -> np.ndarray:
    """Zero-pad ``img`` (C, H, W), crop at ``offset`` and optionally mirror left-right."""
    _, h, w = img.shape
    padded = np.pad(img, ((0, 0), (pad, pad), (pad, pad)))
    oy, ox = offset
    out = padded[:, oy:oy + h, ox:ox + w]
    return out[:, :, ::-1] if flip else out


def augment(batch: np.ndarray, rng: RngStream, epoch: int = 0, example_ids=None,
            pad: int = 4) -> np.ndarray:
    """Random pad-crop and horizontal flip; image ``i`` uses sub-stream ``(epoch, id_i)``."""
    batch = np.asarray(batch)
    if batch.ndim != 4:
        raise ValueError("augment expects images shaped (batch, channels, height, width)")
    ids = np.arange(len(batch)) if example_ids is None else np.asarray(example_ids)
    out = np.empty_like(batch)
    for i, img in enumerate(batch):
        sub = rng.derive(epoch, int(ids[i]))
        oy, ox = sub.integers(0, 2 * pad + 1, 2)
        flip = bool(sub.uniform_open(1)[0] < 0.5)
        out[i] = pad_crop_flip(img, (int(oy), int(ox)), flip, pad)
    return out


def normalization_stats(ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    axes = (0, 2, 3) if ds.is_image else (0,)
    mean = ds.x.mean(axis=axes)
    std = ds.x.std(axis=axes)
    std = np.where(std > 0, std, 1.0)
    return mean, std


def _bcast(v: np.ndarray, ds: Dataset) -> np.ndarray:
    return v[None, :, None, None] if ds.is_image else v[None, :]


def normalize(ds: Dataset, mean: np.ndarray, std: np.ndarray) -> Dataset:
    x = (ds.x - _bcast(mean, ds)) / _bcast(std, ds)
    return replace(ds, x=x, norm_mean=mean, norm_std=std)


def denormalize(ds: Dataset) -> Dataset:
    if ds.norm_mean is None:
        return ds
    x = ds.x * _bcast(ds.norm_std, ds) + _bcast(ds.norm_mean, ds)
    return replace(ds, x=x, norm_mean=None, norm_std=None)


def split_train_val(ds: Dataset, val_fraction: float, rng: RngStream) -> tuple[Dataset, Dataset]:
    """Stratified, seed-deterministic split into (train, val)."""
    if not 0 < val_fraction < 1:
        raise ValueError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    train_idx, val_idx = [], []
    for c in range(ds.n_classes):
        idx = np.flatnonzero(ds.y == c)
        idx = idx[rng.permutation(len(idx))]
        k = int(round(val_fraction * len(idx)))
        val_idx.append(idx[:k])
        train_idx.append(idx[k:])
    tr = np.sort(np.concatenate(train_idx))
    va = np.sort(np.concatenate(val_idx))
    return replace(ds.subset(tr), split="train"), replace(ds.subset(va), split="val")


# -- corruptions -----------------------------------------------------------------------

@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: int

    def __post_init__(self):
        if self.kind not in SEVERITY:
            raise ValueError(f"unknown corruption kind {self.kind!r}")
        if not 0 <= self.severity <= 5:
            raise ValueError("severity must lie in 0..5")

    @property
    def strength(self):
        return SEVERITY[self.kind][self.severity]

    @property
    def name(self) -> str:
        return f"{self.kind}-{self.severity}"


def corrupt(ds: Dataset, spec: CorruptionSpec, rng: RngStream) -> Dataset:
    """Corrupted copy of raw (un-normalised) ``ds``; image pixels stay in [0, 1]."""
    s = spec.strength
    x = ds.x.copy()
    # One draw per kind, shared by all severities, so levels differ only in strength.
    sub = rng.derive(list(SEVERITY).index(spec.kind))
    if spec.kind == "gaussian-noise" and s:
        x = x + s * sub.normal(x.shape)
    elif spec.kind == "pixel-dropout" and s:
        x = np.where(sub.random(x.shape) < s, 0.0, x)
    elif spec.kind == "contrast-scale" and s != 1.0:
        axes = tuple(range(1, x.ndim))
        m = x.mean(axis=axes, keepdims=True)
        x = m + s * (x - m)
    elif spec.kind == "blur-3x3-box" and s:
        if not ds.is_image:
            raise ValueError("blur-3x3-box needs image data")
        for _ in range(s):
            x = ndimage.uniform_filter(x, size=(1, 1, 3, 3), mode="nearest")
    if ds.is_image:
        x = np.clip(x, 0.0, 1.0)
    return replace(ds, x=x, split=f"{ds.split}:{spec.name}")
