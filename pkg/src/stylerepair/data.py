"""Labelled image datasets and their on-disk formats.

Images are held as float32 arrays of shape (count, height, width, channels)
with values in [0, 1]. Supported inputs:

* CIFAR-10 python batches (``cifar-10-batches-py``)
* CIFAR-10 binary batches (``cifar-10-batches-bin``)
* a directory of image files with a ``labels.csv`` index (``filename,label``)
* the package's own ``.npz`` cache written by :func:`save_npz`
"""
from __future__ import annotations

import csv
import pickle
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DatasetLoadError, ValidationError

CIFAR_TRAIN_BATCHES = [f"data_batch_{i}" for i in range(1, 6)]
CIFAR_TEST_BATCHES = ["test_batch"]


@dataclass(frozen=True)
class LabelledDataset:
    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = ""
    # free-form provenance, e.g. the source index of every row
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float32)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 4:
            raise ValidationError(f"images must be (count, H, W, C), got shape {images.shape}")
        if labels.ndim != 1 or len(labels) != len(images):
            raise ValidationError(
                f"{len(images)} images but labels have shape {labels.shape}")
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise ValidationError("pixel values must lie in [0, 1]")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValidationError(
                f"labels must lie in [0, {self.num_classes}), "
                f"found [{labels.min()}, {labels.max()}]")
        images.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.labels)

    @property
    def image_shape(self):
        return self.images.shape[1:]

    def subset(self, indices, name=None) -> "LabelledDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return LabelledDataset(self.images[indices], self.labels[indices],
                               self.num_classes, name or self.name,
                               meta={"indices": indices})

    def head(self, n, name=None) -> "LabelledDataset":
        return self.subset(np.arange(min(n, len(self))), name)


def concat(datasets, name="") -> LabelledDataset:
    num_classes = {d.num_classes for d in datasets}
    if len(num_classes) != 1:
        raise ValidationError(f"cannot concatenate datasets with class counts {num_classes}")
    return LabelledDataset(np.concatenate([d.images for d in datasets]),
                           np.concatenate([d.labels for d in datasets]),
                           num_classes.pop(), name)


def to_uint8(images: np.ndarray) -> np.ndarray:
    return np.round(np.clip(images, 0.0, 1.0) * 255.0).astype(np.uint8)


def from_uint8(images: np.ndarray) -> np.ndarray:
    return images.astype(np.float32) / 255.0


def _read_pickle_batch(path: Path):
    try:
        with open(path, "rb") as fh:
            batch = pickle.load(fh, encoding="bytes")
        data = np.asarray(batch[b"data"], dtype=np.uint8)
        labels = np.asarray(batch[b"labels"], dtype=np.int64)
    except FileNotFoundError:
        raise DatasetLoadError(f"missing CIFAR batch file: {path}") from None
    except Exception as exc:
        raise DatasetLoadError(f"corrupt CIFAR batch file {path}: {exc}") from exc
    if data.ndim != 2 or data.shape[1] != 3072 or len(data) != len(labels):
        raise DatasetLoadError(f"corrupt CIFAR batch file {path}: data shape {data.shape}")
    return data.reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1), labels


def _read_binary_batch(path: Path):
    try:
        raw = np.fromfile(path, dtype=np.uint8)
    except FileNotFoundError:
        raise DatasetLoadError(f"missing CIFAR batch file: {path}") from None
    if raw.size == 0 or raw.size % 3073:
        raise DatasetLoadError(f"corrupt CIFAR batch file {path}: {raw.size} bytes")
    rows = raw.reshape(-1, 3073)
    return (rows[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1),
            rows[:, 0].astype(np.int64))


def _cifar_dir(path: Path):
    for sub, kind in (("cifar-10-batches-py", "py"), ("cifar-10-batches-bin", "bin")):
        if (path / sub).is_dir():
            return path / sub, kind
    if (path / "test_batch").exists() or (path / "data_batch_1").exists():
        return path, "py"
    if (path / "test_batch.bin").exists() or (path / "data_batch_1.bin").exists():
        return path, "bin"
    return None, None


def _load_image_dir(path: Path, split: str):
    root = path / split if (path / split).is_dir() else path
    index = root / "labels.csv"
    if not index.exists():
        raise DatasetLoadError(f"no dataset found under {path} (looked for CIFAR batches and {index})")
    images, labels = [], []
    with open(index, newline="") as fh:
        for row in csv.DictReader(fh):
            file = root / row["filename"]
            try:
                with Image.open(file) as im:
                    images.append(np.asarray(im.convert("RGB"), dtype=np.uint8))
            except (OSError, ValueError) as exc:
                raise DatasetLoadError(f"cannot read image {file}: {exc}") from exc
            labels.append(int(row["label"]))
    if not images:
        raise DatasetLoadError(f"label index {index} lists no images")
    return np.stack(images), np.asarray(labels, dtype=np.int64)


def load_dataset(path, split="train", num_classes=None) -> LabelledDataset:
    """Load the ``train`` or ``test`` split found under ``path``."""
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    path = Path(path)
    if path.suffix == ".npz":
        return load_npz(path)
    if not path.is_dir():
        raise DatasetLoadError(f"dataset path does not exist: {path}")

    root, kind = _cifar_dir(path)
    if root is not None:
        names = CIFAR_TRAIN_BATCHES if split == "train" else CIFAR_TEST_BATCHES
        reader = _read_pickle_batch if kind == "py" else _read_binary_batch
        suffix = "" if kind == "py" else ".bin"
        parts = [reader(root / (n + suffix)) for n in names]
        data = np.concatenate([p[0] for p in parts])
        labels = np.concatenate([p[1] for p in parts])
        num_classes = num_classes or 10
    else:
        data, labels = _load_image_dir(path, split)
        num_classes = num_classes or int(labels.max()) + 1
    return LabelledDataset(from_uint8(data), labels, num_classes, name=split)


def save_npz(dataset: LabelledDataset, path, **extra):
    """Write ``dataset`` as 8-bit pixels; lossless for 8-bit-quantized images.

    ``extra`` string fields (e.g. a config hash) are stored alongside.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez_compressed(tmp, images=to_uint8(dataset.images), labels=dataset.labels,
                        num_classes=dataset.num_classes, name=dataset.name,
                        **{f"meta_{k}": str(v) for k, v in extra.items()})
    tmp.replace(path)


def load_npz(path) -> LabelledDataset:
    path = Path(path)
    try:
        with np.load(path) as z:
            images, labels = z["images"], z["labels"]
            num_classes, name = int(z["num_classes"]), str(z["name"])
    except FileNotFoundError:
        raise DatasetLoadError(f"missing dataset file: {path}") from None
    except Exception as exc:
        raise DatasetLoadError(f"corrupt dataset file {path}: {exc}") from exc
    if images.dtype == np.uint8:
        images = from_uint8(images)
    return LabelledDataset(images, labels, num_classes, name)


# ---------------------------------------------------------------------------
# procedural stand-in for CIFAR-10

SHAPE_CLASSES = ("disk", "square", "triangle", "ring", "cross",
                 "h-bars", "v-bars", "d-bars", "checker", "two-disks")


def make_shapes_dataset(n, seed=0, size=32, name="shapes") -> LabelledDataset:
    """Ten-class 32x32 colour images of procedurally drawn shapes and textures.

    Used for demos and tests where CIFAR-10 is not available. Classes differ
    in geometry only; colours, position, scale and background gradient are
    random nuisances.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / (size - 1) * 2 - 1
    images = np.empty((n, size, size, 3), dtype=np.float32)
    labels = rng.integers(0, 10, size=n)
    for i, c in enumerate(labels):
        cx, cy = rng.uniform(-0.3, 0.3, size=2)
        r = rng.uniform(0.35, 0.6)
        theta = rng.uniform(-0.4, 0.4)
        u = ((xx - cx) * np.cos(theta) + (yy - cy) * np.sin(theta)) / r
        v = (-(xx - cx) * np.sin(theta) + (yy - cy) * np.cos(theta)) / r
        period = rng.uniform(0.25, 0.4)
        if c == 0:
            mask = u**2 + v**2 <= 1
        elif c == 1:
            mask = np.maximum(abs(u), abs(v)) <= 0.85
        elif c == 2:
            mask = (v <= 0.7) & (v >= 1.7 * abs(u) - 0.9)
        elif c == 3:
            rad = np.sqrt(u**2 + v**2)
            mask = (rad <= 1) & (rad >= 0.6)
        elif c == 4:
            mask = ((abs(u) <= 0.28) & (abs(v) <= 1)) | ((abs(v) <= 0.28) & (abs(u) <= 1))
        elif c == 5:
            mask = np.mod(yy / period + rng.uniform(), 1.0) < 0.5
        elif c == 6:
            mask = np.mod(xx / period + rng.uniform(), 1.0) < 0.5
        elif c == 7:
            mask = np.mod((xx + yy) / (1.4 * period) + rng.uniform(), 1.0) < 0.5
        elif c == 8:
            a = np.floor(xx / period * 0.8) + np.floor(yy / period * 0.8)
            mask = np.mod(a, 2) == 0
        else:
            d1 = (u - 0.55) ** 2 + v**2
            d2 = (u + 0.55) ** 2 + v**2
            mask = (d1 <= 0.16) | (d2 <= 0.16)
        fg = rng.uniform(0.0, 1.0, size=3)
        bg = rng.uniform(0.0, 1.0, size=3)
        while np.abs(fg - bg).sum() < 0.6:
            bg = rng.uniform(0.0, 1.0, size=3)
        grad = rng.uniform(-0.15, 0.15, size=2)
        shade = (grad[0] * xx + grad[1] * yy)[..., None]
        img = np.where(mask[..., None], fg, bg) + shade
        images[i] = np.clip(img + rng.normal(0, 0.02, size=img.shape), 0, 1)
    # quantize so that the uint8 npz cache is lossless
    return LabelledDataset(from_uint8(to_uint8(images)), labels, 10, name)
