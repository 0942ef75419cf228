"""The fifteen failure patterns: synthesis, ingestion and extended test sets."""
from __future__ import annotations

import io
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .constants import (INGEST_ONLY_KINDS, KIND_NAMES, KINDS, SEVERITIES,
                        SEVERITY_PARAMS, SYNTHESIZED_KINDS)
from .data import LabelledDataset, from_uint8, to_uint8
from .errors import (DatasetLoadError, ParameterError, UnsupportedCorruptionError,
                     ValidationError)


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: int = 1
    params: dict = field(default_factory=dict)
    source: str = "synthesized"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown corruption kind {self.kind!r}; expected one of {KINDS}")
        if self.severity not in SEVERITIES:
            raise ValidationError(f"severity must be in 1..5, got {self.severity}")
        if self.source not in ("synthesized", "ingested"):
            raise ValidationError(f"source must be 'synthesized' or 'ingested', got {self.source!r}")
        if not self.params and self.kind in SEVERITY_PARAMS:
            object.__setattr__(self, "params", dict(SEVERITY_PARAMS[self.kind][self.severity - 1]))


def _gaussian_noise(x, rng, sigma):
    return x + rng.normal(size=x.shape) * sigma


def _shot_noise(x, rng, photons):
    return rng.poisson(x * photons) / photons


def _impulse_noise(x, rng, amount):
    # salt-and-pepper with equal odds, applied per element
    out = x.copy()
    hit = rng.random(x.shape) < amount
    salt = rng.random(x.shape) < 0.5
    out[hit & salt] = 1.0
    out[hit & ~salt] = 0.0
    return out


def _gaussian_kernel3(sigma):
    t = np.array([-1.0, 0.0, 1.0])
    g = np.exp(-(t**2) / (2 * sigma**2))
    return g / g.sum()


def disk_kernel(radius, alias_blur):
    """Aliased disk of the given radius smoothed by a 3x3 Gaussian."""
    grid = np.arange(-8, 9)
    xx, yy = np.meshgrid(grid, grid)
    disk = ((xx**2 + yy**2) <= radius**2).astype(np.float64)
    disk /= disk.sum()
    g = _gaussian_kernel3(alias_blur)
    disk = ndimage.correlate1d(disk, g, axis=0, mode="mirror")
    return ndimage.correlate1d(disk, g, axis=1, mode="mirror")


def _defocus_blur(x, rng, radius, alias_blur):
    k = disk_kernel(radius, alias_blur)
    return np.stack([ndimage.correlate(x[..., c], k, mode="mirror")
                     for c in range(x.shape[-1])], axis=-1)


def motion_kernel(radius, sigma, angle_deg):
    """One-sided line kernel with Gaussian falloff, rotated by ``angle_deg``."""
    size = 2 * radius + 1
    k = np.zeros((size, size))
    a = np.deg2rad(angle_deg)
    for t in np.linspace(0, radius, 4 * radius + 1):
        w = np.exp(-(t**2) / (2 * sigma**2))
        px, py = radius + t * np.cos(a), radius - t * np.sin(a)
        x0, y0 = int(np.floor(px)), int(np.floor(py))
        fx, fy = px - x0, py - y0
        for dx, dy, ww in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)),
                           (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
            if 0 <= x0 + dx < size and 0 <= y0 + dy < size:
                k[y0 + dy, x0 + dx] += w * ww
    return k / k.sum()


def _motion_blur(x, rng, radius, sigma):
    k = motion_kernel(int(radius), sigma, rng.uniform(-45, 45))
    return np.stack([ndimage.correlate(x[..., c], k, mode="nearest")
                     for c in range(x.shape[-1])], axis=-1)


def _brightness(x, rng, offset):
    # HSV value shift with hue/saturation kept: rgb scales by v'/v, black goes grey
    v = x.max(axis=-1, keepdims=True)
    v_new = np.clip(v + offset, 0.0, 1.0)
    safe = np.where(v > 0, v, 1.0)
    return np.where(v > 0, x * (v_new / safe), v_new)


def _contrast(x, rng, factor):
    means = x.mean(axis=(0, 1), keepdims=True)
    return (x - means) * factor + means


def _pixelate(x, rng, factor):
    if factor >= 1.0:
        return x
    h, w = x.shape[:2]
    im = Image.fromarray(to_uint8(x).squeeze())
    im = im.resize((int(w * factor), int(h * factor)), Image.BOX).resize((w, h), Image.BOX)
    return from_uint8(np.asarray(im)).reshape(x.shape)


def jpeg_roundtrip(x, quality):
    buf = io.BytesIO()
    Image.fromarray(to_uint8(x).squeeze()).save(buf, format="JPEG", quality=int(quality))
    buf.seek(0)
    with Image.open(buf) as im:
        return from_uint8(np.asarray(im)).reshape(x.shape)


def _jpeg(x, rng, quality):
    return jpeg_roundtrip(x, quality)


_SYNTH = {
    "GN": _gaussian_noise,
    "SN": _shot_noise,
    "IN": _impulse_noise,
    "DB": _defocus_blur,
    "MB": _motion_blur,
    "BS": _brightness,
    "CT": _contrast,
    "PIX": _pixelate,
    "JPEG": _jpeg,
}
assert set(_SYNTH) == SYNTHESIZED_KINDS


def apply_corruption(image, spec: CorruptionSpec, rng=None) -> np.ndarray:
    """Corrupt one (H, W, C) image in [0, 1]; output is clamped to [0, 1].

    ``rng`` may be a ``numpy.random.Generator`` or an integer seed.
    """
    if spec.source != "synthesized" or spec.kind not in SYNTHESIZED_KINDS:
        raise UnsupportedCorruptionError(
            f"{spec.kind} ({KIND_NAMES[spec.kind]}) is not synthesized natively; "
            f"ingest precomputed arrays with ingest_corrupted()")
    x = np.asarray(image, dtype=np.float64)
    if x.ndim != 3:
        raise ValidationError(f"expected a single (H, W, C) image, got shape {x.shape}")
    rng = np.random.default_rng(rng)
    out = _SYNTH[spec.kind](x, rng, **spec.params)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def _image_seed(seed, kind, severity, index):
    return np.random.SeedSequence([int(seed), zlib.crc32(kind.encode()), severity, int(index)])


def corrupt_dataset(dataset: LabelledDataset, kind, severity, seed=0) -> LabelledDataset:
    spec = CorruptionSpec(kind, severity)
    out = np.empty_like(dataset.images)
    for i, img in enumerate(dataset.images):
        rng = np.random.default_rng(_image_seed(seed, kind, severity, i))
        out[i] = apply_corruption(img, spec, rng)
    return LabelledDataset(out, dataset.labels, dataset.num_classes,
                           f"{dataset.name}-{kind}{severity}")


def ingest_file(root, kind) -> Path:
    root = Path(root)
    for name in (f"{KIND_NAMES[kind]}.npy", f"{kind}.npy", f"{kind.lower()}.npy"):
        if (root / name).exists():
            return root / name
    raise UnsupportedCorruptionError(
        f"no ingested array for {kind} under {root} (expected {KIND_NAMES[kind]}.npy)")


def ingest_corrupted(path, kind, severities=SEVERITIES, clean_labels=None,
                     num_classes=10) -> LabelledDataset:
    """Load a precomputed (5*N, H, W, C) uint8 array, severity-major.

    ``path`` is the array file or a directory holding ``<kind_name>.npy``
    (CIFAR-10-C layout, with an optional ``labels.npy``). Labels come from
    ``clean_labels`` (the clean test set, length N) or the labels file.
    """
    if kind not in KINDS:
        raise ValidationError(f"unknown corruption kind {kind!r}")
    path = Path(path)
    file = ingest_file(path, kind) if path.is_dir() else path
    try:
        arr = np.load(file, mmap_mode="r")
    except (OSError, ValueError) as exc:
        raise DatasetLoadError(f"cannot read corrupted array {file}: {exc}") from exc
    if arr.ndim != 4 or arr.shape[0] % len(SEVERITIES):
        raise ValidationError(f"{file}: expected (5*N, H, W, C), got shape {arr.shape}")
    n = arr.shape[0] // len(SEVERITIES)

    labels_file = file.parent / "labels.npy"
    if clean_labels is None:
        if not labels_file.exists():
            raise DatasetLoadError(f"no labels given and {labels_file} does not exist")
        all_labels = np.load(labels_file)
        if len(all_labels) != arr.shape[0]:
            raise ValidationError(
                f"{labels_file} has {len(all_labels)} labels for {arr.shape[0]} images")
        clean_labels = all_labels[:n]
    clean_labels = np.asarray(clean_labels)
    if len(clean_labels) != n:
        raise ValidationError(
            f"{file} holds {n} images per severity but {len(clean_labels)} clean labels were given")

    severities = list(severities)
    bad = [s for s in severities if s not in SEVERITIES]
    if bad:
        raise ValidationError(f"severities must be in 1..5, got {bad}")
    blocks = [np.asarray(arr[(s - 1) * n: s * n]) for s in severities]
    images = np.concatenate(blocks)
    if images.dtype == np.uint8:
        images = from_uint8(images)
    labels = np.tile(clean_labels, len(severities))
    return LabelledDataset(images, labels, num_classes, f"{kind}-ingested",
                           meta={"severities": severities})


def build_corrupted_testset(clean_test: LabelledDataset, kind, seed=0,
                            ingest_root=None) -> LabelledDataset:
    """Stack severities 1..5 of ``kind`` over ``clean_test`` (severity-major).

    Synthesized kinds are generated; others are read from ``ingest_root``.
    """
    if kind not in KINDS:
        raise ValidationError(f"unknown corruption kind {kind!r}")
    if kind in SYNTHESIZED_KINDS:
        blocks = [corrupt_dataset(clean_test, kind, s, seed) for s in SEVERITIES]
        return LabelledDataset(np.concatenate([b.images for b in blocks]),
                               np.tile(clean_test.labels, len(SEVERITIES)),
                               clean_test.num_classes, f"{clean_test.name}-{kind}")
    if ingest_root is None:
        raise UnsupportedCorruptionError(
            f"{kind} is ingestion-only ({', '.join(sorted(INGEST_ONLY_KINDS))}); "
            f"pass ingest_root pointing at a directory with {KIND_NAMES[kind]}.npy")
    ds = ingest_corrupted(ingest_root, kind, SEVERITIES, clean_test.labels,
                          clean_test.num_classes)
    if ds.image_shape != clean_test.image_shape:
        raise ValidationError(
            f"ingested {kind} images have shape {ds.image_shape}, clean test {clean_test.image_shape}")
    return LabelledDataset(ds.images, ds.labels, ds.num_classes, f"{clean_test.name}-{kind}")
