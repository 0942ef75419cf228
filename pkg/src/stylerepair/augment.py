"""Augmentation operations, the style-guided mixer and baseline augmenters.

All image operations take and return float (H, W, C) arrays in [0, 1].
An :class:`AugOperation` bundles an operation with the rule that draws its
magnitude from a ``numpy.random.Generator`` on every call.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from PIL import Image, ImageOps
from scipy import ndimage

from . import constants as C
from .data import from_uint8, to_uint8
from .errors import ConfigurationError, ParameterError
from .sampling import SamplingDistribution, nearest_to_centers, sample_reference
from .style import MomentMatching, StyleBackend, transfer


# ---------------------------------------------------------------------------
# base operations with explicit magnitudes

def autocontrast(x):
    lo = x.min(axis=(0, 1), keepdims=True)
    hi = x.max(axis=(0, 1), keepdims=True)
    span = hi - lo
    out = np.where(span > 0, (x - lo) / np.where(span > 0, span, 1.0), x)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def equalize(x):
    q = to_uint8(x)
    chans = [np.asarray(ImageOps.equalize(Image.fromarray(q[..., c]))) for c in range(q.shape[-1])]
    return from_uint8(np.stack(chans, axis=-1))


def posterize(x, bits):
    if not 1 <= bits <= 8:
        raise ParameterError(f"posterize bits must be in 1..8, got {bits}")
    mask = np.uint8((0xFF << (8 - int(bits))) & 0xFF)
    return from_uint8(to_uint8(x) & mask)


def solarize(x, threshold):
    """Invert pixels strictly above ``threshold`` (in [0, 1])."""
    if not 0.0 <= threshold <= 1.0:
        raise ParameterError(f"solarize threshold must be in [0, 1], got {threshold}")
    return np.where(x > threshold, 1.0 - x, x).astype(np.float32)


def _affine(x, matrix):
    # matrix maps output (row, col) about the centre to input (row, col)
    if np.allclose(matrix, np.eye(2)):
        return np.asarray(x, dtype=np.float32).copy()
    centre = (np.array(x.shape[:2]) - 1) / 2.0
    offset = centre - matrix @ centre
    chans = [ndimage.affine_transform(x[..., c], matrix, offset=offset, order=1,
                                      mode="constant", cval=0.0)
             for c in range(x.shape[-1])]
    return np.clip(np.stack(chans, axis=-1), 0.0, 1.0).astype(np.float32)


def rotate(x, degrees):
    if abs(degrees) > 180:
        raise ParameterError(f"rotation must be within +-180 degrees, got {degrees}")
    a = np.deg2rad(degrees)
    return _affine(x, np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]]))


def shear_x(x, factor):
    if abs(factor) > 1:
        raise ParameterError(f"shear factor must be within +-1, got {factor}")
    return _affine(x, np.array([[1.0, 0.0], [factor, 1.0]]))


def shear_y(x, factor):
    if abs(factor) > 1:
        raise ParameterError(f"shear factor must be within +-1, got {factor}")
    return _affine(x, np.array([[1.0, factor], [0.0, 1.0]]))


def _translate(x, rows, cols):
    limit = x.shape[0] if rows else x.shape[1]
    if abs(rows) > limit or abs(cols) > limit:
        raise ParameterError(f"translation must be within the image size ({limit}px)")
    if rows == 0 and cols == 0:
        return np.asarray(x, dtype=np.float32).copy()
    chans = [ndimage.shift(x[..., c], (rows, cols), order=1, mode="constant", cval=0.0)
             for c in range(x.shape[-1])]
    return np.clip(np.stack(chans, axis=-1), 0.0, 1.0).astype(np.float32)


def translate_x(x, pixels):
    return _translate(x, 0, pixels)


def translate_y(x, pixels):
    return _translate(x, pixels, 0)


# ---------------------------------------------------------------------------
# magnitude sampling (AugMix reference rules)

def _level(rng, severity=C.AUG_SEVERITY):
    return rng.uniform(0.1, severity)


def _sign(rng):
    return 1 if rng.uniform() < 0.5 else -1


def _sampled(name, x, rng):
    if name == "autocontrast":
        return autocontrast(x)
    if name == "equalize":
        return equalize(x)
    if name == "posterize":
        return posterize(x, C.MAX_POSTERIZE_DROP - int(_level(rng) * C.MAX_POSTERIZE_DROP / 10))
    if name == "rotate":
        return rotate(x, _sign(rng) * int(_level(rng) * C.MAX_ROTATE_DEG / 10))
    if name == "solarize":
        drop = int(_level(rng) * C.MAX_SOLARIZE_DROP / 10)
        return solarize(x, (C.MAX_SOLARIZE_DROP - drop) / C.MAX_SOLARIZE_DROP)
    if name in ("shear-x", "shear-y"):
        f = _sign(rng) * _level(rng) * C.MAX_SHEAR / 10
        return shear_x(x, f) if name == "shear-x" else shear_y(x, f)
    if name in ("translate-x", "translate-y"):
        size = x.shape[1] if name == "translate-x" else x.shape[0]
        px = _sign(rng) * int(_level(rng) * size * C.MAX_TRANSLATE_FRAC / 10)
        return translate_x(x, px) if name == "translate-x" else translate_y(x, px)
    raise ConfigurationError(f"unknown base operation {name!r}")


@dataclass(frozen=True)
class AugOperation:
    name: str
    kind: str                                   # "base" or "style"
    fn: Callable = field(repr=False, compare=False)

    def __call__(self, x, rng):
        return self.fn(x, rng)


def base_operation(name) -> AugOperation:
    if name not in C.BASE_OPERATIONS:
        raise ConfigurationError(f"unknown base operation {name!r}")
    return AugOperation(name, "base", lambda x, rng, _n=name: _sampled(_n, x, rng))


def make_style_op(sampling: SamplingDistribution, references, backend: StyleBackend = None,
                  name="style") -> AugOperation:
    """Style operation that draws a fresh reference from ``sampling`` per call."""
    references = np.asarray(getattr(references, "images", references))
    if len(references) != len(sampling.probs):
        raise ConfigurationError(
            f"{len(sampling.probs)} sampling probabilities for {len(references)} reference images")
    backend = backend or MomentMatching()

    def apply(x, rng):
        return transfer(x, references[sample_reference(sampling, rng)], backend)

    return AugOperation(name, "style", apply)


def make_fixed_style_op(reference, backend: StyleBackend = None, name="style-fixed") -> AugOperation:
    backend = backend or MomentMatching()
    reference = np.asarray(reference)
    return AugOperation(name, "style", lambda x, rng: transfer(x, reference, backend))


@dataclass
class OperationSet:
    base: list
    style: list = field(default_factory=list)
    sampling: SamplingDistribution | None = None

    @property
    def all(self):
        return list(self.base) + list(self.style)

    @property
    def base_names(self):
        return [op.name for op in self.base]


def build_operation_set(guidance=None, sampling=None, backend=None, n_style=5,
                        fixed_references=False, style_enabled=True) -> OperationSet:
    """The nine base operations, extended with ``n_style`` style operations.

    With ``fixed_references`` each style operation keeps one reference: the
    member nearest each cluster centre (or ``n_style`` draws from a uniform
    sampler) instead of resampling per call.
    """
    base = [base_operation(n) for n in C.BASE_OPERATIONS]
    if not style_enabled or guidance is None or sampling is None:
        return OperationSet(base)
    refs = np.asarray(getattr(guidance, "images", guidance))
    if fixed_references:
        if sampling.cluster_model is not None:
            idx = nearest_to_centers(sampling.cluster_model, refs)
        else:
            rng = np.random.default_rng(0)
            idx = rng.choice(len(refs), size=min(n_style, len(refs)), replace=False, p=sampling.probs)
        style = [make_fixed_style_op(refs[i], backend, f"style-{k}") for k, i in enumerate(idx)]
    else:
        style = [make_style_op(sampling, refs, backend, f"style-{k}") for k in range(n_style)]
    return OperationSet(base, style, sampling)


# ---------------------------------------------------------------------------
# the mixer

def style_aug(x, ops: OperationSet, rng, M=3, alpha=1.0, record=None):
    """Mix ``M`` random operation chains of ``x`` and blend with ``x``.

    Chain ``m`` starts with an operation from the whole set (base or style),
    continues with up to two base operations, and has depth 1, 2 or 3 chosen
    uniformly. Chains are summed with Dirichlet(alpha) weights, and the sum is
    blended back as ``w0 * mix + (1 - w0) * x`` with ``w0 ~ Beta(alpha, alpha)``.

    ``record``, if a dict, receives the sampled weights, chains and ``w0``.
    """
    if M < 1:
        raise ConfigurationError(f"mixture width M must be >= 1, got {M}")
    if alpha <= 0:
        raise ConfigurationError(f"alpha must be positive, got {alpha}")
    full, base = ops.all, list(ops.base)
    if not full or not base:
        raise ConfigurationError("operation set needs at least one base operation")
    x = np.asarray(x, dtype=np.float32)

    ws = np.asarray(rng.dirichlet([alpha] * M), dtype=np.float64)
    mix = np.zeros(x.shape, dtype=np.float64)
    chains, kinds = [], []
    for m in range(M):
        o1 = full[int(rng.integers(len(full)))]
        o2 = base[int(rng.integers(len(base)))]
        o3 = base[int(rng.integers(len(base)))]
        chain = [[o1], [o1, o2], [o1, o2, o3]][int(rng.integers(3))]
        out = x
        for op in chain:
            out = op(out, rng)
        mix += ws[m] * out
        chains.append([op.name for op in chain])
        kinds.append([op.kind for op in chain])
    w0 = float(rng.beta(alpha, alpha))
    mixed = np.clip(w0 * mix + (1.0 - w0) * x, 0.0, 1.0).astype(np.float32)
    if record is not None:
        record.update(weights=ws, chains=chains, kinds=kinds, w0=w0)
    return mixed


def sample_rng(seed, epoch, index, stream=0):
    """Per-sample generator, independent of worker layout and iteration order."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(epoch), int(index), int(stream)]))


# ---------------------------------------------------------------------------
# baselines

def cutout(x, patch_size, rng):
    """Zero a ``patch_size`` square centred uniformly in the image (clipped at borders)."""
    h, w = x.shape[:2]
    if patch_size < 0 or patch_size > min(h, w):
        raise ParameterError(f"cutout patch {patch_size} does not fit a {h}x{w} image")
    out = np.array(x, dtype=np.float32, copy=True)
    if patch_size == 0:
        return out
    cy, cx = int(rng.integers(h)), int(rng.integers(w))
    y0, y1 = max(cy - patch_size // 2, 0), min(cy - patch_size // 2 + patch_size, h)
    x0, x1 = max(cx - patch_size // 2, 0), min(cx - patch_size // 2 + patch_size, w)
    out[y0:y1, x0:x1] = 0.0
    return out


def one_hot(labels, num_classes):
    return np.eye(num_classes, dtype=np.float32)[np.asarray(labels)]


def mixup(batch, labels, alpha, rng, num_classes, lam=None):
    """Convex blend of the batch with a permutation of itself; returns soft labels."""
    lam = float(rng.beta(alpha, alpha)) if lam is None else float(lam)
    perm = rng.permutation(len(batch))
    y = one_hot(labels, num_classes)
    mixed = lam * batch + (1.0 - lam) * batch[perm]
    return mixed.astype(np.float32), (lam * y + (1.0 - lam) * y[perm]).astype(np.float32)


def cutmix(batch, labels, alpha, rng, num_classes, box=None):
    """Paste a rectangle from a permuted batch; labels weighted by area.

    ``box`` = (top, left, height, width) fixes the patch instead of drawing it.
    """
    n, h, w = batch.shape[:3]
    if box is None:
        lam = float(rng.beta(alpha, alpha))
        ch, cw = int(h * np.sqrt(1 - lam)), int(w * np.sqrt(1 - lam))
        cy, cx = int(rng.integers(h)), int(rng.integers(w))
        top, bot = np.clip(cy - ch // 2, 0, h), np.clip(cy + ch // 2, 0, h)
        left, right = np.clip(cx - cw // 2, 0, w), np.clip(cx + cw // 2, 0, w)
    else:
        top, left, bh, bw = box
        if bh > h or bw > w or top + bh > h or left + bw > w:
            raise ParameterError(f"cutmix box {box} does not fit a {h}x{w} image")
        bot, right = top + bh, left + bw
    perm = rng.permutation(n)
    mixed = np.array(batch, dtype=np.float32, copy=True)
    mixed[:, top:bot, left:right] = batch[perm][:, top:bot, left:right]
    kept = 1.0 - (bot - top) * (right - left) / (h * w)
    y = one_hot(labels, num_classes)
    return mixed, (kept * y + (1.0 - kept) * y[perm]).astype(np.float32)
