"""Style transfer ST(content, style) behind swappable backends.

The default :class:`MomentMatching` backend maps each channel of the content
image onto the style image's mean and standard deviation (optionally the full
colour covariance). :class:`FeatureStats` does the same on the feature maps of
a fixed encoder/decoder pair loaded from an asset file.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import BackendUnavailableError, ValidationError


class StyleBackend:
    name = "base"
    deterministic = True

    def __call__(self, content: np.ndarray, style: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def _check_pair(content, style):
    content = np.asarray(content, dtype=np.float64)
    style = np.asarray(style, dtype=np.float64)
    if content.ndim != 3 or style.ndim != 3:
        raise ValidationError("content and style must be (H, W, C) images")
    if content.shape[-1] != style.shape[-1]:
        raise ValidationError(
            f"channel mismatch: content has {content.shape[-1]}, style has {style.shape[-1]}")
    return content, style


def _sym_power(cov, power, eps):
    vals, vecs = np.linalg.eigh(cov)
    vals = np.maximum(vals, 0.0) + eps
    return (vecs * vals**power) @ vecs.T


class MomentMatching(StyleBackend):
    """Per-channel affine map ``(p - mu_c) / sigma_c * sigma_s + mu_s``.

    With ``covariance=True`` the content colours are whitened with the inverse
    symmetric square root of their covariance and coloured with the style's.
    A zero-variance content channel maps to the constant style mean.
    """

    name = "moment"

    def __init__(self, covariance=False, eps=1e-8):
        self.covariance = covariance
        self.eps = eps

    def __call__(self, content, style):
        content, style = _check_pair(content, style)
        c = content.shape[-1]
        xc = content.reshape(-1, c)
        xs = style.reshape(-1, c)
        mu_c, mu_s = xc.mean(0), xs.mean(0)
        if self.covariance:
            cov_c = np.cov(xc, rowvar=False, bias=True).reshape(c, c)
            cov_s = np.cov(xs, rowvar=False, bias=True).reshape(c, c)
            out = (xc - mu_c) @ _sym_power(cov_c, -0.5, self.eps) @ _sym_power(cov_s, 0.5, 0.0) + mu_s
        else:
            sd_c, sd_s = xc.std(0), xs.std(0)
            scale = np.divide(sd_s, sd_c, out=np.zeros_like(sd_c), where=sd_c > self.eps)
            out = (xc - mu_c) * scale + mu_s
        return np.clip(out, 0.0, 1.0).reshape(content.shape).astype(np.float32)


class FeatureStats(StyleBackend):
    """Align instance statistics of encoder features, then decode.

    The asset is an ``.npz`` with ``encoder`` of shape (F, C, k, k) and
    ``decoder`` of shape (F, C, k, k). The encoder is a stride-``k``
    convolution, the decoder the matching transposed convolution.
    """

    name = "feature"

    def __init__(self, asset_path, eps=1e-8):
        path = Path(asset_path) if asset_path else None
        if path is None or not path.exists():
            raise BackendUnavailableError(
                f"feature style backend asset not found: {asset_path}; "
                "use the 'moment' backend instead")
        with np.load(path) as z:
            self.encoder = z["encoder"].astype(np.float64)
            self.decoder = z["decoder"].astype(np.float64)
        if self.encoder.shape != self.decoder.shape or self.encoder.ndim != 4:
            raise BackendUnavailableError(f"malformed feature backend asset {path}")
        self.eps = eps

    @property
    def stride(self):
        return self.encoder.shape[-1]

    def encode(self, x):
        k = self.stride
        h, w, c = x.shape
        hp, wp = -h % k, -w % k
        x = np.pad(x, ((0, hp), (0, wp), (0, 0)), mode="edge")
        patches = x.reshape(x.shape[0] // k, k, x.shape[1] // k, k, c)
        # (H/k, W/k, F)
        return np.einsum("iajbc,fcab->ijf", patches, self.encoder), (h, w)

    def decode(self, feats, size):
        k = self.stride
        c = self.decoder.shape[1]
        patches = np.einsum("ijf,fcab->iajbc", feats, self.decoder)
        x = patches.reshape(feats.shape[0] * k, feats.shape[1] * k, c)
        return x[: size[0], : size[1]]

    def __call__(self, content, style):
        content, style = _check_pair(content, style)
        fc, size = self.encode(content)
        fs, _ = self.encode(style)
        mu_c, sd_c = fc.mean((0, 1)), fc.std((0, 1))
        mu_s, sd_s = fs.mean((0, 1)), fs.std((0, 1))
        scale = np.divide(sd_s, sd_c, out=np.zeros_like(sd_c), where=sd_c > self.eps)
        out = self.decode((fc - mu_c) * scale + mu_s, size)
        return np.clip(out, 0.0, 1.0).astype(np.float32)


def haar_asset(path, channels=3):
    """Write an orthonormal 2x2 Haar wavelet encoder/decoder asset.

    Each colour channel splits into LL, LH, HL and HH sub-bands; the decoder
    is the exact inverse, so self-transfer reconstructs the input.
    """
    h = 0.5 * np.array([
        [[1, 1], [1, 1]],
        [[1, 1], [-1, -1]],
        [[1, -1], [1, -1]],
        [[1, -1], [-1, 1]],
    ], dtype=np.float64)
    enc = np.zeros((4 * channels, channels, 2, 2))
    for c in range(channels):
        enc[4 * c: 4 * c + 4, c] = h
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, encoder=enc, decoder=enc)
    return path


def get_backend(name="moment", asset_path=None, **kwargs) -> StyleBackend:
    if name == "moment":
        return MomentMatching(**kwargs)
    if name == "feature":
        return FeatureStats(asset_path, **kwargs)
    raise ValidationError(f"unknown style backend {name!r}; expected 'moment' or 'feature'")


def transfer(content, style, backend: StyleBackend | None = None) -> np.ndarray:
    """Render ``content`` in the global appearance of ``style``."""
    backend = backend or MomentMatching()
    # statistics are size-agnostic, so spatial sizes may differ
    return backend(content, style)
