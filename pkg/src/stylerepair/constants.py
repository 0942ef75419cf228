"""Numeric tables for corruptions and augmentation magnitudes.

Corruption severities follow the CIFAR-10-C reference generator
(Hendrycks & Dietterich, ``make_cifar_c.py``) for 32x32 images. Augmentation
magnitudes follow the AugMix reference ``augmentations.py`` with its default
``aug_severity = 3``.
"""

KINDS = (
    "GN", "SN", "IN", "DB", "GB", "MB", "ZM", "SW",
    "FT", "FG", "BS", "CT", "ET", "PIX", "JPEG",
)

KIND_NAMES = {
    "GN": "gaussian_noise",
    "SN": "shot_noise",
    "IN": "impulse_noise",
    "DB": "defocus_blur",
    "GB": "glass_blur",
    "MB": "motion_blur",
    "ZM": "zoom_blur",
    "SW": "snow",
    "FT": "frost",
    "FG": "fog",
    "BS": "brightness",
    "CT": "contrast",
    "ET": "elastic_transform",
    "PIX": "pixelate",
    "JPEG": "jpeg_compression",
}

SYNTHESIZED_KINDS = frozenset({"GN", "SN", "IN", "BS", "CT", "PIX", "JPEG", "DB", "MB"})
INGEST_ONLY_KINDS = frozenset(KINDS) - SYNTHESIZED_KINDS

SEVERITIES = (1, 2, 3, 4, 5)

# One entry per severity 1..5. Each entry is the kind's keyword parameters.
SEVERITY_PARAMS = {
    "GN": [{"sigma": s} for s in (0.04, 0.06, 0.08, 0.09, 0.10)],
    "SN": [{"photons": s} for s in (500.0, 250.0, 100.0, 75.0, 50.0)],
    "IN": [{"amount": s} for s in (0.01, 0.02, 0.03, 0.05, 0.07)],
    "DB": [{"radius": r, "alias_blur": a}
           for r, a in ((0.3, 0.4), (0.4, 0.5), (0.5, 0.6), (1.0, 0.2), (1.5, 0.1))],
    # the reference renders motion blur with ImageMagick; we use a one-sided
    # Gaussian-weighted line kernel with the same radius/sigma and a random angle
    "MB": [{"radius": r, "sigma": s}
           for r, s in ((10, 1.0), (10, 1.5), (10, 2.0), (10, 2.5), (12, 3.0))],
    "BS": [{"offset": s} for s in (0.05, 0.1, 0.15, 0.2, 0.3)],
    "CT": [{"factor": s} for s in (0.75, 0.5, 0.4, 0.3, 0.15)],
    "PIX": [{"factor": s} for s in (0.95, 0.9, 0.85, 0.75, 0.65)],
    "JPEG": [{"quality": q} for q in (80, 65, 58, 50, 40)],
}

# parameter value that makes each synthesized kind a no-op (where one exists)
ZERO_STRENGTH = {
    "GN": {"sigma": 0.0},
    "IN": {"amount": 0.0},
    "BS": {"offset": 0.0},
    "CT": {"factor": 1.0},
    "PIX": {"factor": 1.0},
}

# AugMix reference magnitudes
AUG_SEVERITY = 3
MAX_ROTATE_DEG = 30          # degrees = int(level * 30 / 10)
MAX_SHEAR = 0.3              # factor = level * 0.3 / 10
MAX_TRANSLATE_FRAC = 1 / 3   # pixels = int(level * (size / 3) / 10)
MAX_POSTERIZE_DROP = 4       # bits = 4 - int(level * 4 / 10)
MAX_SOLARIZE_DROP = 256      # threshold = 256 - int(level * 256 / 10), on the 0..255 scale

BASE_OPERATIONS = (
    "autocontrast", "equalize", "posterize", "rotate", "solarize",
    "shear-x", "shear-y", "translate-x", "translate-y",
)
