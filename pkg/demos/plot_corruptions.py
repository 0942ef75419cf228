"""
Synthesized corruptions at three severities
===========================================

Nine corruption kinds are generated directly. The remaining six (fog, frost,
snow, zoom blur, glass blur, elastic) must be ingested from precomputed arrays.
"""

import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from stylerepair.constants import KIND_NAMES, SYNTHESIZED_KINDS
from stylerepair.corruptions import CorruptionSpec, apply_corruption
from stylerepair.data import make_shapes_dataset

out = sys.argv[1] if len(sys.argv) > 1 else "corruptions.png"

# a few procedural images; take the first ring
images = make_shapes_dataset(100, seed=3)
x = images.images[np.flatnonzero(images.labels == 3)[0]]

kinds = sorted(SYNTHESIZED_KINDS)
fig, axes = plt.subplots(3, len(kinds), figsize=(1.4 * len(kinds), 4.6))
for col, kind in enumerate(kinds):
    for row, severity in enumerate((1, 3, 5)):
        y = apply_corruption(x, CorruptionSpec(kind, severity), rng=0)
        ax = axes[row, col]
        ax.imshow(y, interpolation="nearest")
        ax.set_xticks([])
        ax.set_yticks([])
        if row == 0:
            ax.set_title(KIND_NAMES[kind].replace("_", "\n"), fontsize=7)
        if col == 0:
            ax.set_ylabel(f"severity {severity}", fontsize=7)
fig.tight_layout()
fig.savefig(out, dpi=120)
print("wrote", out)

# Noise strength grows with severity; the mean squared distortion shows it.
for kind in ("GN", "SN", "IN"):
    mse = [np.mean((apply_corruption(x, CorruptionSpec(kind, s), rng=s) - x) ** 2) for s in range(1, 6)]
    print(kind, " ".join(f"{m:.4f}" for m in mse))
