"""
Style-guided augmentation chains
================================

Each augmented view mixes three random chains. A chain starts with any
operation (the nine base operations or a style transfer from a failure) and
continues with at most two base operations.
"""

import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from stylerepair.augment import build_operation_set, sample_rng, style_aug
from stylerepair.corruptions import build_corrupted_testset
from stylerepair.data import make_shapes_dataset
from stylerepair.sampling import build_sampler

out = sys.argv[1] if len(sys.argv) > 1 else "style_aug.png"

clean = make_shapes_dataset(8, seed=5)
# stand-in failures: strongly noised shapes
failures = build_corrupted_testset(make_shapes_dataset(20, seed=6), "GN", seed=0)
guidance = failures.subset(np.arange(80, 100))

ops = build_operation_set(guidance, build_sampler(guidance, "clustering", 5))
print("operations:", [op.name for op in ops.all])

fig, axes = plt.subplots(len(clean), 5, figsize=(6, 1.3 * len(clean)))
for i, x in enumerate(clean.images):
    axes[i, 0].imshow(x)
    for j in range(1, 5):
        rec = {}
        y = style_aug(x, ops, sample_rng(0, j, i, 1), record=rec)
        axes[i, j].imshow(y)
        if i == 0:
            print("chains:", rec["chains"], "weights", np.round(rec["weights"], 2), "w0", round(rec["w0"], 2))
for ax in axes.ravel():
    ax.set_axis_off()
axes[0, 0].set_title("clean", fontsize=8)
fig.tight_layout()
fig.savefig(out, dpi=120)
print("wrote", out)

# Same seed, same bytes.
a = style_aug(clean.images[0], ops, sample_rng(1, 2, 3, 1))
b = style_aug(clean.images[0], ops, sample_rng(1, 2, 3, 1))
print("reproducible:", a.tobytes() == b.tobytes())
