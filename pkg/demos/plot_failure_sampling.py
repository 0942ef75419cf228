"""
Clustering failures and choosing style references
=================================================

A briefly trained network misclassifies part of a noise-corrupted test set.
Its failures are split into a guidance half and a held-out half, the guidance
failures are clustered, and each failure gets a sampling weight that grows as
it sits closer to its cluster centre.
"""

import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from stylerepair.corruptions import build_corrupted_testset
from stylerepair.data import make_shapes_dataset
from stylerepair.failures import collect_failures, evaluate
from stylerepair.models import ArchitectureSpec
from stylerepair.sampling import build_sampler, nearest_to_centers
from stylerepair.style import transfer
from stylerepair.training import TrainConfig, train_base

out = sys.argv[1] if len(sys.argv) > 1 else "failure_sampling.png"

train = make_shapes_dataset(1500, seed=1)
test = make_shapes_dataset(300, seed=2)
model, _ = train_base(ArchitectureSpec("tiny"), train, TrainConfig(max_epochs=3), eval_set=test)
print("clean accuracy", evaluate(model, test)[1])

# D^v for Gaussian noise: five severity blocks of the clean test set
corrupted = build_corrupted_testset(test, "GN", seed=0)
mask, acc = evaluate(model, corrupted)
print(f"noisy accuracy {acc:.3f}; {(~mask).sum()} failures")

split = collect_failures(model, corrupted, 100, seed=0, kind="GN")
print(len(split.guidance), "guidance failures,", len(split.heldout), "held out")

sampler = build_sampler(split.guidance, "clustering", n_clusters=5, seed=0)
cm = sampler.cluster_model
print("cluster sizes", np.bincount(cm.assignments, minlength=5).tolist())

# Within each cluster the weight falls as the distance to the centre grows.
d = cm.distances(split.guidance)
fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 3.5))
for k in range(5):
    m = cm.assignments == k
    ax1.scatter(d[m], sampler.probs[m], s=10, label=f"cluster {k}")
ax1.set_xlabel("distance to cluster centre")
ax1.set_ylabel("sampling probability")
ax1.legend(fontsize=7)

# The member nearest each centre, transferred onto a clean image.
content = test.images[0]
refs = nearest_to_centers(cm, split.guidance)
strip = [content] + [transfer(content, split.guidance.images[i]) for i in refs]
ax2.imshow(np.concatenate(strip, axis=1), interpolation="nearest")
ax2.set_axis_off()
ax2.set_title("clean image, then styled by each cluster representative", fontsize=8)
fig.tight_layout()
fig.savefig(out, dpi=120)
print("wrote", out)
