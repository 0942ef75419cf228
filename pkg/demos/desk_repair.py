"""
Desk-scale repair run
=====================

The whole pipeline in one call: train a tiny network, corrupt the test set
with Gaussian noise, collect 200 failures, fit the clustering sampler and
repair for 10 epochs. It then reports held-out failure accuracy and clean
accuracy before and after repair.

With ``--cifar DIR`` it uses a 10,000-image CIFAR-10 training subset and the
full test set. Without it, the procedural shapes dataset stands in.
That substitute is much easier than CIFAR-10 and says nothing about CIFAR numbers.
"""

import argparse
import json

import numpy as np

from stylerepair.pipeline import Pipeline, load_config

parser = argparse.ArgumentParser()
parser.add_argument("--cifar", help="directory with cifar-10-batches-py")
parser.add_argument("--out", default="runs/desk")
parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
parser.add_argument("--base-epochs", type=int, default=20)
parser.add_argument("--repair-epochs", type=int, default=10)
args = parser.parse_args()

rows = []
for seed in args.seeds:
    overrides = {"seed": seed, "kinds": ["GN"], "failures.n_collect": 200,
                 "base_training.max_epochs": args.base_epochs,
                 "repair.max_epochs": args.repair_epochs, "data.train_size": 10000}
    if args.cifar:
        overrides.update({"data.source": "path", "data.root": args.cifar, "data.test_size": None})
    config = load_config(overrides=overrides)
    pipe = Pipeline(config, f"{args.out}/seed{seed}")
    pipe.run_all()
    before = json.loads(pipe.path("eval", "original.json").read_text())
    after = json.loads(pipe.path("eval", "GN-stylerepair-clustering.json").read_text())
    rows.append((after["accuracy_heldout"]["GN"], before["accuracy_clean"], after["accuracy_clean"],
                 before["accuracy_corrupted_full"]["GN"], after["accuracy_corrupted_full"]["GN"]))
    print(f"seed {seed}: held-out 0.000 -> {rows[-1][0]:.3f}  "
          f"clean {rows[-1][1]:.3f} -> {rows[-1][2]:.3f}  "
          f"noisy test {rows[-1][3]:.3f} -> {rows[-1][4]:.3f}")

m = np.mean(rows, axis=0)
print(f"mean: held-out {m[0]:.3f}, clean drop {100 * (m[1] - m[2]):.2f} points, "
      f"noisy test {m[3]:.3f} -> {m[4]:.3f}")
