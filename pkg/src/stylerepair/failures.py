"""Find a model's failures on a corrupted test set and split them.

The guidance set (what the repairer may look at) is a uniform random draw
without replacement from the failures; the rest is held out to measure repair.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import LabelledDataset
from .errors import ConfigurationError, EmptyFailureError, ParameterError, ValidationError


def predict(model, images, batch_size=500) -> np.ndarray:
    """Top-1 class predictions; ``model`` exposes ``logits(images)`` or is callable."""
    fn = getattr(model, "logits", model)
    if len(images) == 0:
        return np.zeros(0, dtype=np.int64)
    out = []
    for i in range(0, len(images), batch_size):
        out.append(np.asarray(fn(images[i:i + batch_size])))
    return np.concatenate(out).argmax(axis=1)


def evaluate(model, dataset: LabelledDataset, batch_size=500):
    """Return ``(correct_mask, accuracy)`` for top-1 predictions."""
    n_out = getattr(model, "num_classes", None)
    if n_out is not None and n_out != dataset.num_classes:
        raise ConfigurationError(
            f"model predicts {n_out} classes but dataset {dataset.name!r} has {dataset.num_classes}")
    if len(dataset) == 0:
        return np.zeros(0, dtype=bool), 0.0
    mask = predict(model, dataset.images, batch_size) == dataset.labels
    return mask, float(mask.mean())


@dataclass(frozen=True)
class FailureSplit:
    pattern_kind: str
    guidance: LabelledDataset
    heldout: LabelledDataset
    guidance_indices: np.ndarray
    heldout_indices: np.ndarray
    model_id: str
    seed: int

    @property
    def failure_indices(self):
        return np.sort(np.concatenate([self.guidance_indices, self.heldout_indices]))

    def to_record(self):
        return {
            "model_id": self.model_id,
            "kind": self.pattern_kind,
            "seed": int(self.seed),
            "guidance_indices": self.guidance_indices.tolist(),
            "heldout_indices": self.heldout_indices.tolist(),
        }


def _split_from_indices(corrupted, kind, guidance_idx, heldout_idx, model_id, seed):
    guidance_idx = np.asarray(guidance_idx, dtype=np.int64)
    heldout_idx = np.asarray(heldout_idx, dtype=np.int64)
    return FailureSplit(kind,
                        corrupted.subset(guidance_idx, f"{kind}-guidance"),
                        corrupted.subset(heldout_idx, f"{kind}-heldout"),
                        guidance_idx, heldout_idx, model_id, int(seed))


def collect_failures(model, corrupted: LabelledDataset, n_collect=1000, seed=0,
                     kind=None, mask=None, check=True) -> FailureSplit:
    """Split the misclassified samples of ``corrupted`` into guidance and held-out sets.

    ``mask`` may carry a precomputed correctness mask. With ``check`` the
    model is re-evaluated on both halves, which must score exactly zero.
    """
    if n_collect < 1:
        raise ParameterError(f"n_collect must be >= 1, got {n_collect}")
    if mask is None:
        mask, _ = evaluate(model, corrupted)
    failures = np.flatnonzero(~np.asarray(mask, dtype=bool))
    if failures.size == 0:
        raise EmptyFailureError(f"model makes no mistakes on {corrupted.name!r}; nothing to repair")
    rng = np.random.default_rng(seed)
    take = min(n_collect, failures.size)
    chosen = np.sort(rng.choice(failures, size=take, replace=False))
    rest = np.setdiff1d(failures, chosen, assume_unique=True)
    model_id = getattr(model, "model_id", None) or type(model).__name__
    split = _split_from_indices(corrupted, kind or corrupted.name, chosen, rest, model_id, seed)
    if check:
        for part in (split.guidance, split.heldout):
            if len(part) and evaluate(model, part)[1] != 0.0:
                raise ValidationError(
                    f"model scores above zero on its own failure set {part.name!r}; "
                    "predictions are not reproducible across batches")
    return split


def save_split(split: FailureSplit, path, extra=None):
    record = split.to_record()
    record.update(extra or {})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(record))
    tmp.replace(path)
    return path


def load_split(path, corrupted: LabelledDataset) -> FailureSplit:
    record = json.loads(Path(path).read_text())
    idx = np.concatenate([record["guidance_indices"], record["heldout_indices"]]).astype(np.int64)
    if idx.size and idx.max() >= len(corrupted):
        raise ValidationError(f"split {path} indexes beyond the {len(corrupted)}-sample corrupted set")
    return _split_from_indices(corrupted, record["kind"], record["guidance_indices"],
                               record["heldout_indices"], record["model_id"], record["seed"])
