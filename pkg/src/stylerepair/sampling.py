"""Clustering-guided choice of style reference images among collected failures.

Failures are clustered with k-means in raw pixel space. Within cluster ``i``
with member distances ``d_j`` to the centre, a failure gets raw weight

    P_j = (1 / N) * (1 - d_j / sum_k d_k)

so members near the centre are favoured. Raw weights are then normalised
over all failures (cluster totals are ``(n_i - 1) / N`` before that). A
singleton cluster takes its full ``1 / N``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError, ValidationError

MAX_ITER = 300


@dataclass(frozen=True)
class ClusterModel:
    centers: np.ndarray       # (N, D)
    assignments: np.ndarray   # (n,)
    n_clusters: int
    seed: int = 0
    n_iter: int = 0

    def distances(self, features):
        """L2 distance of every sample to its own centre."""
        features = _flatten(features)
        return np.linalg.norm(features - self.centers[self.assignments], axis=1)


@dataclass(frozen=True)
class SamplingDistribution:
    probs: np.ndarray
    strategy: str
    cluster_model: ClusterModel | None = None

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size == 0:
            raise ValidationError("probabilities must be a non-empty vector")
        if (probs < 0).any() or abs(probs.sum() - 1.0) > 1e-9:
            raise ValidationError("probabilities must be non-negative and sum to 1")
        if self.strategy not in ("uniform", "clustering"):
            raise ValidationError(f"unknown sampling strategy {self.strategy!r}")
        object.__setattr__(self, "probs", probs)

    def __len__(self):
        return len(self.probs)


def _flatten(x):
    x = np.asarray(getattr(x, "images", x), dtype=np.float64)
    return x.reshape(len(x), -1)


def _sq_dists(x, centers):
    # explicit differences rather than the expanded form, which loses ties to round-off
    return np.stack([((x - c) ** 2).sum(1) for c in centers], axis=1)


def _farthest_point_seeds(x, n_clusters, rng):
    first = int(rng.integers(len(x)))
    chosen = [first]
    nearest = ((x - x[first]) ** 2).sum(1)
    for _ in range(1, n_clusters):
        nxt = int(np.argmax(nearest))  # ties -> lowest index
        chosen.append(nxt)
        nearest = np.minimum(nearest, ((x - x[nxt]) ** 2).sum(1))
    return x[chosen].copy()


def fit_clusters(guidance, n_clusters, seed=0, max_iter=MAX_ITER) -> ClusterModel:
    """k-means with farthest-point seeding; deterministic for a given seed.

    ``guidance`` is a dataset or an array of samples (flattened internally).
    Assignment ties go to the lowest cluster id; a cluster left empty by an
    update is re-seeded with the point farthest from its current centre.
    """
    x = _flatten(guidance)
    n = len(x)
    if not 1 <= n_clusters <= n:
        raise ParameterError(f"n_clusters must be in [1, {n}], got {n_clusters}")
    rng = np.random.default_rng(seed)
    centers = _farthest_point_seeds(x, n_clusters, rng)
    assign = np.argmin(_sq_dists(x, centers), axis=1)
    it = 0
    for it in range(1, max_iter + 1):
        new_centers = centers.copy()
        for k in range(n_clusters):
            members = assign == k
            if members.any():
                new_centers[k] = x[members].mean(0)
        d = _sq_dists(x, new_centers)
        new_assign = np.argmin(d, axis=1)
        for k in range(n_clusters):
            if not (new_assign == k).any():
                own = d[np.arange(n), new_assign]
                far = int(np.argmax(own))
                if own[far] <= 0:
                    continue
                new_centers[k] = x[far]
                d = _sq_dists(x, new_centers)
                new_assign = np.argmin(d, axis=1)
        converged = np.array_equal(new_assign, assign) and np.allclose(new_centers, centers)
        centers, assign = new_centers, new_assign
        if converged:
            break
    return ClusterModel(centers, assign, n_clusters, seed, it)


def raw_cluster_weights(distances, assignments, n_clusters):
    """Per-sample weights before global normalisation."""
    distances = np.asarray(distances, dtype=np.float64)
    assignments = np.asarray(assignments)
    w = np.zeros_like(distances)
    for k in range(n_clusters):
        members = np.flatnonzero(assignments == k)
        if members.size == 0:
            continue
        if members.size == 1:
            w[members] = 1.0 / n_clusters
            continue
        total = distances[members].sum()
        if total > 0:
            w[members] = (1.0 - distances[members] / total) / n_clusters
        else:
            # all members on the centre: treat as equal distances
            w[members] = (1.0 - 1.0 / members.size) / n_clusters
    return w


def sampling_distribution(model: ClusterModel, guidance) -> SamplingDistribution:
    x = _flatten(guidance)
    if len(x) != len(model.assignments):
        raise ValidationError(
            f"cluster model was fitted on {len(model.assignments)} samples, got {len(x)}")
    raw = raw_cluster_weights(model.distances(x), model.assignments, model.n_clusters)
    return SamplingDistribution(raw / raw.sum(), "clustering", model)


def uniform_distribution(n) -> SamplingDistribution:
    return SamplingDistribution(np.full(n, 1.0 / n), "uniform")


def sample_reference(dist: SamplingDistribution, rng) -> int:
    """Index of a guidance sample drawn with probability ``dist.probs``."""
    return int(rng.choice(len(dist.probs), p=dist.probs))


def nearest_to_centers(model: ClusterModel, guidance):
    """Per non-empty cluster, the index of the member closest to its centre."""
    d = model.distances(guidance)
    out = []
    for k in range(model.n_clusters):
        members = np.flatnonzero(model.assignments == k)
        if members.size:
            out.append(int(members[np.argmin(d[members])]))
    return out


def build_sampler(guidance, strategy="clustering", n_clusters=5, seed=0):
    if strategy == "uniform":
        return uniform_distribution(len(guidance))
    if strategy == "clustering":
        model = fit_clusters(guidance, n_clusters, seed)
        return sampling_distribution(model, guidance)
    raise ValidationError(f"strategy must be 'uniform' or 'clustering', got {strategy!r}")


def save_sampler(dist: SamplingDistribution, path, seed=0, n_clusters=None, extra=None):
    m = dist.cluster_model
    record = {
        "strategy": dist.strategy,
        "seed": int(m.seed if m else seed),
        "N": int(m.n_clusters if m else (n_clusters or 0)),
        "centers": m.centers.tolist() if m else [],
        "assignments": m.assignments.tolist() if m else [],
        "probs": dist.probs.tolist(),
    }
    record.update(extra or {})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(record))
    tmp.replace(path)
    return path


def load_sampler(path):
    """Returns ``(SamplingDistribution, record)``."""
    record = json.loads(Path(path).read_text())
    model = None
    if record["centers"]:
        model = ClusterModel(np.asarray(record["centers"]), np.asarray(record["assignments"]),
                             int(record["N"]), int(record["seed"]))
    return SamplingDistribution(np.asarray(record["probs"]), record["strategy"], model), record
