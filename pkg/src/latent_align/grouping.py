"""Outcome-anchored grouping of normalized latent codes.

Clusters are found by seeded k-means (k-means++ init, best of several
restarts) and then anchored to the survey outcome: the cluster with the
highest mean outcome becomes the reference group, the lowest the target
group. Groups are exposed as uniform empirical measures for the transport
stage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .factorization import NormalizedCodes


@dataclass
class GroupAssignment:
    labels: np.ndarray
    centroids: np.ndarray
    reference: int
    target: int
    cluster_means: np.ndarray

    def __post_init__(self):
        self.labels.setflags(write=False)
        self.centroids.setflags(write=False)
        self.cluster_means.setflags(write=False)
        if self.reference == self.target:
            raise ValueError(
                "reference and target clusters coincide; outcome does not separate the clusters"
            )

    @property
    def i_reference(self) -> np.ndarray:
        return np.flatnonzero(self.labels == self.reference)

    @property
    def i_target(self) -> np.ndarray:
        return np.flatnonzero(self.labels == self.target)

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]

    def to_dict(self) -> dict:
        return {
            "labels": self.labels.tolist(),
            "centroids": self.centroids.tolist(),
            "reference": int(self.reference),
            "target": int(self.target),
            "cluster_means": self.cluster_means.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroupAssignment":
        return cls(
            labels=np.array(d["labels"], dtype=int),
            centroids=np.array(d["centroids"], dtype=float),
            reference=int(d["reference"]),
            target=int(d["target"]),
            cluster_means=np.array(d["cluster_means"], dtype=float),
        )

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def from_json(cls, path: str | Path) -> "GroupAssignment":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class EmpiricalMeasure:
    """Uniform weights over a multiset of support points (duplicates kept)."""

    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.support.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def size(self) -> int:
        return self.support.shape[0]


def _plus_plus_init(V: np.ndarray, n_clusters: int, rng: np.random.Generator) -> np.ndarray:
    n = V.shape[0]
    centers = np.empty((n_clusters, V.shape[1]))
    first = int(rng.integers(n))
    centers[0] = V[first]
    d2 = np.sum((V - centers[0]) ** 2, axis=1)
    for c in range(1, n_clusters):
        total = d2.sum()
        probs = d2 / total
        idx = int(rng.choice(n, p=probs))
        centers[c] = V[idx]
        d2 = np.minimum(d2, np.sum((V - centers[c]) ** 2, axis=1))
    return centers


def _lloyd(V: np.ndarray, centers: np.ndarray, max_iter: int) -> tuple[np.ndarray, np.ndarray, float]:
    n, n_clusters = V.shape[0], centers.shape[0]
    labels = np.full(n, -1, dtype=int)
    for _ in range(max_iter):
        dists = np.sum((V[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_labels = np.argmin(dists, axis=1)

        # Repair empty clusters by stealing the point currently farthest
        # from its own centroid, lowest empty cluster id first.
        point_d2 = dists[np.arange(n), new_labels]
        for c in range(n_clusters):
            if not np.any(new_labels == c):
                j = int(np.argmax(point_d2))
                new_labels[j] = c
                point_d2[j] = -np.inf

        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(n_clusters):
            centers[c] = V[labels == c].mean(axis=0)
    wcss = float(np.sum((V - centers[labels]) ** 2))
    return labels, centers, wcss


def kmeans(
    codes: NormalizedCodes,
    n_clusters: int,
    seed: int,
    restarts: int = 10,
    max_iter: int = 300,
) -> tuple[np.ndarray, np.ndarray]:
    """Best-of-restarts Lloyd's algorithm with k-means++ seeding.

    Deterministic for a fixed seed: each restart draws from its own spawned
    generator and the winner is the restart with the lowest within-cluster
    sum of squares, ties broken by restart index.
    """
    V = codes.codes
    n = V.shape[0]
    if n_clusters < 2:
        raise ValueError(f"need at least 2 clusters, got {n_clusters}")
    if n_clusters > n:
        raise ValueError(f"cannot form {n_clusters} clusters from {n} points")
    if np.unique(V, axis=0).shape[0] < n_clusters:
        raise ValueError(f"fewer than {n_clusters} distinct rows")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")

    seeds = np.random.SeedSequence(seed).spawn(restarts)
    best = None
    for r in range(restarts):
        rng = np.random.default_rng(seeds[r])
        centers = _plus_plus_init(V, n_clusters, rng)
        labels, centers, wcss = _lloyd(V, centers, max_iter)
        if best is None or wcss < best[0]:
            best = (wcss, labels, centers)
    return best[1], best[2]


def anchor_groups(
    labels: np.ndarray,
    y: np.ndarray,
    n_clusters: int,
    centroids: np.ndarray | None = None,
) -> GroupAssignment:
    """Pick reference and target clusters by mean outcome.

    Reference is the argmax of the cluster-wise outcome mean, target the
    argmin; ties break toward the lower cluster id. Raises if the two
    coincide (all cluster means equal).
    """
    labels = np.asarray(labels, dtype=int)
    y = np.asarray(y, dtype=float)
    if labels.shape != y.shape:
        raise ValueError(f"labels {labels.shape} and y {y.shape} must align")
    if labels.min() < 0 or labels.max() >= n_clusters:
        raise ValueError("labels out of range")
    means = np.empty(n_clusters)
    for c in range(n_clusters):
        members = labels == c
        if not np.any(members):
            raise ValueError(f"cluster {c} is empty")
        means[c] = y[members].mean()
    reference = int(np.argmax(means))
    target = int(np.argmin(means))
    if centroids is None:
        centroids = np.full((n_clusters, 1), np.nan)
    return GroupAssignment(
        labels=labels.copy(),
        centroids=np.asarray(centroids, dtype=float).copy(),
        reference=reference,
        target=target,
        cluster_means=means,
    )


def empirical_measure(codes: NormalizedCodes, indices: np.ndarray) -> EmpiricalMeasure:
    """Uniform empirical measure on the selected rows (multiset semantics)."""
    indices = np.asarray(indices, dtype=int)
    if indices.size == 0:
        raise ValueError("empty index set")
    support = codes.codes[indices].copy()
    m = support.shape[0]
    return EmpiricalMeasure(support=support, weights=np.full(m, 1.0 / m))
