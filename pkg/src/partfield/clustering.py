"""Flat and hierarchical part decompositions from face features.

Agglomerative merging is greedy over the currently cheapest *adjacent*
cluster pair, where cost is the cosine distance between cluster mean
features and cluster adjacency is the union of member adjacencies. The
merge order defines a binary tree; every flat segmentation is a cut of
that tree obtained by undoing the most recent merges. Disconnected
meshes produce one subtree per component, joined at the top by cheapest
unconstrained merges so cuts stay total.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np


class ClusteringError(ValueError):
    pass


@dataclass
class Segmentation:
    labels: np.ndarray  # (F,) dense in [0, k)
    k: int = 0

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int32).ravel()
        uniq = np.unique(self.labels)
        if self.k == 0:
            self.k = len(uniq)
        if self.labels.min() < 0:
            raise ClusteringError("labels must be nonnegative")

    def canonicalized(self) -> "Segmentation":
        """Relabel by first occurrence so equal partitions compare equal."""
        mapping: dict[int, int] = {}
        out = np.empty_like(self.labels)
        for i, lab in enumerate(self.labels):
            if int(lab) not in mapping:
                mapping[int(lab)] = len(mapping)
            out[i] = mapping[int(lab)]
        return Segmentation(labels=out, k=len(mapping))

    def to_json(self) -> dict:
        return {"k": int(self.k), "labels": self.labels.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "Segmentation":
        return cls(labels=np.array(d["labels"], dtype=np.int32), k=int(d["k"]))


@dataclass
class MergeTree:
    """Binary merge hierarchy; node ids: leaves 0..F-1, internal F..2F-2.

    Internal node F + i is the i-th merge; children always have smaller
    ids, so undoing the last merges = removing the highest-id nodes.
    """

    n_leaves: int
    left: np.ndarray  # (n_internal,) child node ids
    right: np.ndarray
    cost: np.ndarray  # (n_internal,) merge cost
    count: np.ndarray  # (n_internal,) member faces
    means: np.ndarray | None = None  # (n_internal, C) cluster mean features

    @property
    def n_internal(self) -> int:
        return len(self.left)

    @property
    def root(self) -> int:
        return self.n_leaves + self.n_internal - 1 if self.n_internal else 0

    def children(self, node: int) -> tuple[int, int]:
        i = node - self.n_leaves
        return int(self.left[i]), int(self.right[i])

    def leaves_under(self, node: int) -> np.ndarray:
        out = []
        stack = [node]
        while stack:
            n = stack.pop()
            if n < self.n_leaves:
                out.append(n)
            else:
                stack.extend(self.children(n))
        return np.array(sorted(out), dtype=np.int64)

    def to_json(self) -> dict:
        return {
            "n_leaves": int(self.n_leaves),
            "nodes": [
                {"left": int(l), "right": int(r), "cost": float(c), "count": int(n)}
                for l, r, c, n in zip(self.left, self.right, self.cost, self.count)
            ],
        }

    @classmethod
    def from_json(cls, d: dict) -> "MergeTree":
        nodes = d["nodes"]
        return cls(
            n_leaves=int(d["n_leaves"]),
            left=np.array([n["left"] for n in nodes], dtype=np.int64),
            right=np.array([n["right"] for n in nodes], dtype=np.int64),
            cost=np.array([n["cost"] for n in nodes], dtype=np.float64),
            count=np.array([n["count"] for n in nodes], dtype=np.int64),
        )


def unit_normalize_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    n = np.linalg.norm(x, axis=1, keepdims=True)
    return np.where(n > 1e-12, x / np.where(n > 0, n, 1.0), 0.0)


def _cosine_cost(a: np.ndarray, b: np.ndarray) -> float:
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na <= 1e-12 or nb <= 1e-12:
        return 1.0
    return 1.0 - float(np.dot(a, b) / (na * nb))


def agglomerate(features, adjacency, normalize: bool = True) -> MergeTree:
    """Greedy adjacency-constrained merging of mesh faces.

    ``features`` covers every face (FeatureSet or array); ``adjacency``
    is the per-face neighbor lists. Merge costs under centroid linkage
    need not be monotone; the merge order, not the costs, defines the
    hierarchy. Ties break on (cost, smaller id, larger id).
    """
    feats = np.asarray(getattr(features, "values", features), dtype=np.float64)
    n = len(feats)
    if n == 0:
        raise ClusteringError("no faces to cluster")
    if len(adjacency) != n:
        raise ClusteringError("adjacency does not cover the features")
    if normalize:
        feats = unit_normalize_rows(feats)

    total = 2 * n - 1
    means = np.zeros((total, feats.shape[1]), dtype=np.float64)
    means[:n] = feats
    counts = np.zeros(total, dtype=np.int64)
    counts[:n] = 1
    alive = np.zeros(total, dtype=bool)
    alive[:n] = True
    neighbor: list[set[int]] = [set(int(j) for j in adjacency[i]) for i in range(n)]
    neighbor += [set() for _ in range(n - 1)]

    left = np.zeros(n - 1, dtype=np.int64) if n > 1 else np.zeros(0, dtype=np.int64)
    right = left.copy()
    cost_arr = np.zeros(n - 1, dtype=np.float64)

    heap: list[tuple[float, int, int]] = []
    seen = set()
    for i in range(n):
        for j in neighbor[i]:
            a, b = (i, j) if i < j else (j, i)
            if (a, b) not in seen:
                seen.add((a, b))
                heapq.heappush(heap, (_cosine_cost(means[a], means[b]), a, b))

    next_id = n

    def merge(a: int, b: int, c: float) -> int:
        nonlocal next_id
        node = next_id
        next_id += 1
        i = node - n
        left[i], right[i], cost_arr[i] = a, b, c
        counts[node] = counts[a] + counts[b]
        means[node] = (means[a] * counts[a] + means[b] * counts[b]) / counts[node]
        merged_adj = (neighbor[a] | neighbor[b]) - {a, b}
        neighbor[node] = merged_adj
        for other in merged_adj:
            neighbor[other].discard(a)
            neighbor[other].discard(b)
            neighbor[other].add(node)
        alive[a] = alive[b] = False
        alive[node] = True
        return node

    # phase 1: adjacency-constrained merges
    while heap:
        c, a, b = heapq.heappop(heap)
        if not (alive[a] and alive[b]):
            continue
        node = merge(a, b, c)
        for other in sorted(neighbor[node]):
            lo, hi = (node, other) if node < other else (other, node)
            heapq.heappush(heap, (_cosine_cost(means[node], means[other]), lo, hi))

    # phase 2: join remaining components by cheapest unconstrained pair
    roots = [i for i in range(next_id) if alive[i]]
    while len(roots) > 1:
        best = None
        for x in range(len(roots)):
            for y in range(x + 1, len(roots)):
                a, b = roots[x], roots[y]
                key = (_cosine_cost(means[a], means[b]), min(a, b), max(a, b))
                if best is None or key < best:
                    best = key
        c, a, b = best
        node = merge(a, b, c)
        roots = [r for r in roots if r not in (a, b)] + [node]

    return MergeTree(n_leaves=n, left=left, right=right, cost=cost_arr,
                     count=counts[n:], means=means[n:] if n > 1 else None)


def cut_tree(tree: MergeTree, k: int) -> Segmentation:
    """Undo the last k-1 merges; cuts nest across k by construction."""
    if not 1 <= k <= tree.n_leaves:
        raise ClusteringError(f"k={k} outside [1, {tree.n_leaves}]")
    active = [tree.root]
    while len(active) < k:
        node = max(active)  # highest id = most recent merge
        active.remove(node)
        active.extend(tree.children(node))
    labels = np.empty(tree.n_leaves, dtype=np.int32)
    for ci, node in enumerate(active):
        labels[tree.leaves_under(node)] = ci
    return Segmentation(labels=labels).canonicalized()


def multi_scale(tree: MergeTree, ks=None) -> list[Segmentation]:
    """One cut per requested cluster count; default sweeps k = 2..21."""
    if ks is None:
        ks = range(2, 22)
    return [cut_tree(tree, min(int(k), tree.n_leaves)) for k in ks]


def _lloyd(feats: np.ndarray, centers: np.ndarray, max_iters: int):
    """Lloyd iterations; returns (labels, centers, objective history)."""
    if max_iters < 1:
        raise ClusteringError("max_iters must be >= 1")
    n = len(feats)
    labels = np.full(n, -1, dtype=np.int64)
    history = []
    x2 = (feats ** 2).sum(axis=1)
    for _ in range(max_iters):
        c2 = (centers ** 2).sum(axis=1)
        d2 = np.maximum(x2[:, None] + c2[None, :] - 2.0 * feats @ centers.T, 0.0)
        new_labels = np.argmin(d2, axis=1)
        obj = float(d2[np.arange(n), new_labels].sum())
        # re-seed empty clusters from the farthest point
        for ci in range(len(centers)):
            if not np.any(new_labels == ci):
                far = int(np.argmax(d2[np.arange(n), new_labels]))
                new_labels[far] = ci
        history.append(obj)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for ci in range(len(centers)):
            mask = labels == ci
            if mask.any():
                centers[ci] = feats[mask].mean(axis=0)
    return labels, centers, history


def kmeans(features, k: int, init="random", seed: int = 0,
           max_iters: int = 100) -> Segmentation:
    """Lloyd's algorithm on unit-normalized features (cosine geometry).

    ``init`` is "random" or an explicit (k, C) array of seed centroids;
    seeded labels keep their centroid indices so callers can carry part
    identities across shapes.
    """
    feats = unit_normalize_rows(np.asarray(getattr(features, "values", features)))
    n = len(feats)
    if k < 1:
        raise ClusteringError("k must be >= 1")
    if isinstance(init, str):
        if init != "random":
            raise ClusteringError(f"unknown init {init!r}")
        if k > n:
            raise ClusteringError(f"k={k} exceeds {n} elements")
        distinct = np.unique(feats, axis=0)
        if len(distinct) < k:
            raise ClusteringError(f"only {len(distinct)} distinct features for k={k}")
        rng = np.random.default_rng(seed)
        centers = feats[rng.choice(n, size=k, replace=False)].copy()
        labels, _, _ = _lloyd(feats, centers, max_iters)
        return Segmentation(labels=labels).canonicalized()
    centers = np.asarray(init, dtype=np.float64).copy()
    if centers.ndim != 2 or centers.shape[1] != feats.shape[1]:
        raise ClusteringError("seed centroids must be (k, C) with matching C")
    if len(centers) != k:
        raise ClusteringError("seed centroid count must equal k")
    labels, _, _ = _lloyd(feats, centers, max_iters)
    return Segmentation(labels=labels, k=k)
