"""Evaluation, similarity maps, cosegmentation, correspondence, regression.

The segmentation metric is class-agnostic: each ground-truth part takes
the best IoU it achieves against any predicted part, and the score is
the mean over ground-truth parts, computed on sets of mesh faces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .clustering import Segmentation, kmeans, unit_normalize_rows
from .geometry import PointSet, TriMesh


class AnalysisError(ValueError):
    pass


@dataclass
class GroundTruth:
    labels: np.ndarray  # per-face part id, single level

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if len(self.labels) == 0:
            raise AnalysisError("ground truth is empty")

    def to_json(self) -> dict:
        return {"labels": self.labels.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "GroundTruth":
        return cls(labels=np.array(d["labels"], dtype=np.int64))


@dataclass
class MiouReport:
    mean: float
    per_part: list[dict]  # {"label", "iou", "best_pred"}


def miou(gt: GroundTruth, pred: Segmentation) -> MiouReport:
    """Mean over GT parts of the best face-set IoU against any predicted part."""
    g = gt.labels
    p = np.asarray(pred.labels, dtype=np.int64)
    if len(g) != len(p):
        raise AnalysisError(f"label arrays differ in length: {len(g)} vs {len(p)}")
    g_ids, g_inv = np.unique(g, return_inverse=True)
    p_ids, p_inv = np.unique(p, return_inverse=True)
    table = np.zeros((len(g_ids), len(p_ids)), dtype=np.int64)
    np.add.at(table, (g_inv, p_inv), 1)
    g_sizes = table.sum(axis=1)
    p_sizes = table.sum(axis=0)
    union = g_sizes[:, None] + p_sizes[None, :] - table
    iou = table / union
    best = iou.max(axis=1)
    best_pred = iou.argmax(axis=1)
    mean = float(np.sum(best) / len(g_ids))
    per_part = [
        {"label": int(g_ids[i]), "iou": float(best[i]), "best_pred": int(p_ids[best_pred[i]])}
        for i in range(len(g_ids))
    ]
    return MiouReport(mean=mean, per_part=per_part)


def best_of_scales(gt: GroundTruth, segs: list[Segmentation]):
    """Index and score of the best cut in a multi-scale sweep; ties prefer smaller k."""
    if not segs:
        raise AnalysisError("no segmentations to evaluate")
    best_idx = None
    best_score = -1.0
    for i, seg in enumerate(segs):
        score = miou(gt, seg).mean
        if score > best_score or (score == best_score and seg.k < segs[best_idx].k):
            best_idx, best_score = i, score
    return best_idx, best_score


def similarity_map(features, anchor: int, other_features=None) -> np.ndarray:
    """Cosine of every element's feature to the anchor's feature.

    With ``other_features`` the anchor stays in ``features`` and the map
    covers the other set (cross-shape exploration).
    """
    feats = np.asarray(getattr(features, "values", features), dtype=np.float64)
    if not 0 <= anchor < len(feats):
        raise AnalysisError(f"anchor {anchor} out of range")
    a = feats[anchor]
    norm = np.linalg.norm(a)
    if norm <= 1e-12:
        raise AnalysisError("anchor feature is degenerate (zero norm)")
    target = feats if other_features is None else np.asarray(
        getattr(other_features, "values", other_features), dtype=np.float64
    )
    if target.shape[1] != feats.shape[1]:
        raise AnalysisError("feature dimensions differ")
    return unit_normalize_rows(target) @ (a / norm)


def cosegment(source_seg: Segmentation, source_features, target_features) -> Segmentation:
    """Cluster the target with k-means seeded by source per-part mean features.

    Target labels inherit the source part ids through the seed order.
    """
    src = unit_normalize_rows(np.asarray(getattr(source_features, "values", source_features)))
    tgt = np.asarray(getattr(target_features, "values", target_features), dtype=np.float64)
    if src.shape[1] != tgt.shape[1]:
        raise AnalysisError(f"feature dimensions differ: {src.shape[1]} vs {tgt.shape[1]}")
    if len(src) != len(source_seg.labels):
        raise AnalysisError("source features do not cover the source segmentation")
    k = source_seg.k
    seeds = np.zeros((k, src.shape[1]), dtype=np.float64)
    for lab in range(k):
        mask = source_seg.labels == lab
        if not mask.any():
            raise AnalysisError(f"source part {lab} is empty")
        seeds[lab] = src[mask].mean(axis=0)
    return kmeans(tgt, k, init=seeds)


def nn_correspondence(source_features, target_features, chunk: int = 4096) -> np.ndarray:
    """Per source element, the target element with the most similar feature.

    Ties resolve to the lowest target index.
    """
    src = unit_normalize_rows(np.asarray(getattr(source_features, "values", source_features)))
    tgt = unit_normalize_rows(np.asarray(getattr(target_features, "values", target_features)))
    if len(tgt) == 0:
        raise AnalysisError("empty target")
    if src.shape[1] != tgt.shape[1]:
        raise AnalysisError("feature dimensions differ")
    out = np.empty(len(src), dtype=np.int64)
    for s in range(0, len(src), chunk):
        sims = src[s:s + chunk] @ tgt.T
        out[s:s + chunk] = np.argmax(sims, axis=1)
    return out


def transfer_point_labels_to_faces(mesh: TriMesh, points: PointSet,
                                   point_labels: np.ndarray) -> np.ndarray:
    """Per-face label from the nearest labeled point to each face center."""
    point_labels = np.asarray(point_labels)
    tree = cKDTree(points.points)
    _, idx = tree.query(mesh.face_centroids(), k=1)
    return point_labels[idx]


# ---------------------------------------------------------------------------
# interactive one-vs-rest logistic regression


@dataclass
class LogRegModel:
    weights: np.ndarray  # (n_classes, dim)
    bias: np.ndarray  # (n_classes,)
    classes: list[int]
    lam: float


def _fit_binary_logreg(x: np.ndarray, y: np.ndarray, lam: float,
                       tol: float = 1e-6, max_iters: int = 50_000):
    """Gradient descent with backtracking on the L2-regularized logistic loss."""
    w = np.zeros(x.shape[1])
    b = 0.0

    def objective(w_, b_):
        m = -y * (x @ w_ + b_)
        val = np.where(m > 0, m + np.log1p(np.exp(-m)), np.log1p(np.exp(m)))
        return float(val.sum() + 0.5 * lam * float(w_ @ w_))

    obj = objective(w, b)
    step = 1.0
    for _ in range(max_iters):
        z = x @ w + b
        s = 1.0 / (1.0 + np.exp(np.clip(y * z, -500, 500)))
        gw = -(x * (y * s)[:, None]).sum(axis=0) + lam * w
        gb = -float((y * s).sum())
        gnorm2 = float(gw @ gw) + gb * gb
        if np.sqrt(gnorm2) < tol:
            break
        # Armijo backtracking from a slightly optimistic previous step
        step = min(step * 2.0, 1e4)
        while True:
            w_new = w - step * gw
            b_new = b - step * gb
            new_obj = objective(w_new, b_new)
            if new_obj <= obj - 1e-4 * step * gnorm2 or step < 1e-16:
                break
            step *= 0.5
        w, b, obj = w_new, b_new, new_obj
    return w, b, obj


def fit_logreg(features, annotations, lam: float = 1e-3) -> LogRegModel:
    """One-vs-rest multiclass regression from a handful of labeled elements.

    ``annotations`` is a list of (element id, class id). The tiny training
    sets of interactive use fit in milliseconds.
    """
    feats = np.asarray(getattr(features, "values", features), dtype=np.float64)
    if not annotations:
        raise AnalysisError("no annotations")
    by_elem: dict[int, int] = {}
    for elem, cls in annotations:
        elem, cls = int(elem), int(cls)
        if elem in by_elem and by_elem[elem] != cls:
            raise AnalysisError(f"element {elem} annotated with conflicting classes")
        by_elem[elem] = cls
    classes = sorted(set(by_elem.values()))
    if len(classes) < 2:
        raise AnalysisError("need annotations from at least 2 classes")
    elems = np.array(sorted(by_elem), dtype=np.int64)
    targets = np.array([by_elem[e] for e in elems])
    x = feats[elems]
    weights = np.zeros((len(classes), feats.shape[1]))
    bias = np.zeros(len(classes))
    for ci, cls in enumerate(classes):
        y = np.where(targets == cls, 1.0, -1.0)
        weights[ci], bias[ci], _ = _fit_binary_logreg(x, y, lam)
    return LogRegModel(weights=weights, bias=bias, classes=classes, lam=lam)


def predict(model: LogRegModel, features) -> Segmentation:
    """Argmax class score per element; labels index into model.classes."""
    feats = np.asarray(getattr(features, "values", features), dtype=np.float64)
    scores = feats @ model.weights.T + model.bias
    return Segmentation(labels=np.argmax(scores, axis=1).astype(np.int32),
                        k=len(model.classes))


# ---------------------------------------------------------------------------
# benchmark category grouping

PARTNETE_GROUPS: dict[str, tuple[str, ...]] = {
    "Electronics & Computing Devices": (
        "Keyboard", "Mouse", "Laptop", "Phone", "Camera", "USB", "Display",
        "Remote", "Printer", "Switch",
    ),
    "Large Home Appliances": (
        "WashingMachine", "Dishwasher", "Refrigerator", "Oven", "Microwave",
    ),
    "Kitchen & Food-Related Items": (
        "KitchenPot", "Kettle", "Toaster", "CoffeeMachine", "Faucet",
        "Dispenser", "Knife", "Bottle", "Bucket",
    ),
    "Furniture & Household Infrastructure": (
        "Table", "Chair", "FoldingChair", "StorageFurniture", "Door",
        "Window", "Lamp", "TrashCan", "Safe",
    ),
    "Tools, Office Supplies, & Miscellaneous": (
        "Stapler", "Scissors", "Pen", "Pliers", "Lighter", "Box", "Cart",
        "Globe", "Suitcase", "Eyeglasses", "Clock",
    ),
}


def group_for_category(category: str) -> str:
    for group, members in PARTNETE_GROUPS.items():
        if category in members:
            return group
    raise AnalysisError(f"unknown category {category!r}")


def grouped_means(per_category: dict[str, float]) -> dict[str, float]:
    """Average per-category scores inside each benchmark group."""
    sums: dict[str, list[float]] = {}
    for cat, score in per_category.items():
        sums.setdefault(group_for_category(cat), []).append(score)
    return {g: float(np.mean(v)) for g, v in sums.items()}


def evaluation_report(gt: GroundTruth, segs: list[Segmentation]) -> dict:
    """Full JSON report: per-scale scores, the winning scale, per-part IoU."""
    scores = [miou(gt, s) for s in segs]
    best_idx, best_score = best_of_scales(gt, segs)
    return {
        "n_scales": len(segs),
        "best_index": int(best_idx),
        "best_k": int(segs[best_idx].k),
        "miou": float(best_score),
        "per_scale": [
            {"k": int(s.k), "miou": float(r.mean)} for s, r in zip(segs, scores)
        ],
        "per_part": scores[best_idx].per_part,
    }
