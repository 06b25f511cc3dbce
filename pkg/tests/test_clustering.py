import numpy as np
import pytest

from partfield.clustering import (
    ClusteringError,
    MergeTree,
    Segmentation,
    _lloyd,
    agglomerate,
    cut_tree,
    kmeans,
    multi_scale,
    unit_normalize_rows,
)
from oracles import agglomerate_brute
from synthetic import dumbbell


def _chain_adjacency(n):
    return [np.array([j for j in (i - 1, i + 1) if 0 <= j < n]) for i in range(n)]


def test_two_faces_single_merge():
    feats = np.array([[1.0, 0.0], [0.0, 1.0]])
    tree = agglomerate(feats, _chain_adjacency(2))
    assert tree.n_leaves == 2
    assert tree.n_internal == 1
    assert cut_tree(tree, 2).labels.tolist() == [0, 1]
    assert cut_tree(tree, 1).labels.tolist() == [0, 0]


def test_chain_aaabbb_two_cut():
    a = [1.0, 0.0]
    b = [0.0, 1.0]
    feats = np.array([a, a, a, b, b, b])
    tree = agglomerate(feats, _chain_adjacency(6))
    seg = cut_tree(tree, 2)
    assert seg.labels.tolist() == [0, 0, 0, 1, 1, 1]


def test_matches_brute_force_on_toys():
    rng = np.random.default_rng(17)
    for trial in range(8):
        n = int(rng.integers(3, 11))
        feats = rng.normal(size=(n, 3))
        adjacency = _chain_adjacency(n)
        if trial % 2 == 0:  # add a few extra edges for a non-path graph
            extra = rng.integers(0, n, size=(2, 2))
            adj_sets = [set(map(int, a)) for a in adjacency]
            for u, v in extra:
                if u != v:
                    adj_sets[u].add(int(v))
                    adj_sets[v].add(int(u))
            adjacency = [np.array(sorted(s)) for s in adj_sets]
        tree = agglomerate(feats, adjacency)
        expected = agglomerate_brute(feats, adjacency)
        got = list(zip(tree.left.tolist(), tree.right.tolist(), tree.cost.tolist()))
        assert len(got) == len(expected)
        for (gl, gr, gc), (el, er, ec) in zip(got, expected):
            assert {gl, gr} == {el, er}
            assert gc == pytest.approx(ec, abs=1e-12)


def test_cut_extremes_and_errors():
    rng = np.random.default_rng(2)
    feats = rng.normal(size=(9, 4))
    tree = agglomerate(feats, _chain_adjacency(9))
    assert cut_tree(tree, 1).k == 1
    seg_full = cut_tree(tree, 9)
    assert seg_full.k == 9
    assert sorted(seg_full.labels.tolist()) == list(range(9))
    with pytest.raises(ClusteringError):
        cut_tree(tree, 0)
    with pytest.raises(ClusteringError):
        cut_tree(tree, 10)


def test_cuts_nest_on_random_trees():
    rng = np.random.default_rng(5)
    for _ in range(5):
        n = int(rng.integers(6, 26))
        feats = rng.normal(size=(n, 5))
        tree = agglomerate(feats, _chain_adjacency(n))
        segs = {k: cut_tree(tree, k) for k in range(1, n + 1)}
        for k in range(1, n):
            for kp in range(k + 1, n + 1):
                coarse, fine = segs[k].labels, segs[kp].labels
                # each fine cluster maps into exactly one coarse cluster
                for lab in np.unique(fine):
                    assert len(np.unique(coarse[fine == lab])) == 1


def test_cut_clusters_connected_on_connected_mesh():
    mesh, _ = dumbbell(res_per_unit=6)
    rng = np.random.default_rng(0)
    feats = rng.normal(size=(mesh.n_faces, 8))
    tree = agglomerate(feats, mesh.face_adjacency)
    for k in (2, 3, 5, 9):
        seg = cut_tree(tree, k)
        for lab in range(seg.k):
            members = set(np.nonzero(seg.labels == lab)[0].tolist())
            start = next(iter(members))
            seen = {start}
            stack = [start]
            while stack:
                f = stack.pop()
                for g in mesh.face_adjacency[f]:
                    g = int(g)
                    if g in members and g not in seen:
                        seen.add(g)
                        stack.append(g)
            assert seen == members, f"k={k} label {lab} disconnected"


def test_constant_per_part_features_recover_parts():
    mesh, labels = dumbbell(res_per_unit=6)
    anchors = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])
    feats = anchors[labels]
    tree = agglomerate(feats, mesh.face_adjacency)
    seg = cut_tree(tree, 3)
    expected = Segmentation(labels=labels).canonicalized()
    assert np.array_equal(seg.labels, expected.labels)


def test_disconnected_mesh_total_cut():
    # two separate chains: per-component trees joined at the top
    adjacency = _chain_adjacency(3) + [np.array([j + 3 for j in (i - 1, i + 1) if 0 <= j < 3]) for i in range(3)]
    feats = np.random.default_rng(1).normal(size=(6, 3))
    tree = agglomerate(feats, adjacency)
    assert tree.n_internal == 5
    seg2 = cut_tree(tree, 2)
    # the k=2 cut separates the components
    assert seg2.labels.tolist() == [0, 0, 0, 1, 1, 1]
    assert cut_tree(tree, 6).k == 6


def test_multi_scale_default_20():
    feats = np.random.default_rng(3).normal(size=(40, 4))
    tree = agglomerate(feats, _chain_adjacency(40))
    segs = multi_scale(tree)
    assert len(segs) == 20
    assert [s.k for s in segs] == list(range(2, 22))
    whole = multi_scale(tree, ks=[1])
    assert len(whole) == 1
    assert whole[0].k == 1


def test_merge_tree_json_round_trip():
    feats = np.random.default_rng(4).normal(size=(12, 3))
    tree = agglomerate(feats, _chain_adjacency(12))
    out = MergeTree.from_json(tree.to_json())
    assert out.n_leaves == tree.n_leaves
    assert np.array_equal(out.left, tree.left)
    assert np.array_equal(out.right, tree.right)
    assert np.allclose(out.cost, tree.cost)
    for k in (1, 4, 12):
        assert np.array_equal(cut_tree(out, k).labels, cut_tree(tree, k).labels)


# ---------------------------------------------------------------------------
# k-means


def test_kmeans_seeded_two_blobs_one_iteration():
    rng = np.random.default_rng(6)
    blob_a = rng.normal((5, 0, 0), 0.05, size=(30, 3))
    blob_b = rng.normal((0, 5, 0), 0.05, size=(30, 3))
    feats = np.concatenate([blob_a, blob_b])
    unit = unit_normalize_rows(feats)
    seeds = np.stack([unit[:30].mean(axis=0), unit[30:].mean(axis=0)])
    labels, _, history = _lloyd(unit, seeds.copy(), max_iters=10)
    assert np.all(labels[:30] == 0)
    assert np.all(labels[30:] == 1)
    assert len(history) <= 2  # first assignment is already the fixed point


def test_kmeans_k1_centroid_is_normalized_mean():
    rng = np.random.default_rng(7)
    feats = rng.normal(size=(25, 4))
    unit = unit_normalize_rows(feats)
    seg = kmeans(feats, 1, init="random", seed=0)
    assert seg.k == 1
    _, centers, _ = _lloyd(unit, unit[:1].copy(), max_iters=50)
    assert np.allclose(centers[0], unit.mean(axis=0))


def test_kmeans_objective_monotone():
    rng = np.random.default_rng(8)
    for trial in range(5):
        feats = rng.normal(size=(60, 5))
        unit = unit_normalize_rows(feats)
        centers = unit[rng.choice(60, size=4, replace=False)].copy()
        _, _, history = _lloyd(unit, centers, max_iters=50)
        assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))


def test_kmeans_validation():
    feats = np.tile(np.array([[1.0, 0.0]]), (5, 1))
    with pytest.raises(ClusteringError, match="distinct"):
        kmeans(feats, 3, init="random")
    with pytest.raises(ClusteringError, match="exceeds"):
        kmeans(np.eye(3), 4, init="random")


def test_segmentation_canonical_equality():
    a = Segmentation(labels=np.array([2, 2, 0, 1, 1])).canonicalized()
    b = Segmentation(labels=np.array([0, 0, 1, 2, 2])).canonicalized()
    assert np.array_equal(a.labels, b.labels)
    out = Segmentation.from_json(a.to_json())
    assert np.array_equal(out.labels, a.labels)
    assert out.k == a.k
