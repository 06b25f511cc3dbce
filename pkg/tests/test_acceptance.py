"""Acceptance suite: one test per release criterion, at fixed tolerances.

Heavy fixtures (the two long fits) are session-scoped and shared by the
criteria that examine their results. Every test prints one PASS line;
pytest -v -s shows them inline.
"""

import json
import time

import numpy as np
import pytest

from partfield.analysis import GroundTruth, best_of_scales, cosegment, miou, nn_correspondence
from partfield.clustering import Segmentation, agglomerate, cut_tree, multi_scale
from partfield.field import face_features, new_triplane
from partfield.fitting import (
    FitConfig,
    canonical_point_set,
    fit_field,
    loss_from_similarities,
    loss_grad,
)
from partfield.geometry import default_camera_rig, normalize_unit_cube, save_mesh_obj
from partfield.proposals import (
    LabelSet,
    face_labels_to_elements,
    ingest_labels,
    synth_mask_proposals,
)
from partfield.sampler import SamplerConfig, TripletBatch, build_triplet_batch
from oracles import finite_diff_loss_grads, max_relative_error, miou_exhaustive
from synthetic import dumbbell, torus_grid, voxel_surface


def _ok(name):
    print(f"\n[acceptance] {name}: PASS")


def _bar_n(n_parts, res=16):
    lo = np.array([-1.0, -0.2, -0.2])
    hi = np.array([1.0, 0.2, 0.2])
    n = (np.ceil((hi - lo) * res)).astype(int)
    mesh = voxel_surface(np.ones(n, dtype=bool), lo, hi)
    cx = mesh.face_centroids()[:, 0]
    edges = np.linspace(-1, 1, n_parts + 1)
    labels = np.clip(np.searchsorted(edges, cx, side="right") - 1, 0, n_parts - 1)
    return mesh, labels


def _label_proposals(mesh, labels, points):
    elem_labels = face_labels_to_elements(labels, points)
    label_set = LabelSet.from_json(
        {"levels": [{"name": "parts", "labels": elem_labels.tolist()}]}
    )
    return ingest_labels(label_set, len(points))


# ---------------------------------------------------------------------------
# shared long-running fits


@pytest.fixture(scope="session")
def dumbbell_fixture():
    mesh, labels = dumbbell(res_per_unit=16)
    mesh, _ = normalize_unit_cube(mesh)
    return mesh, labels


def _desk_fit_config(seed=0):
    return FitConfig(
        iterations=2000, learning_rate=2e-3, seed=seed, snapshot_period=50,
        resolution=64, channels=32, init_scale=0.05, canonical_points=10_000,
        sampler=SamplerConfig(masks_per_batch=2, positive_pairs=64,
                              uniform_negatives=64, hard3d_negatives=64,
                              feature_hard_negatives=64),
        feature_hard_start=500,
    )


@pytest.fixture(scope="session")
def fitted_3d(dumbbell_fixture):
    """Criterion fit: 3D label proposals, R=64 / C=32, 2000 iterations."""
    mesh, labels = dumbbell_fixture
    cfg = _desk_fit_config()
    points = canonical_point_set(mesh, cfg)
    proposals = _label_proposals(mesh, labels, points)
    t0 = time.perf_counter()
    fld, report = fit_field(points, proposals, cfg)
    elapsed = time.perf_counter() - t0
    return {
        "mesh": mesh, "labels": labels, "points": points,
        "proposals": proposals, "field": fld, "report": report,
        "elapsed": elapsed, "config": cfg,
    }


@pytest.fixture(scope="session")
def fitted_2d(dumbbell_fixture):
    """Criterion fit: supervision only from 6 projected synthetic-view masks."""
    mesh, labels = dumbbell_fixture
    cfg = _desk_fit_config(seed=1)
    points = canonical_point_set(mesh, cfg)
    cams = default_camera_rig(n_views=6, resolution=(192, 192))
    proposals = synth_mask_proposals(mesh, labels, cams, points)
    t0 = time.perf_counter()
    fld, report = fit_field(points, proposals, cfg)
    elapsed = time.perf_counter() - t0
    return {
        "mesh": mesh, "labels": labels, "points": points,
        "proposals": proposals, "field": fld, "report": report,
        "elapsed": elapsed,
    }


# ---------------------------------------------------------------------------
# criteria


def test_gradient_correctness():
    """Analytic loss gradient vs central differences: rel err < 1e-4,
    20 random configurations, all parameters and the temperature, < 1 min."""
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        fld = new_triplane(8, 4, init_scale=0.6, seed=seed + 100)
        pts = rng.uniform(-0.98, 0.98, (30, 3))
        anchors = rng.integers(0, 30, 4)
        positives = (anchors + 1 + rng.integers(0, 29, 4)) % 30
        negatives = rng.integers(0, 30, (4, 8))
        batch = TripletBatch(anchors=anchors, positives=positives,
                             negatives=negatives, counts=(8, 0, 0),
                             proposal_ids=np.zeros(4, dtype=np.int32), points=pts)
        plane_g, theta_g, _ = loss_grad(batch, fld)
        fd_planes, fd_theta = finite_diff_loss_grads(batch, fld)
        rel = max_relative_error(plane_g, fd_planes)
        theta_rel = abs(theta_g - fd_theta) / max(abs(theta_g), abs(fd_theta), 1e-12)
        worst = max(worst, rel, theta_rel)
    elapsed = time.perf_counter() - t0
    assert worst < 1e-4, f"worst relative error {worst:.2e}"
    assert elapsed < 60.0, f"gradient check took {elapsed:.1f}s"
    _ok(f"gradient correctness (worst rel err {worst:.2e}, {elapsed:.1f}s)")


def test_loss_closed_forms():
    """Equal-similarity single negative = ln 2 within 1e-9; the
    (cos_ab=1, cos_c=0, tau=1) case = 0.313262 within 1e-6."""
    for cos in (-0.7, 0.0, 0.42):
        loss, *_ = loss_from_similarities(
            np.array([cos]), np.array([[cos]]), np.array([[cos]]), tau=0.31
        )
        assert abs(loss - np.log(2.0)) < 1e-9
    loss, *_ = loss_from_similarities(
        np.array([1.0]), np.array([[0.0]]), np.array([[0.0]]), tau=1.0
    )
    assert abs(loss - 0.313262) < 1e-6
    _ok("loss closed forms (ln 2 and 0.313262)")


def test_miou_oracle_equivalence():
    """1000 random partition pairs of <= 100 faces: bitwise equality with
    the exhaustive pairwise-IoU oracle, in < 10 s."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        n = int(rng.integers(2, 101))
        gt_labels = rng.integers(0, rng.integers(1, 9), n)
        pred_labels = rng.integers(0, rng.integers(1, 9), n)
        ours = miou(GroundTruth(labels=gt_labels),
                    Segmentation(labels=pred_labels)).mean
        oracle, _ = miou_exhaustive(gt_labels, pred_labels)
        assert ours == oracle
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0, f"mIoU oracle sweep took {elapsed:.1f}s"
    _ok(f"mIoU oracle equivalence (1000 pairs, {elapsed:.1f}s)")


def test_end_to_end_3d_proposals(fitted_3d):
    """Dumbbell with 3D proposals: k=3 agglomerative cut reaches
    mIoU >= 0.90 after 2000 iterations at R=64/C=32, in < 5 minutes."""
    mesh, labels = fitted_3d["mesh"], fitted_3d["labels"]
    t0 = time.perf_counter()
    ff = face_features(fitted_3d["field"], mesh, samples_per_face=10, seed=0)
    tree = agglomerate(ff, mesh.face_adjacency)
    seg = cut_tree(tree, 3)
    cluster_time = time.perf_counter() - t0
    score = miou(GroundTruth(labels=labels), seg).mean
    total = fitted_3d["elapsed"] + cluster_time
    assert score >= 0.90, f"mIoU {score:.4f}"
    assert total < 300.0, f"3D pipeline took {total:.0f}s"
    fitted_3d["tree"] = tree
    _ok(f"end-to-end 3D proposals (mIoU {score:.4f}, {total:.0f}s)")


def test_end_to_end_2d_proposals(fitted_2d):
    """Dumbbell supervised only by 6 projected view masks: best of 20
    scales reaches mIoU >= 0.85, in < 10 minutes."""
    mesh, labels = fitted_2d["mesh"], fitted_2d["labels"]
    assert all(p.visible is not None for p in fitted_2d["proposals"])
    t0 = time.perf_counter()
    ff = face_features(fitted_2d["field"], mesh, samples_per_face=10, seed=0)
    tree = agglomerate(ff, mesh.face_adjacency)
    segs = multi_scale(tree)  # k = 2..21
    _, score = best_of_scales(GroundTruth(labels=labels), segs)
    total = fitted_2d["elapsed"] + (time.perf_counter() - t0)
    assert len(segs) == 20
    assert score >= 0.85, f"best-of-scales mIoU {score:.4f}"
    assert total < 600.0, f"2D pipeline took {total:.0f}s"
    _ok(f"end-to-end 2D proposals (mIoU {score:.4f}, {total:.0f}s)")


def test_hard_negative_efficacy():
    """With identical seeds and negative budgets, mixed 3D-hard +
    feature-hard mining reaches mIoU >= 0.90 in <= 0.75x the iterations
    of uniform-only mining (mean over three seeded runs)."""
    mesh, labels = _bar_n(12)
    mesh, _ = normalize_unit_cube(mesh)
    gt = GroundTruth(labels=labels)
    uniform = SamplerConfig(masks_per_batch=2, positive_pairs=32,
                            uniform_negatives=24, hard3d_negatives=0,
                            feature_hard_negatives=0)
    mixed = SamplerConfig(masks_per_batch=2, positive_pairs=32,
                          uniform_negatives=4, hard3d_negatives=16,
                          feature_hard_negatives=4, hard3d_bandwidth=0.15)

    def reach_iteration(sampler, feature_hard_start, seed, max_iters=300):
        cfg = FitConfig(iterations=max_iters, learning_rate=1e-3, seed=seed,
                        snapshot_period=10, resolution=64, channels=32,
                        init_scale=0.05, canonical_points=10_000,
                        sampler=sampler, feature_hard_start=feature_hard_start)
        points = canonical_point_set(mesh, cfg)
        proposals = _label_proposals(mesh, labels, points)
        hit = {}

        def check(it, fld, _loss):
            if hit:
                return
            ff = face_features(fld, mesh, samples_per_face=4, seed=0)
            tree = agglomerate(ff, mesh.face_adjacency)
            if miou(gt, cut_tree(tree, 12)).mean >= 0.90:
                hit["iteration"] = it

        fit_field(points, proposals, cfg, snapshot_callback=check)
        return hit.get("iteration", max_iters)

    seeds = (0, 1, 2)
    uniform_total = sum(reach_iteration(uniform, 10 ** 9, s) for s in seeds)
    mixed_total = sum(reach_iteration(mixed, 60, s) for s in seeds)
    ratio = mixed_total / uniform_total
    assert ratio <= 0.75, (
        f"mixed mining used {mixed_total / 3:.0f} iterations vs uniform's "
        f"{uniform_total / 3:.0f} ({ratio:.2f}x)"
    )
    _ok(f"hard-negative efficacy (iteration ratio {ratio:.3f} <= 0.75)")


def test_triplet_ordering(fitted_3d):
    """>= 95% of freshly sampled triplets keep the positive pair more
    similar than the anchor-negative pair after fitting."""
    cfg = SamplerConfig(masks_per_batch=8, positive_pairs=64,
                        uniform_negatives=32, hard3d_negatives=0,
                        feature_hard_negatives=0, seed=777)
    batch = build_triplet_batch(fitted_3d["proposals"], fitted_3d["points"],
                                cfg, seed=777)
    from partfield.field import query_raw

    fld = fitted_3d["field"]
    feats = query_raw(fld, batch.points[np.unique(
        np.concatenate([batch.anchors, batch.positives, batch.negatives.ravel()])
    )])
    uniq = np.unique(np.concatenate(
        [batch.anchors, batch.positives, batch.negatives.ravel()]
    ))
    lookup = {int(e): i for i, e in enumerate(uniq)}
    unit = feats / np.linalg.norm(feats, axis=1, keepdims=True)
    ia = np.array([lookup[int(e)] for e in batch.anchors])
    ib = np.array([lookup[int(e)] for e in batch.positives])
    ic = np.array([[lookup[int(e)] for e in row] for row in batch.negatives])
    cos_ab = np.einsum("pc,pc->p", unit[ia], unit[ib])
    cos_ac = np.einsum("pc,pmc->pm", unit[ia], unit[ic])
    ordered = (cos_ab[:, None] > cos_ac).mean()
    assert ordered >= 0.95, f"only {ordered:.3f} of triplets ordered"
    _ok(f"triplet ordering ({ordered:.4f} >= 0.95 over {cos_ac.size} triplets)")


def test_hierarchy_invariants(fitted_3d):
    """Cuts nest for k = 2..21, every cluster is connected on the
    connected fixture, and per-part-constant features recover the truth."""
    mesh, labels = fitted_3d["mesh"], fitted_3d["labels"]
    tree = fitted_3d.get("tree")
    if tree is None:
        ff = face_features(fitted_3d["field"], mesh, samples_per_face=10, seed=0)
        tree = agglomerate(ff, mesh.face_adjacency)
    segs = {k: cut_tree(tree, k) for k in range(2, 22)}
    for k in range(2, 21):
        coarse = segs[k].labels
        fine = segs[k + 1].labels
        for lab in np.unique(fine):
            assert len(np.unique(coarse[fine == lab])) == 1, f"nesting broken at k={k}"
    adjacency = mesh.face_adjacency
    for k in (2, 5, 9, 21):
        seg = segs[k]
        for lab in range(seg.k):
            members = set(np.nonzero(seg.labels == lab)[0].tolist())
            start = next(iter(members))
            seen = {start}
            stack = [start]
            while stack:
                f = stack.pop()
                for g in adjacency[f]:
                    g = int(g)
                    if g in members and g not in seen:
                        seen.add(g)
                        stack.append(g)
            assert seen == members, f"k={k} cluster {lab} disconnected"
    # constant per-part features recover the ground truth exactly
    anchors = np.eye(3)
    const_feats = anchors[labels]
    const_tree = agglomerate(const_feats, adjacency)
    got = cut_tree(const_tree, 3)
    want = Segmentation(labels=labels).canonicalized()
    assert np.array_equal(got.labels, want.labels)
    _ok("hierarchy invariants (nesting, connectivity, exact recovery)")


def test_inference_speed_50k():
    """Face features + merge tree + 20 cuts on a 50k-face mesh in < 30 s."""
    mesh = torus_grid(250, 100)
    mesh, _ = normalize_unit_cube(mesh)
    assert mesh.n_faces == 50_000
    fld = new_triplane(64, 32, init_scale=0.3, seed=3)
    t0 = time.perf_counter()
    ff = face_features(fld, mesh, samples_per_face=10, seed=0)
    tree = agglomerate(ff, mesh.face_adjacency)
    segs = multi_scale(tree)
    elapsed = time.perf_counter() - t0
    assert len(segs) == 20
    assert elapsed < 30.0, f"post-field pipeline took {elapsed:.1f}s"
    _ok(f"inference speed on 50k faces ({elapsed:.1f}s < 30s)")


def test_cross_shape_forced_consistency(fitted_3d):
    """Label transfer to a translated + scaled copy is exact under shared
    normalization; correspondence on identical features is the identity."""
    mesh, labels = fitted_3d["mesh"], fitted_3d["labels"]
    fld = fitted_3d["field"]
    from partfield.geometry import TriMesh

    copy = TriMesh(mesh.vertices * 0.5 + np.array([10.0, -3.0, 2.0]),
                   mesh.faces.copy(), face_adjacency=mesh.face_adjacency)
    copy_norm, _ = normalize_unit_cube(copy)
    assert np.abs(copy_norm.vertices - mesh.vertices).max() < 1e-9

    src_ff = face_features(fld, mesh, samples_per_face=10, seed=0)
    tgt_ff = face_features(fld, copy_norm, samples_per_face=10, seed=0)
    source_seg = Segmentation(labels=labels).canonicalized()
    transferred = cosegment(source_seg, src_ff, tgt_ff)
    assert np.array_equal(transferred.labels, source_seg.labels)

    idx = nn_correspondence(src_ff, src_ff)
    assert np.array_equal(idx, np.arange(mesh.n_faces))
    _ok("cross-shape forced consistency (exact transfer + identity map)")


def test_cli_determinism(tmp_path):
    """fit, segment, and eval produce byte-identical outputs across two
    runs with fixed seeds (fit reports differ only in wall-clock)."""
    from partfield.cli import main

    mesh, labels = dumbbell(res_per_unit=6)
    save_mesh_obj(mesh, tmp_path / "shape.obj")
    (tmp_path / "labels.json").write_text(json.dumps(
        {"levels": [{"name": "parts", "labels": labels.tolist()}]}
    ))
    cfg = FitConfig(iterations=30, learning_rate=5e-3, seed=9, snapshot_period=10,
                    resolution=16, channels=8, init_scale=0.1, canonical_points=500,
                    sampler=SamplerConfig(masks_per_batch=2, positive_pairs=16,
                                          uniform_negatives=16, hard3d_negatives=8,
                                          feature_hard_negatives=8),
                    feature_hard_start=10)
    (tmp_path / "fit.json").write_text(json.dumps(cfg.to_json()))
    (tmp_path / "gt.json").write_text(json.dumps({"labels": labels.tolist()}))

    for run in (1, 2):
        assert main([
            "fit", str(tmp_path / "shape.obj"), str(tmp_path / "labels.json"),
            "--config", str(tmp_path / "fit.json"),
            "--out", str(tmp_path / f"field{run}.pfld"),
            "--report", str(tmp_path / f"report{run}.json"),
        ]) == 0
        assert main([
            "segment", str(tmp_path / "shape.obj"), str(tmp_path / f"field{run}.pfld"),
            "--scales", "20", "--out", str(tmp_path / f"sweep{run}.json"),
        ]) == 0
        assert main([
            "eval", str(tmp_path / "gt.json"), str(tmp_path / f"sweep{run}.json"),
            "--out", str(tmp_path / f"eval{run}.json"),
        ]) == 0

    assert (tmp_path / "field1.pfld").read_bytes() == (tmp_path / "field2.pfld").read_bytes()
    assert (tmp_path / "sweep1.json").read_bytes() == (tmp_path / "sweep2.json").read_bytes()
    assert (tmp_path / "eval1.json").read_bytes() == (tmp_path / "eval2.json").read_bytes()
    r1 = json.loads((tmp_path / "report1.json").read_text())
    r2 = json.loads((tmp_path / "report2.json").read_text())
    r1.pop("wall_clock_s")
    r2.pop("wall_clock_s")
    assert r1 == r2
    _ok("CLI determinism (byte-identical fit/segment/eval outputs)")
