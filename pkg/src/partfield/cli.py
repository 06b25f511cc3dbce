"""Command-line interface: fit, segment, eval, coseg, correspond,
hierarchy, proposals project, and serve.

Commands are pure functions of (input files, flags, seed): re-running a
command reproduces its outputs byte for byte, except for the wall-clock
field inside fit reports.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis, clustering, fitting, proposals as proposals_mod
from .field import (
    FIELD_MAGIC,
    face_features,
    load_features,
    load_field,
    save_field,
)
from .geometry import Camera, load_mesh, normalize_unit_cube, render_depth_ids


class CliError(RuntimeError):
    pass


def _require(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what} not found: {p}")
    return p


def _write_json(obj, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _load_json(path: Path):
    with open(path) as fh:
        return json.load(fh)


def _element_labels(raw_labels, mesh, points) -> np.ndarray:
    labels = np.asarray(raw_labels, dtype=np.int64)
    if len(labels) == len(points):
        return labels
    if len(labels) == mesh.n_faces:
        return proposals_mod.face_labels_to_elements(labels, points)
    raise CliError(
        f"labels cover {len(labels)} elements; expected {mesh.n_faces} faces "
        f"or {len(points)} canonical points"
    )


def _proposals_from_manifest(manifest_path: Path, mesh, points, cfg):
    """Label file (object with levels) or mask manifest (list of entries)."""
    data = _load_json(manifest_path)
    if isinstance(data, dict) and "levels" in data:
        levels = []
        for i, level in enumerate(data["levels"]):
            levels.append({
                "name": level.get("name", f"level{i}"),
                "labels": _element_labels(level["labels"], mesh, points).tolist(),
            })
        label_set = proposals_mod.LabelSet.from_json({"levels": levels})
        return proposals_mod.ingest_labels(label_set, len(points))
    if isinstance(data, list):
        out = []
        base = manifest_path.parent
        radius = proposals_mod.matching_radius(points)
        for i, entry in enumerate(data):
            mask_path = _require(str(base / entry["mask"]), f"mask file (entry {i})")
            camera = Camera.from_json(entry["camera"])
            mask = proposals_mod.read_mask(mask_path)
            view = render_depth_ids(mesh, camera)
            out.append(proposals_mod.project_mask(
                mask, view, camera, points, radius=radius,
                source={"kind": "mask2d", "view": i, "mask": entry["mask"]},
            ))
        return out
    raise CliError(f"{manifest_path}: expected a label object or a mask manifest list")


def cmd_fit(args) -> int:
    mesh_path = _require(args.mesh, "mesh file")
    manifest_path = _require(args.proposals, "proposals manifest")
    if args.config:
        cfg = fitting.fit_config_from_file(_require(args.config, "fit config"))
    else:
        cfg = fitting.FitConfig()
    if args.iterations is not None:
        cfg.iterations = args.iterations
    if args.seed is not None:
        cfg.seed = args.seed
    mesh = load_mesh(mesh_path)
    mesh, _ = normalize_unit_cube(mesh)
    points = fitting.canonical_point_set(mesh, cfg)
    props = _proposals_from_manifest(manifest_path, mesh, points, cfg)
    fld, report = fitting.fit_field(points, props, cfg)
    save_field(fld, args.out)
    if args.report:
        _write_json(report.to_json(), args.report)
    print(f"wrote {args.out} ({cfg.iterations} iterations, "
          f"final loss {report.final_loss:.6f})")
    return 0


def _face_features_for(args, mesh):
    source = _require(args.features, "field or feature file")
    with open(source, "rb") as fh:
        magic = fh.read(4)
    if magic == FIELD_MAGIC:
        fld = load_field(source)
        return face_features(fld, mesh, samples_per_face=args.samples_per_face,
                             seed=args.feature_seed)
    fs = load_features(source, kind="face")
    if len(fs) != mesh.n_faces:
        raise CliError(
            f"{source}: {len(fs)} feature rows but the mesh has {mesh.n_faces} faces; "
            "segment needs per-face features"
        )
    return fs


def cmd_segment(args) -> int:
    mesh = load_mesh(_require(args.mesh, "mesh file"))
    mesh, _ = normalize_unit_cube(mesh)
    ff = _face_features_for(args, mesh)
    tree = clustering.agglomerate(ff, mesh.face_adjacency)
    if args.k is not None:
        seg = clustering.cut_tree(tree, args.k)
        _write_json(seg.to_json(), args.out)
    else:
        ks = range(2, 2 + args.scales)
        segs = clustering.multi_scale(tree, ks=ks)
        _write_json({"scales": [s.to_json() for s in segs]}, args.out)
    print(f"wrote {args.out}")
    return 0


def _segmentations_from_json(data) -> list[clustering.Segmentation]:
    if isinstance(data, dict) and "scales" in data:
        return [clustering.Segmentation.from_json(d) for d in data["scales"]]
    if isinstance(data, dict) and "labels" in data:
        return [clustering.Segmentation.from_json(data)]
    raise CliError("prediction file must hold a segmentation or a scale sweep")


def cmd_eval(args) -> int:
    gt = analysis.GroundTruth.from_json(_load_json(_require(args.gt, "ground-truth file")))
    segs = _segmentations_from_json(_load_json(_require(args.pred, "prediction file")))
    report = analysis.evaluation_report(gt, segs)
    _write_json(report, args.out)
    print(f"mIoU {report['miou']:.5f} at k={report['best_k']} -> {args.out}")
    return 0


def cmd_hierarchy(args) -> int:
    mesh = load_mesh(_require(args.mesh, "mesh file"))
    mesh, _ = normalize_unit_cube(mesh)
    ff = _face_features_for(args, mesh)
    tree = clustering.agglomerate(ff, mesh.face_adjacency)
    _write_json(tree.to_json(), args.out)
    print(f"wrote {args.out} ({tree.n_leaves} leaves)")
    return 0


def cmd_coseg(args) -> int:
    seg = clustering.Segmentation.from_json(_load_json(_require(args.source_seg, "source segmentation")))
    src = load_features(_require(args.source_features, "source features"), kind="face")
    tgt = load_features(_require(args.target_features, "target features"), kind="face")
    out = analysis.cosegment(seg, src, tgt)
    _write_json(out.to_json(), args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_correspond(args) -> int:
    src = load_features(_require(args.source_features, "source features"))
    tgt = load_features(_require(args.target_features, "target features"))
    idx = analysis.nn_correspondence(src, tgt)
    _write_json({"indices": idx.tolist()}, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_proposals_project(args) -> int:
    from .geometry import sample_surface

    mesh = load_mesh(_require(args.mesh, "mesh file"))
    mesh, _ = normalize_unit_cube(mesh)
    camera = Camera.from_json(_load_json(_require(args.camera, "camera file")))
    mask = proposals_mod.read_mask(_require(args.mask, "mask file"))
    points = sample_surface(mesh, args.points, seed=args.seed)
    view = render_depth_ids(mesh, camera)
    prop = proposals_mod.project_mask(mask, view, camera, points)
    _write_json({
        "source": prop.source,
        "n_elements": prop.n_elements,
        "members": prop.members.tolist(),
        "visible": prop.visible.tolist(),
    }, args.out)
    print(f"wrote {args.out} ({len(prop.members)} members)")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(data_dir=args.data_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="partfield",
        description="Part-aware feature fields: fit, cluster, evaluate, explore",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a triplane field to a shape's part proposals")
    p.add_argument("mesh", help="OBJ mesh path")
    p.add_argument("proposals", help="label JSON or mask manifest JSON")
    p.add_argument("--config", help="fit configuration JSON")
    p.add_argument("--out", required=True, help="output field path (.pfld)")
    p.add_argument("--report", help="fit report JSON path")
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("segment", help="face features -> merge tree -> cut(s)")
    p.add_argument("mesh")
    p.add_argument("features", help="field (.pfld) or per-face features (.pfts)")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--k", type=int, help="single cut size")
    group.add_argument("--scales", type=int, help="sweep k = 2 .. scales+1")
    p.add_argument("--out", required=True)
    p.add_argument("--samples-per-face", type=int, default=10, dest="samples_per_face")
    p.add_argument("--feature-seed", type=int, default=0, dest="feature_seed")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", help="mean IoU of predictions against ground truth")
    p.add_argument("gt", help="ground-truth labels JSON")
    p.add_argument("pred", help="segmentation JSON or sweep JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("hierarchy", help="emit the merge tree as JSON")
    p.add_argument("mesh")
    p.add_argument("features")
    p.add_argument("--out", required=True)
    p.add_argument("--samples-per-face", type=int, default=10, dest="samples_per_face")
    p.add_argument("--feature-seed", type=int, default=0, dest="feature_seed")
    p.set_defaults(func=cmd_hierarchy)

    p = sub.add_parser("coseg", help="segment a target seeded by source part means")
    p.add_argument("source_seg")
    p.add_argument("source_features")
    p.add_argument("target_features")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_coseg)

    p = sub.add_parser("correspond", help="nearest-neighbor feature correspondence")
    p.add_argument("source_features")
    p.add_argument("target_features")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_correspond)

    p = sub.add_parser("proposals", help="proposal utilities")
    psub = p.add_subparsers(dest="proposals_command", required=True)
    pp = psub.add_parser("project", help="back-project one mask into a proposal")
    pp.add_argument("mesh")
    pp.add_argument("--camera", required=True, help="camera JSON")
    pp.add_argument("--mask", required=True, help="PGM or PNG mask")
    pp.add_argument("--out", required=True)
    pp.add_argument("--points", type=int, default=100_000, help="canonical point count")
    pp.add_argument("--seed", type=int, default=0)
    pp.set_defaults(func=cmd_proposals_project)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8421)
    p.add_argument("--data-dir", default=None)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
