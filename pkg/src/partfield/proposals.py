"""Part proposals: subsets of a shape asserted to belong to one part.

Proposals come from 3D label files (one proposal per label per hierarchy
level, negatives drawn from the whole shape) or from 2D masks projected
through a camera (negatives drawn only from the view's visible surface).
All proposals index one canonical per-shape point set so 2D and 3D
supervision share an element id space.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Camera, DepthIdImage, PointSet, TriMesh, render_depth_ids, unproject

MIN_MASK_PROPOSAL_SIZE = 20  # smaller mask proposals are noise, dropped
MIN_VISIBLE_PIXELS = 50


class ProposalError(ValueError):
    pass


@dataclass
class PartProposal:
    shape_id: str
    members: np.ndarray  # sorted unique element ids
    source: dict
    n_elements: int  # size of the canonical element set the ids index
    visible: np.ndarray | None = None  # mask2d only: the view's matched elements
    degenerate: bool = False  # empty complement, unusable for triplets

    def __post_init__(self):
        self.members = np.unique(np.asarray(self.members, dtype=np.int64))
        if len(self.members) == 0:
            raise ProposalError("proposal has no members")
        if self.members[-1] >= self.n_elements:
            raise ProposalError("member id outside the canonical element set")
        if self.visible is not None:
            self.visible = np.unique(np.asarray(self.visible, dtype=np.int64))

    def negative_domain(self) -> np.ndarray:
        """Complement of the members inside the proposal's supervision domain."""
        if self.visible is not None:
            domain = self.visible
        else:
            domain = np.arange(self.n_elements, dtype=np.int64)
        return np.setdiff1d(domain, self.members, assume_unique=True)


@dataclass
class LabelLevel:
    name: str
    labels: np.ndarray  # dense int ids, one per element (or per face pre-mapping)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if len(self.labels) == 0:
            raise ProposalError(f"level {self.name!r} is empty")
        if self.labels.min() < 0:
            raise ProposalError(f"level {self.name!r} has negative (missing) labels")


@dataclass
class LabelSet:
    levels: list[LabelLevel] = field(default_factory=list)

    @classmethod
    def from_json(cls, d: dict) -> "LabelSet":
        levels = [LabelLevel(name=l.get("name", f"level{i}"), labels=l["labels"])
                  for i, l in enumerate(d["levels"])]
        if not levels:
            raise ProposalError("label file has no levels")
        return cls(levels=levels)

    def to_json(self) -> dict:
        return {"levels": [{"name": l.name, "labels": l.labels.tolist()} for l in self.levels]}


def face_labels_to_elements(face_labels: np.ndarray, elements: PointSet) -> np.ndarray:
    """Map per-face labels onto canonical points via their source faces."""
    if elements.source_face is None:
        raise ProposalError("canonical point set lacks source faces")
    face_labels = np.asarray(face_labels, dtype=np.int64)
    return face_labels[elements.source_face]


def ingest_labels(label_set: LabelSet, n_elements: int, shape_id: str = "shape") -> list[PartProposal]:
    """One proposal per (level, label id); negatives span the whole shape."""
    proposals = []
    for level in label_set.levels:
        if len(level.labels) != n_elements:
            raise ProposalError(
                f"level {level.name!r} labels {len(level.labels)} elements, expected {n_elements}"
            )
        ids = np.unique(level.labels)
        for lab in ids:
            members = np.nonzero(level.labels == lab)[0]
            proposals.append(PartProposal(
                shape_id=shape_id,
                members=members,
                source={"kind": "label3d", "level": level.name, "label": int(lab)},
                n_elements=n_elements,
                degenerate=len(ids) == 1,
            ))
    return proposals


# ---------------------------------------------------------------------------
# 2D masks


def matching_radius(elements: PointSet) -> float:
    """Twice the median nearest-neighbor spacing of the canonical set."""
    tree = cKDTree(elements.points)
    d, _ = tree.query(elements.points, k=2)
    return 2.0 * float(np.median(d[:, 1]))


def _match_view(view: DepthIdImage, camera: Camera, elements: PointSet,
                radius: float | None):
    """Nearest hit-pixel unprojection per element.

    Returns (visible element mask, pixel row, pixel col) where visibility
    means the nearest unprojected pixel point lies within the radius.
    """
    lifted = unproject(view, camera)
    if len(lifted) == 0:
        return np.zeros(len(elements), dtype=bool), None, None
    if radius is None:
        radius = matching_radius(elements)
    tree = cKDTree(lifted.points)
    dist, idx = tree.query(elements.points, k=1)
    visible = dist <= radius
    rows = lifted.source_pixel[idx, 1]
    cols = lifted.source_pixel[idx, 2]
    return visible, rows, cols


def project_mask(mask: np.ndarray, view: DepthIdImage, camera: Camera,
                 elements: PointSet, radius: float | None = None,
                 shape_id: str = "shape", source: dict | None = None) -> PartProposal:
    """Back-project a binary mask into a proposal over canonical elements.

    A mask supervises only the surface visible in its view: the negative
    domain is the matched visible set, not the whole shape.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != view.hit.shape:
        raise ProposalError(f"mask shape {mask.shape} != view shape {view.hit.shape}")
    if not np.any(mask & view.hit):
        raise ProposalError("mask covers no hit pixels")
    visible, rows, cols = _match_view(view, camera, elements, radius)
    if rows is None or not visible.any():
        raise ProposalError("no canonical elements visible in this view")
    member_mask = visible & mask[rows, cols]
    if not member_mask.any():
        raise ProposalError("mask matched no canonical elements")
    src = source or {"kind": "mask2d", "view": 0}
    return PartProposal(
        shape_id=shape_id,
        members=np.nonzero(member_mask)[0],
        source=src,
        n_elements=len(elements),
        visible=np.nonzero(visible)[0],
    )


def synth_mask_proposals(mesh: TriMesh, face_labels: np.ndarray, cameras: list[Camera],
                         elements: PointSet, shape_id: str = "shape",
                         min_pixels: int = MIN_VISIBLE_PIXELS,
                         min_members: int = MIN_MASK_PROPOSAL_SIZE) -> list[PartProposal]:
    """Render label ids per pixel and emit one mask proposal per visible label.

    Stands in for an image segmentation model when testing the 2D
    supervision path; masks are exact label silhouettes per view.
    """
    face_labels = np.asarray(face_labels, dtype=np.int64)
    if len(face_labels) != mesh.n_faces:
        raise ProposalError("face labels must cover every face")
    radius = matching_radius(elements)
    proposals = []
    for vi, cam in enumerate(cameras):
        view = render_depth_ids(mesh, cam)
        if not view.hit.any():
            continue
        visible, rows, cols = _match_view(view, cam, elements, radius)
        pixel_labels = np.where(view.hit, face_labels[view.face], -1)
        for lab in np.unique(pixel_labels[view.hit]):
            mask = pixel_labels == lab
            if int(mask.sum()) < min_pixels:
                continue
            member_mask = visible & mask[rows, cols]
            if int(member_mask.sum()) < min_members:
                continue
            proposals.append(PartProposal(
                shape_id=shape_id,
                members=np.nonzero(member_mask)[0],
                source={"kind": "mask2d", "view": vi, "label": int(lab)},
                n_elements=len(elements),
                visible=np.nonzero(visible)[0],
            ))
    return proposals


# ---------------------------------------------------------------------------
# mask files


def read_mask(path: str | Path) -> np.ndarray:
    """Binary mask from a P5 PGM or a PNG; nonzero means masked."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"P5":
        return _read_pgm(path) > 0
    from PIL import Image

    img = np.asarray(Image.open(path).convert("L"))
    return img > 0


def _read_pgm(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    # header: magic, width, height, maxval as whitespace-separated tokens,
    # with '#' comments allowed
    tokens = []
    pos = 2  # past P5
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ProposalError(f"{path.name}: malformed PGM header") from exc
    if maxval > 255:
        raise ProposalError(f"{path.name}: 16-bit PGM not supported")
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    if pixels.size != width * height:
        raise ProposalError(f"{path.name}: truncated PGM data")
    return pixels.reshape(height, width)


def write_mask_pgm(mask: np.ndarray, path: str | Path) -> None:
    mask = np.asarray(mask)
    h, w = mask.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write((mask.astype(np.uint8) * 255).tobytes())
