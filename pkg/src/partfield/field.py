"""Triplane feature field: storage, bilinear query, adjoint, serialization.

A field is three axis-aligned R x R x C grids plus a learnable log
temperature. Evaluating at a point sums one bilinear sample per plane.
Plane addressing follows the align-corners convention: -1 maps to row 0
and +1 to row R-1, so queries at grid nodes return the stored values
exactly. Query points outside [-1, 1]^3 are clamped to the boundary.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._kernels import gather_bilinear, scatter_bilinear
from .geometry import PointSet, TriMesh

FIELD_MAGIC = b"PFLD"
FEATURES_MAGIC = b"PFTS"
FORMAT_VERSION = 1

TAU_MIN = 0.01
TAU_MAX = 1.0
TAU_INIT = 0.07

# (first, second) point coordinate per plane: XY, XZ, YZ
_PLANE_AXES = ((0, 1), (0, 2), (1, 2))


class FieldFormatError(ValueError):
    """Corrupt or unsupported field/feature file."""


@dataclass
class TriplaneField:
    planes: np.ndarray  # (3, R, R, C) float32
    log_temperature: np.float32

    def __post_init__(self):
        self.planes = np.ascontiguousarray(self.planes, dtype=np.float32)
        if self.planes.ndim != 4 or self.planes.shape[0] != 3 \
                or self.planes.shape[1] != self.planes.shape[2]:
            raise ValueError("planes must have shape (3, R, R, C)")
        self.log_temperature = np.float32(self.log_temperature)
        if not np.isfinite(self.log_temperature):
            raise ValueError("log temperature must be finite")

    @property
    def resolution(self) -> int:
        return self.planes.shape[1]

    @property
    def channels(self) -> int:
        return self.planes.shape[3]

    @property
    def tau(self) -> float:
        return float(np.exp(np.float64(self.log_temperature)))


@dataclass
class FeatureSet:
    """Per-element feature vectors; kind records what the elements are."""

    values: np.ndarray  # (N, n) float32
    kind: str = "point"  # "point" | "face"

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ValueError("features must be a 2D array")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("features contain non-finite values")
        if self.kind not in ("point", "face"):
            raise ValueError(f"unknown element kind {self.kind!r}")

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return len(self.values)


def new_triplane(resolution: int, channels: int, init_scale: float, seed: int) -> TriplaneField:
    """Fresh field with i.i.d. normal parameters and tau = TAU_INIT."""
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    if channels < 1:
        raise ValueError("channels must be >= 1")
    rng = np.random.default_rng(seed)
    planes = rng.standard_normal((3, resolution, resolution, channels)) * init_scale
    return TriplaneField(planes=planes.astype(np.float32),
                         log_temperature=np.float32(np.log(TAU_INIT)))


def _as_points(points) -> np.ndarray:
    if isinstance(points, PointSet):
        return points.points
    return np.asarray(points, dtype=np.float64).reshape(-1, 3)


def _bilinear_corners(points: np.ndarray, resolution: int):
    """Lower corner index and fraction per coordinate axis, clamped."""
    q = np.clip(points, -1.0, 1.0)
    u = (q + 1.0) * 0.5 * (resolution - 1)
    i0 = np.floor(u).astype(np.int64)
    np.clip(i0, 0, resolution - 2, out=i0)
    frac = u - i0
    return i0, frac


def query_raw(field: TriplaneField, points) -> np.ndarray:
    """Field values as float64, shape (N, C). The numerical workhorse."""
    pts = _as_points(points)
    i0, fr = _bilinear_corners(pts, field.resolution)
    out = np.zeros((len(pts), field.channels), dtype=np.float64)
    for p, (ai, aj) in enumerate(_PLANE_AXES):
        gather_bilinear(field.planes[p],
                        np.ascontiguousarray(i0[:, ai]), np.ascontiguousarray(i0[:, aj]),
                        np.ascontiguousarray(fr[:, ai]), np.ascontiguousarray(fr[:, aj]),
                        out)
    return out


def query(field: TriplaneField, points) -> FeatureSet:
    """Evaluate the field; returns point-kind features."""
    return FeatureSet(values=query_raw(field, points), kind="point")


def query_grad(field: TriplaneField, points, upstream: np.ndarray) -> np.ndarray:
    """Adjoint of query: scatter upstream cotangents onto plane parameters.

    Returns float64 gradients of shape (3, R, R, C); gradients accumulate
    over points. The temperature receives no gradient here (it does not
    enter the query).
    """
    pts = _as_points(points)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (len(pts), field.channels):
        raise ValueError("upstream must have shape (n_points, channels)")
    R = field.resolution
    i0, fr = _bilinear_corners(pts, R)
    grads = np.zeros((3, R, R, field.channels), dtype=np.float64)
    for p, (ai, aj) in enumerate(_PLANE_AXES):
        scatter_bilinear(grads[p],
                         np.ascontiguousarray(i0[:, ai]), np.ascontiguousarray(i0[:, aj]),
                         np.ascontiguousarray(fr[:, ai]), np.ascontiguousarray(fr[:, aj]),
                         upstream)
    return grads


def face_sample_points(mesh: TriMesh, samples_per_face: int, seed: int):
    """Barycentric sample points per face, centroid first.

    Random samples come in 3-fold rotation triples so the sample mean of
    every face is exactly its centroid; sample counts therefore round up
    to the next 3t + 1.
    """
    if samples_per_face < 1:
        raise ValueError("samples_per_face must be >= 1")
    triples = (samples_per_face - 1 + 2) // 3
    n_samples = 3 * triples + 1
    rng = np.random.default_rng(seed)
    F = mesh.n_faces
    weights = np.empty((F, n_samples, 3), dtype=np.float64)
    weights[:, 0, :] = 1.0 / 3.0
    if triples:
        r1 = np.sqrt(rng.random((F, triples)))
        r2 = rng.random((F, triples))
        w = np.stack([1.0 - r1, r1 * (1.0 - r2), r1 * r2], axis=-1)  # (F, t, 3)
        weights[:, 1::3, :] = w
        weights[:, 2::3, :] = w[:, :, [1, 2, 0]]
        weights[:, 3::3, :] = w[:, :, [2, 0, 1]]
    tri = mesh.triangles()  # (F, 3, 3)
    pts = np.einsum("fsk,fkj->fsj", weights, tri)
    return pts, n_samples


def face_features(field: TriplaneField, mesh: TriMesh,
                  samples_per_face: int = 10, seed: int = 0) -> FeatureSet:
    """Mean field value over points densely sampled on each face."""
    pts, n_samples = face_sample_points(mesh, samples_per_face, seed)
    flat = pts.reshape(-1, 3)
    C = field.channels
    vals = np.empty((len(flat), C), dtype=np.float64)
    chunk = 200_000
    for s in range(0, len(flat), chunk):
        vals[s:s + chunk] = query_raw(field, flat[s:s + chunk])
    per_face = vals.reshape(mesh.n_faces, n_samples, C).mean(axis=1)
    return FeatureSet(values=per_face, kind="face")


# ---------------------------------------------------------------------------
# serialization


def save_field(field: TriplaneField, path: str | Path) -> None:
    R, C = field.resolution, field.channels
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(struct.pack("<IIIf", FORMAT_VERSION, R, C, float(field.log_temperature)))
        fh.write(field.planes.astype("<f4").tobytes())


def load_field(path: str | Path) -> TriplaneField:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FIELD_MAGIC:
            raise FieldFormatError(f"{path.name}: bad magic {magic!r}, expected {FIELD_MAGIC!r}")
        header = fh.read(16)
        if len(header) != 16:
            raise FieldFormatError(f"{path.name}: truncated header")
        version, R, C, theta = struct.unpack("<IIIf", header)
        if version != FORMAT_VERSION:
            raise FieldFormatError(f"{path.name}: version {version}, expected {FORMAT_VERSION}")
        expected = 3 * R * R * C * 4
        blob = fh.read()
        if len(blob) != expected:
            raise FieldFormatError(
                f"{path.name}: expected {expected} plane bytes, found {len(blob)}"
            )
    planes = np.frombuffer(blob, dtype="<f4").reshape(3, R, R, C)
    return TriplaneField(planes=planes.copy(), log_temperature=np.float32(theta))


def save_features(features: FeatureSet, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(FEATURES_MAGIC)
        fh.write(struct.pack("<II", len(features), features.dim))
        fh.write(features.values.astype("<f4").tobytes())


def load_features(path: str | Path, kind: str = "point") -> FeatureSet:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURES_MAGIC:
            raise FieldFormatError(f"{path.name}: bad magic {magic!r}, expected {FEATURES_MAGIC!r}")
        header = fh.read(8)
        if len(header) != 8:
            raise FieldFormatError(f"{path.name}: truncated header")
        count, dim = struct.unpack("<II", header)
        expected = count * dim * 4
        blob = fh.read()
        if len(blob) != expected:
            raise FieldFormatError(
                f"{path.name}: expected {expected} data bytes, found {len(blob)}"
            )
    values = np.frombuffer(blob, dtype="<f4").reshape(count, dim)
    return FeatureSet(values=values.copy(), kind=kind)


def ingest_external_features(path: str | Path, kind: str,
                             expected_count: int | None = None) -> FeatureSet:
    """Load features computed elsewhere, checking the element count."""
    fs = load_features(path, kind=kind)
    if expected_count is not None and len(fs) != expected_count:
        raise FieldFormatError(
            f"feature count {len(fs)} does not match the target's {expected_count} elements"
        )
    return fs


def field_to_json(field: TriplaneField) -> dict:
    return {
        "resolution": field.resolution,
        "channels": field.channels,
        "log_temperature": float(field.log_temperature),
        "planes": field.planes.tolist(),
    }


def field_from_json(d: dict) -> TriplaneField:
    return TriplaneField(planes=np.array(d["planes"], dtype=np.float32),
                         log_temperature=np.float32(d["log_temperature"]))


def features_to_json(fs: FeatureSet) -> dict:
    return {"kind": fs.kind, "dim": fs.dim, "values": fs.values.tolist()}


def features_from_json(d: dict) -> FeatureSet:
    return FeatureSet(values=np.array(d["values"], dtype=np.float32), kind=d["kind"])


def dump_json(obj: dict, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh)
