"""Shape ingestion, normalization, sampling, adjacency, and ray casting.

Everything downstream (proposals, field fitting, clustering) consumes the
types defined here. Shapes live in a normalized [-1, 1]^3 space; all
operations are pure functions of their inputs plus an explicit seed.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

RAY_EPS = 1e-6  # minimum hit distance, guards against self-intersection


class ParseError(ValueError):
    """Malformed input file; message carries the offending line or element."""


class GeometryError(ValueError):
    """Degenerate or unusable geometry (empty mesh, zero extent, open shell)."""


@dataclass
class TriMesh:
    """Indexed triangle mesh with an edge-based face adjacency graph.

    Faces sharing an edge (two common vertices) are adjacent; non-manifold
    edges connect every incident face.
    """

    vertices: np.ndarray  # (V, 3) float64
    faces: np.ndarray  # (F, 3) int32
    face_adjacency: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int32).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise GeometryError("face index out of range")
        if not self.face_adjacency:
            self.face_adjacency = build_face_adjacency(self.faces)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def triangles(self) -> np.ndarray:
        """Vertex positions per face, shape (F, 3, 3)."""
        return self.vertices[self.faces]

    def face_areas(self) -> np.ndarray:
        tri = self.triangles()
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def face_centroids(self) -> np.ndarray:
        return self.triangles().mean(axis=1)


@dataclass
class PointSet:
    """Points in 3D, optionally with normals and provenance.

    ``source_face`` ties each point to the mesh face it was sampled from;
    ``source_pixel`` records (view id, row, col) for unprojected pixels.
    """

    points: np.ndarray  # (N, 3) float64
    normals: np.ndarray | None = None
    source_face: np.ndarray | None = None
    source_pixel: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            bad = int(np.argwhere(~np.isfinite(self.points).all(axis=1))[0][0])
            raise GeometryError(f"non-finite coordinate at point {bad}")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if self.source_face is not None:
            self.source_face = np.asarray(self.source_face, dtype=np.int32).ravel()
        if self.source_pixel is not None:
            self.source_pixel = np.asarray(self.source_pixel, dtype=np.int32).reshape(-1, 3)

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class NormalizationTransform:
    """Uniform scale + translation mapping a source box into [-1, 1]^3."""

    center: np.ndarray  # (3,)
    scale: float  # > 0

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        if not self.scale > 0:
            raise GeometryError("normalization scale must be positive")

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.center) * self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) / self.scale + self.center


@dataclass
class Camera:
    """Pinhole camera: position, look-at target, up hint, vertical fov (radians)."""

    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray
    fov_y: float
    resolution: tuple[int, int]  # (rows, cols)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.look_at = np.asarray(self.look_at, dtype=np.float64).reshape(3)
        self.up = np.asarray(self.up, dtype=np.float64).reshape(3)
        self.resolution = (int(self.resolution[0]), int(self.resolution[1]))
        if not 0.0 < self.fov_y < math.pi:
            raise GeometryError("fov must lie in (0, pi)")
        fwd = self.look_at - self.position
        n = np.linalg.norm(fwd)
        if n < 1e-12:
            raise GeometryError("camera position equals look-at target")
        if np.linalg.norm(np.cross(fwd / n, self.up)) < 1e-9:
            raise GeometryError("view direction parallel to up vector")

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Orthonormal (forward, right, up) frame."""
        fwd = self.look_at - self.position
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, self.up)
        right = right / np.linalg.norm(right)
        up = np.cross(right, fwd)
        return fwd, right, up

    def to_json(self) -> dict:
        return {
            "position": self.position.tolist(),
            "look_at": self.look_at.tolist(),
            "up": self.up.tolist(),
            "fov_y": self.fov_y,
            "resolution": list(self.resolution),
        }

    @classmethod
    def from_json(cls, d: dict) -> "Camera":
        return cls(
            position=d["position"],
            look_at=d["look_at"],
            up=d["up"],
            fov_y=float(d["fov_y"]),
            resolution=tuple(d["resolution"]),
        )


@dataclass
class DepthIdImage:
    """Per-pixel primary-ray hits: flag, depth along the ray, face, barycentrics."""

    hit: np.ndarray  # (H, W) bool
    depth: np.ndarray  # (H, W) float64
    face: np.ndarray  # (H, W) int32, -1 where missed
    bary: np.ndarray  # (H, W, 3) float64

    @property
    def resolution(self) -> tuple[int, int]:
        return self.hit.shape


def build_face_adjacency(faces: np.ndarray) -> list[np.ndarray]:
    """Edge-based adjacency: faces sharing two vertices of an edge."""
    edge_map: dict[tuple[int, int], list[int]] = {}
    for fi, (a, b, c) in enumerate(np.asarray(faces, dtype=np.int64)):
        for u, v in ((a, b), (b, c), (c, a)):
            key = (u, v) if u < v else (v, u)
            edge_map.setdefault(key, []).append(fi)
    adj: list[set[int]] = [set() for _ in range(len(faces))]
    for incident in edge_map.values():
        if len(incident) < 2:
            continue
        for fi in incident:
            adj[fi].update(fj for fj in incident if fj != fi)
    return [np.array(sorted(s), dtype=np.int32) for s in adj]


# ---------------------------------------------------------------------------
# file loading


def load_mesh(path: str | Path) -> TriMesh:
    """Load a Wavefront OBJ. Polygons are fan-triangulated from vertex 0."""
    path = Path(path)
    vertices: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    with open(path, "r", errors="replace") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                try:
                    vertices.append((float(parts[1]), float(parts[2]), float(parts[3])))
                except (IndexError, ValueError) as exc:
                    raise ParseError(f"{path.name}:{lineno}: bad vertex record") from exc
            elif tag == "f":
                try:
                    idx = [_obj_index(tok, len(vertices), lineno, path.name) for tok in parts[1:]]
                except ValueError as exc:
                    raise ParseError(f"{path.name}:{lineno}: bad face record") from exc
                if len(idx) < 3:
                    raise ParseError(f"{path.name}:{lineno}: face with fewer than 3 vertices")
                for k in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[k], idx[k + 1]))
            # all other records (vn, vt, usemtl, ...) are ignored
    if not faces:
        raise GeometryError(f"{path.name}: no faces found")
    return TriMesh(np.array(vertices), np.array(faces))


def _obj_index(token: str, n_vertices: int, lineno: int, name: str) -> int:
    ref = token.split("/")[0]
    i = int(ref)
    if i < 0:
        i = n_vertices + i
    else:
        i = i - 1
    if not 0 <= i < n_vertices:
        raise ParseError(f"{name}:{lineno}: vertex index {token} out of range")
    return i


def save_mesh_obj(mesh: TriMesh, path: str | Path) -> None:
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def load_point_set(path: str | Path) -> PointSet:
    """Load PLY (ascii / binary little-endian) or whitespace XYZ text."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head[:3] == b"ply":
        return _load_ply(path)
    return _load_xyz(path)


_PLY_TYPES = {
    "float": ("f", 4), "float32": ("f", 4),
    "double": ("d", 8), "float64": ("d", 8),
    "char": ("b", 1), "int8": ("b", 1),
    "uchar": ("B", 1), "uint8": ("B", 1),
    "short": ("h", 2), "int16": ("h", 2),
    "ushort": ("H", 2), "uint16": ("H", 2),
    "int": ("i", 4), "int32": ("i", 4),
    "uint": ("I", 4), "uint32": ("I", 4),
}


def _load_ply(path: Path) -> PointSet:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"ply":
            raise ParseError(f"{path.name}: not a PLY file")
        fmt = None
        elements: list[tuple[str, int, list[tuple[str, str]]]] = []
        while True:
            raw = fh.readline()
            if not raw:
                raise ParseError(f"{path.name}: header ended before end_header")
            tokens = raw.decode("ascii", errors="replace").split()
            if not tokens or tokens[0] == "comment":
                continue
            if tokens[0] == "format":
                fmt = tokens[1]
                if fmt not in ("ascii", "binary_little_endian"):
                    raise ParseError(f"{path.name}: unsupported format {fmt}")
            elif tokens[0] == "element":
                elements.append((tokens[1], int(tokens[2]), []))
            elif tokens[0] == "property":
                if not elements:
                    raise ParseError(f"{path.name}: property before any element")
                if tokens[1] == "list":
                    elements[-1][2].append(("list", tokens[-1]))
                else:
                    elements[-1][2].append((tokens[1], tokens[2]))
            elif tokens[0] == "end_header":
                break
        if fmt is None:
            raise ParseError(f"{path.name}: missing format line")
        vert_spec = next((e for e in elements if e[0] == "vertex"), None)
        if vert_spec is None:
            raise ParseError(f"{path.name}: no vertex element")
        _, count, props = vert_spec
        names = [p[1] if p[0] != "list" else None for p in props]
        for needed in ("x", "y", "z"):
            if needed not in names:
                raise ParseError(f"{path.name}: vertex element lacks property {needed}")
        has_normals = all(n in names for n in ("nx", "ny", "nz"))
        if elements[0][0] != "vertex":
            raise ParseError(f"{path.name}: vertex must be the first element")

        if fmt == "ascii":
            rows = []
            for i in range(count):
                line = fh.readline().decode("ascii", errors="replace").split()
                if len(line) < len(props):
                    raise ParseError(f"{path.name}: vertex {i}: truncated row")
                rows.append([float(t) for t in line[: len(props)]])
            data = {n: np.array([r[j] for r in rows]) for j, n in enumerate(names) if n}
        else:
            if any(p[0] == "list" for p in props):
                raise ParseError(f"{path.name}: list property inside vertex element")
            fmt_str = "<" + "".join(_PLY_TYPES[p[0]][0] for p in props)
            stride = struct.calcsize(fmt_str)
            blob = fh.read(stride * count)
            if len(blob) != stride * count:
                raise ParseError(f"{path.name}: vertex data truncated")
            unpacked = np.array(list(struct.iter_unpack(fmt_str, blob)), dtype=np.float64)
            data = {n: unpacked[:, j] for j, n in enumerate(names) if n}

    pts = np.stack([data["x"], data["y"], data["z"]], axis=1)
    if not np.all(np.isfinite(pts)):
        bad = int(np.argwhere(~np.isfinite(pts).all(axis=1))[0][0])
        raise ParseError(f"{path.name}: non-finite coordinate at vertex {bad}")
    normals = None
    if has_normals:
        normals = np.stack([data["nx"], data["ny"], data["nz"]], axis=1)
    return PointSet(points=pts, normals=normals)


def _load_xyz(path: Path) -> PointSet:
    pts = []
    normals = []
    with open(path, "r", errors="replace") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            if len(tokens) not in (3, 6):
                raise ParseError(f"{path.name}:{lineno}: expected 3 or 6 columns")
            try:
                vals = [float(t) for t in tokens]
            except ValueError as exc:
                raise ParseError(f"{path.name}:{lineno}: non-numeric value") from exc
            pts.append(vals[:3])
            if len(vals) == 6:
                normals.append(vals[3:])
    if not pts:
        raise ParseError(f"{path.name}: no points")
    normals_arr = np.array(normals) if len(normals) == len(pts) else None
    return PointSet(points=np.array(pts), normals=normals_arr)


def save_point_set_ply(ps: PointSet, path: str | Path) -> None:
    """Write an ascii PLY (x,y,z[,nx,ny,nz])."""
    with_normals = ps.normals is not None
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(ps)}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        if with_normals:
            fh.write("property float nx\nproperty float ny\nproperty float nz\n")
        fh.write("end_header\n")
        for i in range(len(ps)):
            row = list(ps.points[i])
            if with_normals:
                row += list(ps.normals[i])
            fh.write(" ".join(f"{v:.9g}" for v in row) + "\n")


# ---------------------------------------------------------------------------
# normalization and sampling


def normalize_unit_cube(shape):
    """Center a mesh or point set and scale it uniformly into [-1, 1]^3.

    The longest bounding-box axis spans exactly [-1, 1]; aspect ratio is
    preserved. Returns (normalized shape, transform).
    """
    pts = shape.vertices if isinstance(shape, TriMesh) else shape.points
    if len(pts) == 0:
        raise GeometryError("empty shape")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0:
        raise GeometryError("degenerate shape with zero extent")
    t = NormalizationTransform(center=(lo + hi) / 2.0, scale=2.0 / extent)
    if isinstance(shape, TriMesh):
        out = TriMesh(t.apply(shape.vertices), shape.faces.copy(),
                      face_adjacency=shape.face_adjacency)
    else:
        out = PointSet(points=t.apply(shape.points), normals=shape.normals,
                       source_face=shape.source_face, source_pixel=shape.source_pixel)
    return out, t


def sample_surface(mesh: TriMesh, n: int, seed: int) -> PointSet:
    """Area-weighted uniform surface samples with source faces recorded."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if mesh.n_faces == 0:
        raise GeometryError("empty mesh")
    rng = np.random.default_rng(seed)
    areas = mesh.face_areas()
    total = areas.sum()
    if total <= 0:
        raise GeometryError("mesh has zero total area")
    face_idx = rng.choice(mesh.n_faces, size=n, p=areas / total)
    # uniform barycentric via the sqrt trick
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    w0 = 1.0 - r1
    w1 = r1 * (1.0 - r2)
    w2 = r1 * r2
    tri = mesh.triangles()[face_idx]
    pts = w0[:, None] * tri[:, 0] + w1[:, None] * tri[:, 1] + w2[:, None] * tri[:, 2]
    return PointSet(points=pts, source_face=face_idx.astype(np.int32))


def sample_interior(mesh: TriMesh, n: int, seed: int, max_trials: int | None = None) -> PointSet:
    """Rejection-sample points strictly inside a watertight mesh.

    Candidates are drawn in the bounding box and kept when an axis ray
    crosses the surface an odd number of times. Grazing hits retry the
    candidate with a jittered ray direction. A rejection rate above 99.9%
    (after a warm-up volume of trials) reports the mesh as non-watertight
    or too thin to sample.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    if max_trials is None:
        max_trials = max(200_000, 2000 * n)
    accepted = []
    trials = 0
    batch = max(1024, min(16384, 4 * n))
    while sum(len(a) for a in accepted) < n:
        if trials >= max_trials:
            break
        cand = lo + rng.random((batch, 3)) * (hi - lo)
        trials += batch
        inside = points_inside(mesh, cand, rng)
        kept = cand[inside]
        if len(kept):
            accepted.append(kept)
        got = sum(len(a) for a in accepted)
        # 99.9% rejection after a meaningful number of trials means the
        # parity test is not converging on this geometry
        if trials >= 50_000 and got < trials * 0.001:
            raise GeometryError(
                f"interior sampling rejected {trials - got}/{trials} candidates; "
                "mesh is likely non-watertight or too thin"
            )
    got = sum(len(a) for a in accepted)
    if got < n:
        raise GeometryError(
            f"interior sampling produced {got}/{n} points in {trials} trials; "
            "mesh is likely non-watertight or too thin"
        )
    pts = np.concatenate(accepted, axis=0)[:n]
    return PointSet(points=pts)


def points_inside(mesh: TriMesh, points: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Ray-crossing parity test, vectorized over points.

    Uses a +x ray; points whose ray grazes an edge or vertex are retried
    with random directions until the parity is unambiguous.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    result = np.zeros(len(points), dtype=bool)
    pending = np.arange(len(points))
    direction = np.array([1.0, 0.0, 0.0])
    for _ in range(16):
        if len(pending) == 0:
            break
        crossings, degenerate = _ray_crossings(mesh, points[pending], direction)
        ok = ~degenerate
        result[pending[ok]] = (crossings[ok] % 2) == 1
        pending = pending[degenerate]
        d = rng.normal(size=3)
        direction = d / np.linalg.norm(d)
    # leftover degenerate points count as outside; measure zero in practice
    return result


def _ray_crossings(mesh: TriMesh, origins: np.ndarray, direction: np.ndarray):
    """Count ray-triangle crossings per origin for one shared direction."""
    tri = mesh.triangles()
    v0 = tri[:, 0]
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    d = np.asarray(direction, dtype=np.float64)
    n_pts = len(origins)
    counts = np.zeros(n_pts, dtype=np.int64)
    degenerate = np.zeros(n_pts, dtype=bool)
    # chunk over origins to bound the (chunk x F) temporaries
    chunk = max(1, int(4_000_000 // max(len(tri), 1)))
    pvec = np.cross(d, e2)  # (F, 3)
    det = np.einsum("fj,fj->f", e1, pvec)
    valid_tri = np.abs(det) > 1e-14
    inv_det = np.where(valid_tri, 1.0 / np.where(valid_tri, det, 1.0), 0.0)
    for s in range(0, n_pts, chunk):
        o = origins[s:s + chunk]  # (B, 3)
        tvec = o[:, None, :] - v0[None, :, :]  # (B, F, 3)
        u = np.einsum("bfj,fj->bf", tvec, pvec) * inv_det[None, :]
        qvec = np.cross(tvec, e1[None, :, :])
        v = np.einsum("bfj,j->bf", qvec, d) * inv_det[None, :]
        t = np.einsum("bfj,fj->bf", qvec, e2) * inv_det[None, :]
        w = 1.0 - u - v
        hit = valid_tri[None, :] & (u >= 0) & (v >= 0) & (w >= 0) & (t > RAY_EPS)
        counts[s:s + chunk] = hit.sum(axis=1)
        graze_tol = 1e-9
        graze = hit & ((u < graze_tol) | (v < graze_tol) | (w < graze_tol)
                       | (t < 10 * RAY_EPS))
        degenerate[s:s + chunk] = graze.any(axis=1)
    return counts, degenerate


# ---------------------------------------------------------------------------
# BVH ray casting


@dataclass
class BVH:
    """Median-split bounding volume hierarchy over mesh triangles."""

    bounds_min: np.ndarray  # (M, 3)
    bounds_max: np.ndarray  # (M, 3)
    left: np.ndarray  # (M,) child index, -1 for leaves
    right: np.ndarray
    start: np.ndarray  # (M,) slice into tri_order for leaves
    count: np.ndarray
    tri_order: np.ndarray  # (F,) face ids in leaf order
    v0: np.ndarray  # triangle data in leaf order
    e1: np.ndarray
    e2: np.ndarray


@dataclass
class RayHit:
    face: int
    depth: float
    bary: np.ndarray  # (3,)


_LEAF_SIZE = 4


def build_bvh(mesh: TriMesh) -> BVH:
    if mesh.n_faces == 0:
        raise GeometryError("cannot build BVH over empty mesh")
    tri = mesh.triangles()
    tri_min = tri.min(axis=1)
    tri_max = tri.max(axis=1)
    centroids = tri.mean(axis=1)

    bounds_min, bounds_max = [], []
    left, right, start, count = [], [], [], []
    order: list[np.ndarray] = []

    def emit(idx: np.ndarray) -> int:
        node = len(bounds_min)
        bounds_min.append(tri_min[idx].min(axis=0))
        bounds_max.append(tri_max[idx].max(axis=0))
        left.append(-1)
        right.append(-1)
        start.append(-1)
        count.append(0)
        if len(idx) <= _LEAF_SIZE:
            start[node] = sum(len(o) for o in order)
            count[node] = len(idx)
            order.append(idx)
            return node
        extent = tri_max[idx].max(axis=0) - tri_min[idx].min(axis=0)
        axis = int(np.argmax(extent))
        mid = len(idx) // 2
        part = idx[np.argsort(centroids[idx, axis], kind="stable")]
        left[node] = emit(part[:mid])
        right[node] = emit(part[mid:])
        return node

    import sys
    old_limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old_limit, 10000 + 64 * int(np.log2(mesh.n_faces + 2))))
    try:
        emit(np.arange(mesh.n_faces))
    finally:
        sys.setrecursionlimit(old_limit)

    tri_order = np.concatenate(order)
    t = tri[tri_order]
    return BVH(
        bounds_min=np.array(bounds_min),
        bounds_max=np.array(bounds_max),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        start=np.array(start, dtype=np.int64),
        count=np.array(count, dtype=np.int32),
        tri_order=tri_order.astype(np.int32),
        v0=t[:, 0].copy(),
        e1=(t[:, 1] - t[:, 0]).copy(),
        e2=(t[:, 2] - t[:, 0]).copy(),
    )


def ray_cast(bvh: BVH, origin, direction) -> RayHit | None:
    """Nearest intersection with depth > RAY_EPS, or None on a miss."""
    origin = np.asarray(origin, dtype=np.float64).reshape(1, 3)
    direction = np.asarray(direction, dtype=np.float64).reshape(1, 3)
    if np.linalg.norm(direction) < 1e-15:
        raise ValueError("ray direction must be nonzero")
    face, depth, bary = ray_cast_batch(bvh, origin, direction)
    if face[0] < 0:
        return None
    return RayHit(face=int(face[0]), depth=float(depth[0]), bary=bary[0])


def ray_cast_batch(bvh: BVH, origins: np.ndarray, directions: np.ndarray):
    """Cast many rays at once; rays descend the tree together.

    Ties at equal depth resolve to the lower face id, matching the
    brute-force reference exactly.
    """
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    n = len(origins)
    best_t = np.full(n, np.inf)
    best_face = np.full(n, -1, dtype=np.int32)
    best_bary = np.zeros((n, 3))
    with np.errstate(divide="ignore"):
        inv_dir = np.where(directions != 0.0, 1.0 / directions, np.inf)

    stack: list[tuple[int, np.ndarray]] = [(0, np.arange(n))]
    while stack:
        node, idx = stack.pop()
        if len(idx) == 0:
            continue
        t0 = (bvh.bounds_min[node] - origins[idx]) * inv_dir[idx]
        t1 = (bvh.bounds_max[node] - origins[idx]) * inv_dir[idx]
        tmin = np.minimum(t0, t1).max(axis=1)
        tmax = np.maximum(t0, t1).min(axis=1)
        alive = (tmax >= np.maximum(tmin, RAY_EPS)) & (tmin <= best_t[idx])
        idx = idx[alive]
        if len(idx) == 0:
            continue
        if bvh.count[node] > 0:
            s = bvh.start[node]
            for k in range(bvh.count[node]):
                fid = int(bvh.tri_order[s + k])
                t, u, v, ok = _moller_trumbore(
                    origins[idx], directions[idx], bvh.v0[s + k], bvh.e1[s + k], bvh.e2[s + k]
                )
                better = ok & ((t < best_t[idx]) | ((t == best_t[idx]) & (fid < best_face[idx])))
                upd = idx[better]
                best_t[upd] = t[better]
                best_face[upd] = fid
                best_bary[upd, 0] = 1.0 - u[better] - v[better]
                best_bary[upd, 1] = u[better]
                best_bary[upd, 2] = v[better]
        else:
            stack.append((int(bvh.left[node]), idx))
            stack.append((int(bvh.right[node]), idx))
    return best_face, best_t, best_bary


def _moller_trumbore(origins, directions, v0, e1, e2):
    pvec = np.cross(directions, e2[None, :])
    det = pvec @ e1
    ok = np.abs(det) > 1e-14
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = origins - v0[None, :]
    u = np.einsum("ij,ij->i", tvec, pvec) * inv
    qvec = np.cross(tvec, e1[None, :])
    v = np.einsum("ij,ij->i", qvec, directions) * inv
    t = (qvec @ e2) * inv
    ok &= (u >= -1e-12) & (v >= -1e-12) & (u + v <= 1.0 + 1e-12) & (t > RAY_EPS)
    return t, u, v, ok


def ray_cast_brute(mesh: TriMesh, origins: np.ndarray, directions: np.ndarray):
    """All-triangle nearest intersection; the reference for BVH casting."""
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    n = len(origins)
    tri = mesh.triangles()
    best_t = np.full(n, np.inf)
    best_face = np.full(n, -1, dtype=np.int32)
    best_bary = np.zeros((n, 3))
    for fid in range(mesh.n_faces):
        v0 = tri[fid, 0]
        e1 = tri[fid, 1] - v0
        e2 = tri[fid, 2] - v0
        t, u, v, ok = _moller_trumbore(origins, directions, v0, e1, e2)
        better = ok & ((t < best_t) | ((t == best_t) & (fid < best_face)))
        best_t[better] = t[better]
        best_face[better] = fid
        best_bary[better, 0] = 1.0 - u[better] - v[better]
        best_bary[better, 1] = u[better]
        best_bary[better, 2] = v[better]
    return best_face, best_t, best_bary


# ---------------------------------------------------------------------------
# rendering


def camera_rays(camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Primary rays through pixel centers; returns (origins, directions)."""
    rows, cols = camera.resolution
    fwd, right, up = camera.basis()
    tan_half = math.tan(camera.fov_y / 2.0)
    aspect = cols / rows
    c = (np.arange(cols) + 0.5) / cols * 2.0 - 1.0
    r = 1.0 - (np.arange(rows) + 0.5) / rows * 2.0
    gx, gy = np.meshgrid(c, r)  # (rows, cols)
    dirs = (
        fwd[None, None, :]
        + gx[:, :, None] * (tan_half * aspect) * right[None, None, :]
        + gy[:, :, None] * tan_half * up[None, None, :]
    )
    dirs = dirs / np.linalg.norm(dirs, axis=2, keepdims=True)
    origins = np.broadcast_to(camera.position, dirs.shape).copy()
    return origins.reshape(-1, 3), dirs.reshape(-1, 3)


def render_depth_ids(mesh: TriMesh, camera: Camera, bvh: BVH | None = None) -> DepthIdImage:
    """Cast one primary ray per pixel center and record hits."""
    rows, cols = camera.resolution
    if bvh is None:
        bvh = build_bvh(mesh)
    origins, dirs = camera_rays(camera)
    face, depth, bary = ray_cast_batch(bvh, origins, dirs)
    hit = face >= 0
    return DepthIdImage(
        hit=hit.reshape(rows, cols),
        depth=np.where(hit, depth, 0.0).reshape(rows, cols),
        face=face.reshape(rows, cols),
        bary=bary.reshape(rows, cols, 3),
    )


def unproject(view: DepthIdImage, camera: Camera) -> PointSet:
    """Lift every hit pixel back to 3D via its recorded depth."""
    rows, cols = camera.resolution
    origins, dirs = camera_rays(camera)
    flat_hit = view.hit.ravel()
    pts = origins[flat_hit] + view.depth.ravel()[flat_hit, None] * dirs[flat_hit]
    rr, cc = np.nonzero(view.hit)
    pixels = np.stack([np.zeros(len(rr), dtype=np.int32), rr, cc], axis=1)
    return PointSet(points=pts, source_face=view.face[view.hit], source_pixel=pixels)


def default_camera_rig(
    n_views: int = 6,
    distance: float = 2.8,
    resolution: tuple[int, int] = (256, 256),
    fov_y: float = math.radians(50.0),
    target=(0.0, 0.0, 0.0),
) -> list[Camera]:
    """Ring of cameras at alternating elevations looking at the origin.

    A reasonable default for shapes normalized to [-1, 1]^3; callers with
    known-good poses should supply their own cameras.
    """
    target = np.asarray(target, dtype=np.float64)
    cams = []
    for i in range(n_views):
        az = 2.0 * math.pi * i / n_views
        el = math.radians(26.57) * (1 if i % 2 == 0 else -1)
        pos = target + distance * np.array(
            [math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)]
        )
        cams.append(Camera(position=pos, look_at=target, up=(0.0, 0.0, 1.0),
                           fov_y=fov_y, resolution=resolution))
    return cams
