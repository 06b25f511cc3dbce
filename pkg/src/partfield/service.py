"""HTTP service exposing shape sessions to scripts and the browser viewer.

Sessions are in-memory (optionally persisted to a data directory). Reads
are served from the session's current field; fitting runs on a single
FIFO worker thread and swaps the finished field in atomically, so
queries against a shape being refit keep seeing the last completed one.

Endpoints (all under /v1, JSON unless noted):
  POST   /shapes                      multipart OBJ upload -> {shape_id}
  GET    /shapes                      session list
  POST   /shapes/{id}/features        PFLD or PFTS bytes -> 204
  POST   /shapes/{id}/fit             {config?, labels} -> {job_id}
  GET    /jobs/{job_id}               {status, loss, error?}
  GET    /shapes/{id}/mesh            binary: PMSH header, f32 xyz, u32 faces
  GET    /shapes/{id}/similarity?face=F
  GET    /shapes/{id}/segment?k=K
  GET    /shapes/{id}/hierarchy
  GET    /shapes/{id}/annotations
  POST   /shapes/{id}/annotations     {face, class} -> 204
  DELETE /shapes/{id}/annotations[/{face}] -> 204
  GET    /shapes/{id}/coseg           regression over all annotations

Errors are {code, message} with 404 (unknown id), 409 (no features yet),
or 422 (invalid body/params).
"""

from __future__ import annotations

import io
import os
import queue
import struct
import threading
import uuid
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response

from . import analysis, clustering, fitting, proposals as proposals_mod
from .field import (
    FEATURES_MAGIC,
    FIELD_MAGIC,
    FeatureSet,
    face_features,
    load_features,
    load_field,
    save_field,
)
from .geometry import TriMesh, load_mesh, normalize_unit_cube

MESH_MAGIC = b"PMSH"
DATA_DIR_ENV = "PARTFIELD_DATA_DIR"


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        self.status = status
        self.code = code
        self.message = message
        super().__init__(message)


@dataclass
class ShapeSession:
    shape_id: str
    name: str
    mesh: TriMesh
    field: object | None = None  # TriplaneField
    face_feats: FeatureSet | None = None
    merge_tree: clustering.MergeTree | None = None
    annotations: dict[int, int] = dc_field(default_factory=dict)
    version: int = 0
    lock: threading.Lock = dc_field(default_factory=threading.Lock)

    def invalidate(self):
        self.face_feats = None
        self.merge_tree = None
        self.version += 1


@dataclass
class FitJob:
    job_id: str
    shape_id: str
    config: fitting.FitConfig
    labels: dict
    status: str = "queued"
    loss: float | None = None
    error: str | None = None


class ServiceState:
    def __init__(self, data_dir: str | None):
        self.sessions: dict[str, ShapeSession] = {}
        self.jobs: dict[str, FitJob] = {}
        self.queue: "queue.Queue[FitJob]" = queue.Queue()
        self.worker: threading.Thread | None = None
        self.data_dir = Path(data_dir) if data_dir else None
        if self.data_dir:
            self.data_dir.mkdir(parents=True, exist_ok=True)
            self._restore()

    def _restore(self):
        for sub in sorted(self.data_dir.iterdir()):
            mesh_path = sub / "mesh.obj"
            if not mesh_path.exists():
                continue
            mesh, _ = normalize_unit_cube(load_mesh(mesh_path))
            session = ShapeSession(shape_id=sub.name, name=sub.name, mesh=mesh)
            field_path = sub / "field.pfld"
            if field_path.exists():
                session.field = load_field(field_path)
            self.sessions[sub.name] = session

    def persist_mesh(self, session: ShapeSession, raw: bytes):
        if not self.data_dir:
            return
        sub = self.data_dir / session.shape_id
        sub.mkdir(exist_ok=True)
        (sub / "mesh.obj").write_bytes(raw)

    def persist_field(self, session: ShapeSession):
        if not self.data_dir or session.field is None:
            return
        sub = self.data_dir / session.shape_id
        sub.mkdir(exist_ok=True)
        save_field(session.field, sub / "field.pfld")

    def session(self, shape_id: str) -> ShapeSession:
        if shape_id not in self.sessions:
            raise ApiError(404, "unknown_shape", f"no shape with id {shape_id}")
        return self.sessions[shape_id]

    def ensure_worker(self):
        if self.worker is None or not self.worker.is_alive():
            self.worker = threading.Thread(target=self._work, daemon=True)
            self.worker.start()

    def _work(self):
        while True:
            job = self.queue.get()
            if job is None:
                return
            job.status = "running"
            try:
                self._run_fit(job)
                job.status = "done"
            except Exception as exc:  # job errors surface via polling
                job.status = "error"
                job.error = str(exc)

    def _run_fit(self, job: FitJob):
        session = self.sessions[job.shape_id]
        cfg = job.config
        points = fitting.canonical_point_set(session.mesh, cfg)
        levels = []
        for i, level in enumerate(job.labels["levels"]):
            labels = np.asarray(level["labels"], dtype=np.int64)
            if len(labels) == session.mesh.n_faces:
                labels = proposals_mod.face_labels_to_elements(labels, points)
            elif len(labels) != len(points):
                raise ValueError(
                    f"level {i}: {len(labels)} labels, expected "
                    f"{session.mesh.n_faces} faces or {len(points)} points"
                )
            levels.append({"name": level.get("name", f"level{i}"),
                           "labels": labels.tolist()})
        label_set = proposals_mod.LabelSet.from_json({"levels": levels})
        props = proposals_mod.ingest_labels(label_set, len(points))

        def on_snapshot(_it, _fld, loss):
            job.loss = float(loss)

        fld, report = fitting.fit_field(points, props, cfg, snapshot_callback=on_snapshot)
        with session.lock:
            session.field = fld
            session.invalidate()
        job.loss = report.final_loss
        self.persist_field(session)


def face_feature_set(session: ShapeSession) -> FeatureSet:
    if session.face_feats is not None:
        return session.face_feats
    with session.lock:
        if session.face_feats is None:
            if session.field is None:
                raise ApiError(409, "no_features",
                               "upload features or fit a field first")
            session.face_feats = face_features(session.field, session.mesh)
        return session.face_feats


def merge_tree_for(session: ShapeSession) -> clustering.MergeTree:
    ff = face_feature_set(session)
    if session.merge_tree is not None:
        return session.merge_tree
    with session.lock:
        if session.merge_tree is None:
            session.merge_tree = clustering.agglomerate(ff, session.mesh.face_adjacency)
        return session.merge_tree


def mesh_payload(mesh: TriMesh) -> bytes:
    buf = io.BytesIO()
    buf.write(MESH_MAGIC)
    buf.write(struct.pack("<III", 1, mesh.n_vertices, mesh.n_faces))
    buf.write(mesh.vertices.astype("<f4").tobytes())
    buf.write(mesh.faces.astype("<u4").tobytes())
    return buf.getvalue()


def create_app(data_dir: str | None = None) -> FastAPI:
    if data_dir is None:
        data_dir = os.environ.get(DATA_DIR_ENV) or None
    state = ServiceState(data_dir)
    app = FastAPI(title="partfield service")
    app.state.service = state
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"],
    )

    @app.exception_handler(ApiError)
    async def _api_error(_request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status,
                            content={"code": exc.code, "message": exc.message})

    @app.post("/v1/shapes")
    async def upload_shape(file: UploadFile):
        raw = await file.read()
        if not raw:
            raise ApiError(422, "empty_upload", "empty mesh upload")
        import tempfile

        with tempfile.NamedTemporaryFile(suffix=".obj", delete=False) as tmp:
            tmp.write(raw)
            tmp_path = tmp.name
        try:
            mesh = load_mesh(tmp_path)
        except Exception as exc:
            raise ApiError(422, "bad_mesh", f"could not parse OBJ: {exc}")
        finally:
            os.unlink(tmp_path)
        mesh, _ = normalize_unit_cube(mesh)
        shape_id = uuid.uuid4().hex[:12]
        session = ShapeSession(shape_id=shape_id,
                               name=file.filename or shape_id, mesh=mesh)
        state.sessions[shape_id] = session
        state.persist_mesh(session, raw)
        return {"shape_id": shape_id}

    @app.get("/v1/shapes")
    async def list_shapes():
        return [
            {
                "shape_id": s.shape_id,
                "name": s.name,
                "n_vertices": s.mesh.n_vertices,
                "n_faces": s.mesh.n_faces,
                "has_features": s.field is not None or s.face_feats is not None,
            }
            for s in state.sessions.values()
        ]

    @app.post("/v1/shapes/{shape_id}/features", status_code=204)
    async def upload_features(shape_id: str, request: Request):
        session = state.session(shape_id)
        raw = await request.body()
        magic = raw[:4]
        import tempfile

        with tempfile.NamedTemporaryFile(delete=False) as tmp:
            tmp.write(raw)
            tmp_path = tmp.name
        try:
            if magic == FIELD_MAGIC:
                fld = load_field(tmp_path)
                with session.lock:
                    session.field = fld
                    session.invalidate()
            elif magic == FEATURES_MAGIC:
                fs = load_features(tmp_path, kind="face")
                if len(fs) != session.mesh.n_faces:
                    raise ApiError(422, "count_mismatch",
                                   f"{len(fs)} feature rows for {session.mesh.n_faces} faces")
                with session.lock:
                    session.field = None
                    session.invalidate()
                    session.face_feats = fs
            else:
                raise ApiError(422, "bad_magic",
                               "expected a field (PFLD) or feature (PFTS) payload")
        except ApiError:
            raise
        except Exception as exc:
            raise ApiError(422, "bad_payload", str(exc))
        finally:
            os.unlink(tmp_path)
        return Response(status_code=204)

    @app.post("/v1/shapes/{shape_id}/fit")
    async def start_fit(shape_id: str, request: Request):
        session = state.session(shape_id)
        try:
            body = await request.json()
        except Exception:
            raise ApiError(422, "bad_body", "fit body must be JSON")
        if "labels" not in body or "levels" not in body.get("labels", {}):
            raise ApiError(422, "missing_labels",
                           "fit needs {labels: {levels: [...]}} supervision")
        try:
            cfg = fitting.FitConfig.from_json(body.get("config", {})) if body.get("config") \
                else fitting.FitConfig()
        except Exception as exc:
            raise ApiError(422, "bad_config", str(exc))
        job = FitJob(job_id=uuid.uuid4().hex[:12], shape_id=session.shape_id,
                     config=cfg, labels=body["labels"])
        state.jobs[job.job_id] = job
        state.queue.put(job)
        state.ensure_worker()
        return {"job_id": job.job_id}

    @app.get("/v1/jobs/{job_id}")
    async def job_status(job_id: str):
        if job_id not in state.jobs:
            raise ApiError(404, "unknown_job", f"no job with id {job_id}")
        job = state.jobs[job_id]
        out = {"status": job.status, "loss": job.loss}
        if job.error:
            out["error"] = job.error
        return out

    @app.get("/v1/shapes/{shape_id}/mesh")
    async def get_mesh(shape_id: str):
        session = state.session(shape_id)
        return Response(content=mesh_payload(session.mesh),
                        media_type="application/octet-stream")

    @app.get("/v1/shapes/{shape_id}/similarity")
    async def get_similarity(shape_id: str, face: int):
        session = state.session(shape_id)
        ff = face_feature_set(session)
        if not 0 <= face < session.mesh.n_faces:
            raise ApiError(422, "bad_face", f"face {face} out of range")
        try:
            values = analysis.similarity_map(ff, anchor=face)
        except analysis.AnalysisError as exc:
            raise ApiError(422, "degenerate_anchor", str(exc))
        return {"values": [float(v) for v in values.astype(np.float32)]}

    @app.get("/v1/shapes/{shape_id}/segment")
    async def get_segment(shape_id: str, k: int):
        session = state.session(shape_id)
        tree = merge_tree_for(session)
        if not 1 <= k <= tree.n_leaves:
            raise ApiError(422, "bad_k", f"k={k} outside [1, {tree.n_leaves}]")
        return clustering.cut_tree(tree, k).to_json()

    @app.get("/v1/shapes/{shape_id}/hierarchy")
    async def get_hierarchy(shape_id: str):
        session = state.session(shape_id)
        return merge_tree_for(session).to_json()

    @app.get("/v1/shapes/{shape_id}/annotations")
    async def list_annotations(shape_id: str):
        session = state.session(shape_id)
        return [{"face": f, "class": c} for f, c in sorted(session.annotations.items())]

    @app.post("/v1/shapes/{shape_id}/annotations", status_code=204)
    async def add_annotation(shape_id: str, request: Request):
        session = state.session(shape_id)
        try:
            body = await request.json()
            face = int(body["face"])
            cls = int(body["class"])
        except (KeyError, TypeError, ValueError):
            raise ApiError(422, "bad_annotation", "need {face: int, class: int}")
        if not 0 <= face < session.mesh.n_faces:
            raise ApiError(422, "bad_face", f"face {face} out of range")
        session.annotations[face] = cls
        return Response(status_code=204)

    @app.delete("/v1/shapes/{shape_id}/annotations", status_code=204)
    async def clear_annotations(shape_id: str):
        state.session(shape_id).annotations.clear()
        return Response(status_code=204)

    @app.delete("/v1/shapes/{shape_id}/annotations/{face}", status_code=204)
    async def delete_annotation(shape_id: str, face: int):
        session = state.session(shape_id)
        session.annotations.pop(face, None)
        return Response(status_code=204)

    @app.get("/v1/shapes/{shape_id}/coseg")
    async def coseg(shape_id: str):
        target = state.session(shape_id)
        # the regression trains on every annotated shape; each annotation's
        # features come from its own session's field
        rows = []
        classes = set()
        for session in state.sessions.values():
            if not session.annotations:
                continue
            ff = face_feature_set(session)  # 409 when features are missing
            for f, c in sorted(session.annotations.items()):
                rows.append((ff.values[f], c))
                classes.add(c)
        if len(classes) < 2:
            raise ApiError(422, "not_enough_classes",
                           "need annotations from at least 2 classes")
        feats = np.stack([r[0] for r in rows])
        annotations = [(i, c) for i, (_, c) in enumerate(rows)]
        model = analysis.fit_logreg(feats, annotations)
        seg = analysis.predict(model, face_feature_set(target))
        labels = np.array(model.classes, dtype=np.int64)[seg.labels]
        return {"k": len(model.classes), "labels": labels.tolist(),
                "classes": model.classes}

    return app
