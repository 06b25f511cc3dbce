import io
import struct
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from partfield.field import FeatureSet, new_triplane, save_features, save_field
from partfield.fitting import FitConfig
from partfield.sampler import SamplerConfig
from partfield.service import create_app
from synthetic import dumbbell


@pytest.fixture()
def client():
    return TestClient(create_app())


def _obj_bytes(mesh):
    out = io.StringIO()
    for v in mesh.vertices:
        out.write(f"v {v[0]} {v[1]} {v[2]}\n")
    for f in mesh.faces:
        out.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
    return out.getvalue().encode()


def _upload_dumbbell(client, res=5):
    mesh, labels = dumbbell(res_per_unit=res)
    r = client.post("/v1/shapes", files={"file": ("dumbbell.obj", _obj_bytes(mesh))})
    assert r.status_code == 200
    return r.json()["shape_id"], mesh, labels


def _part_features(mesh, labels, dim=6, seed=0):
    rng = np.random.default_rng(seed)
    anchors = np.eye(3, dim) * 4.0
    feats = anchors[np.asarray(labels)] + rng.normal(scale=0.05, size=(mesh.n_faces, dim))
    return FeatureSet(values=feats.astype(np.float32), kind="face")


def _upload_features(client, shape_id, fs, tmp_path, name="f.pfts"):
    p = tmp_path / name
    save_features(fs, p)
    r = client.post(f"/v1/shapes/{shape_id}/features", content=p.read_bytes())
    assert r.status_code == 204


def test_upload_and_list(client):
    shape_id, mesh, _ = _upload_dumbbell(client)
    r = client.get("/v1/shapes")
    assert r.status_code == 200
    entry = next(s for s in r.json() if s["shape_id"] == shape_id)
    assert entry["n_faces"] == mesh.n_faces
    assert not entry["has_features"]


def test_unknown_shape_404(client):
    r = client.get("/v1/shapes/doesnotexist/mesh")
    assert r.status_code == 404
    assert r.json()["code"] == "unknown_shape"


def test_mesh_binary_payload(client):
    shape_id, mesh, _ = _upload_dumbbell(client)
    r = client.get(f"/v1/shapes/{shape_id}/mesh")
    assert r.status_code == 200
    blob = r.content
    assert blob[:4] == b"PMSH"
    version, nv, nf = struct.unpack("<III", blob[4:16])
    assert version == 1
    assert nv == mesh.n_vertices
    assert nf == mesh.n_faces
    verts = np.frombuffer(blob, dtype="<f4", count=nv * 3, offset=16)
    faces = np.frombuffer(blob, dtype="<u4", count=nf * 3, offset=16 + nv * 12)
    assert faces.max() < nv
    # normalized at upload: the longest axis spans [-1, 1]
    assert np.isclose(np.abs(verts).max(), 1.0, atol=1e-5)


def test_similarity_requires_features(client):
    shape_id, _, _ = _upload_dumbbell(client)
    r = client.get(f"/v1/shapes/{shape_id}/similarity", params={"face": 0})
    assert r.status_code == 409
    assert r.json()["code"] == "no_features"


def test_similarity_self_is_one(client, tmp_path):
    shape_id, mesh, labels = _upload_dumbbell(client)
    _upload_features(client, shape_id, _part_features(mesh, labels), tmp_path)
    r = client.get(f"/v1/shapes/{shape_id}/similarity", params={"face": 7})
    assert r.status_code == 200
    values = r.json()["values"]
    assert len(values) == mesh.n_faces
    assert values[7] == pytest.approx(1.0, abs=1e-5)
    r = client.get(f"/v1/shapes/{shape_id}/similarity", params={"face": mesh.n_faces})
    assert r.status_code == 422


def test_field_upload_and_segment(client, tmp_path):
    shape_id, mesh, _ = _upload_dumbbell(client)
    fld = new_triplane(16, 8, init_scale=0.2, seed=4)
    p = tmp_path / "field.pfld"
    save_field(fld, p)
    r = client.post(f"/v1/shapes/{shape_id}/features", content=p.read_bytes())
    assert r.status_code == 204
    r = client.get(f"/v1/shapes/{shape_id}/segment", params={"k": 4})
    assert r.status_code == 200
    seg = r.json()
    assert seg["k"] == 4
    assert len(seg["labels"]) == mesh.n_faces
    r = client.get(f"/v1/shapes/{shape_id}/segment", params={"k": mesh.n_faces + 1})
    assert r.status_code == 422


def test_feature_count_mismatch_422(client, tmp_path):
    shape_id, _, _ = _upload_dumbbell(client)
    bad = FeatureSet(values=np.zeros((7, 3), dtype=np.float32), kind="face")
    p = tmp_path / "bad.pfts"
    save_features(bad, p)
    r = client.post(f"/v1/shapes/{shape_id}/features", content=p.read_bytes())
    assert r.status_code == 422
    assert r.json()["code"] == "count_mismatch"


def test_hierarchy_and_cached_consistency(client, tmp_path):
    shape_id, mesh, labels = _upload_dumbbell(client)
    _upload_features(client, shape_id, _part_features(mesh, labels), tmp_path)
    r = client.get(f"/v1/shapes/{shape_id}/hierarchy")
    assert r.status_code == 200
    tree = r.json()
    assert tree["n_leaves"] == mesh.n_faces
    assert len(tree["nodes"]) == mesh.n_faces - 1
    # segment twice: pure reads, identical responses
    a = client.get(f"/v1/shapes/{shape_id}/segment", params={"k": 3}).json()
    b = client.get(f"/v1/shapes/{shape_id}/segment", params={"k": 3}).json()
    assert a == b


def test_fit_job_lifecycle(client):
    shape_id, mesh, labels = _upload_dumbbell(client, res=4)
    cfg = FitConfig(
        iterations=8, seed=1, resolution=8, channels=4, init_scale=0.1,
        canonical_points=300, snapshot_period=2,
        sampler=SamplerConfig(masks_per_batch=1, positive_pairs=8,
                              uniform_negatives=16, hard3d_negatives=0,
                              feature_hard_negatives=0),
    )
    body = {"config": cfg.to_json(),
            "labels": {"levels": [{"name": "parts", "labels": np.asarray(labels).tolist()}]}}
    r = client.post(f"/v1/shapes/{shape_id}/fit", json=body)
    assert r.status_code == 200
    job_id = r.json()["job_id"]
    for _ in range(200):
        status = client.get(f"/v1/jobs/{job_id}").json()
        if status["status"] in ("done", "error"):
            break
        time.sleep(0.05)
    assert status["status"] == "done", status
    assert status["loss"] is not None
    # field now present: similarity works
    r = client.get(f"/v1/shapes/{shape_id}/similarity", params={"face": 0})
    assert r.status_code == 200


def test_fit_requires_labels(client):
    shape_id, _, _ = _upload_dumbbell(client, res=4)
    r = client.post(f"/v1/shapes/{shape_id}/fit", json={"config": {}})
    assert r.status_code == 422
    assert r.json()["code"] == "missing_labels"


def test_annotation_coseg_flow(client, tmp_path):
    shape_id, mesh, labels = _upload_dumbbell(client)
    _upload_features(client, shape_id, _part_features(mesh, labels), tmp_path)
    labels = np.asarray(labels)
    face_a = int(np.nonzero(labels == 0)[0][0])
    face_b = int(np.nonzero(labels == 2)[0][0])
    # one annotated class only -> 422
    assert client.post(f"/v1/shapes/{shape_id}/annotations",
                       json={"face": face_a, "class": 1}).status_code == 204
    r = client.get(f"/v1/shapes/{shape_id}/coseg")
    assert r.status_code == 422
    assert client.post(f"/v1/shapes/{shape_id}/annotations",
                       json={"face": face_b, "class": 2}).status_code == 204
    r = client.get(f"/v1/shapes/{shape_id}/coseg")
    assert r.status_code == 200
    out = r.json()
    assert out["k"] == 2
    # separable per-part features: whole parts take their annotated class
    got = np.array(out["labels"])
    assert got[face_a] == 1
    assert got[face_b] == 2
    assert np.all(got[labels == 0] == 1)
    assert np.all(got[labels == 2] == 2)
    # annotations listing and deletion
    r = client.get(f"/v1/shapes/{shape_id}/annotations")
    assert {(a["face"], a["class"]) for a in r.json()} == {(face_a, 1), (face_b, 2)}
    assert client.delete(f"/v1/shapes/{shape_id}/annotations/{face_a}").status_code == 204
    assert client.delete(f"/v1/shapes/{shape_id}/annotations").status_code == 204
    assert client.get(f"/v1/shapes/{shape_id}/annotations").json() == []
    assert client.get(f"/v1/shapes/{shape_id}/coseg").status_code == 422


def test_persistence_round_trip(tmp_path):
    data_dir = tmp_path / "sessions"
    client1 = TestClient(create_app(data_dir=str(data_dir)))
    shape_id, mesh, _ = _upload_dumbbell(client1)
    # a fresh app over the same directory restores the session
    client2 = TestClient(create_app(data_dir=str(data_dir)))
    shapes = client2.get("/v1/shapes").json()
    assert any(s["shape_id"] == shape_id for s in shapes)
    r = client2.get(f"/v1/shapes/{shape_id}/mesh")
    assert r.status_code == 200
