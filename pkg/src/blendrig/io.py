"""File formats: Wavefront OBJ meshes, rig manifests and JSON-lines records."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .mesh import BlendshapeRig, LandmarkMap, LandmarkSet, Mesh, RigError

OBJ_DECIMALS = 6
MANIFEST_FORMAT = "blendrig-manifest"


def read_obj(path) -> Mesh:
    """Read vertices and triangular faces; normals, UVs and groups are ignored."""
    verts, faces = [], []
    with open(path) as f:
        for line in f:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                # "7", "7/2", "7//3" and "7/2/3" all reference vertex 7
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                if len(idx) != 3:
                    raise RigError(f"{path}: only triangle faces are supported")
                faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
    return Mesh(np.array(verts, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def format_obj(mesh: Mesh, header: str | None = None) -> str:
    fmt = f"{{:.{OBJ_DECIMALS}f}}"
    lines = []
    if header:
        lines.extend(f"# {h}" for h in header.splitlines())
    for v in mesh.vertices:
        # "-0.000000" and "0.000000" must not differ between runs
        lines.append("v " + " ".join(fmt.format(x + 0.0) for x in np.round(v, OBJ_DECIMALS) + 0.0))
    for f in mesh.faces:
        lines.append("f {} {} {}".format(*(int(i) + 1 for i in f)))
    return "\n".join(lines) + "\n"


def write_obj(path, mesh: Mesh, header: str | None = None):
    Path(path).write_text(format_obj(mesh, header))


def write_rig(rig: BlendshapeRig, out_dir, provenance: dict | None = None) -> Path:
    """Write the rig as ``manifest.json`` plus one OBJ per mesh in ``out_dir``."""
    out = Path(out_dir)
    (out / "shapes").mkdir(parents=True, exist_ok=True)
    write_obj(out / "neutral.obj", rig.neutral)
    shapes = []
    for name, mesh in zip(rig.names, rig.shapes):
        rel = f"shapes/{name}.obj"
        write_obj(out / rel, mesh)
        shapes.append({"name": name, "path": rel})
    lmap = rig.landmark_map
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": 1,
        "neutral": "neutral.obj",
        "shapes": shapes,
        "landmarks": [{"index": int(i), "region": r} for i, r in zip(lmap.indices, lmap.regions)],
        "interocular_pair": list(lmap.interocular_pair),
        "provenance": provenance or {},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n")
    return path


def read_landmark_map(manifest: dict) -> LandmarkMap:
    rows = manifest["landmarks"]
    return LandmarkMap(
        [r["index"] for r in rows], [r["region"] for r in rows], manifest["interocular_pair"]
    )


def read_rig(manifest_path) -> BlendshapeRig:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != MANIFEST_FORMAT:
        raise RigError(f"{manifest_path} is not a rig manifest")
    base = manifest_path.parent
    neutral = read_obj(base / manifest["neutral"])
    names = [s["name"] for s in manifest["shapes"]]
    shapes = [read_obj(base / s["path"]) for s in manifest["shapes"]]
    return BlendshapeRig(neutral, shapes, names, read_landmark_map(manifest))


def rig_hash(rig: BlendshapeRig) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(rig.neutral.vertices).tobytes())
    h.update(np.ascontiguousarray(rig.neutral.faces).tobytes())
    h.update(np.ascontiguousarray(rig.deltas).tobytes())
    h.update(json.dumps([rig.names, rig.landmark_map.indices.tolist(),
                         rig.landmark_map.regions, rig.landmark_map.interocular_pair]).encode())
    return h.hexdigest()


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def dumps_record(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True)


def write_jsonl(path, records):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as f:
        for r in records:
            f.write(dumps_record(r) + "\n")
    os.replace(tmp, path)


def read_jsonl(path):
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                yield json.loads(line)


def landmark_record(frame_id, points, dim: int | None = None) -> dict:
    """JSON-lines landmark record: frame id, points and their dimensionality."""
    pts = np.asarray(points, dtype=float)
    return {"frame": frame_id, "dim": int(dim or pts.shape[1]), "points": pts.tolist()}


def landmarks_from_record(rec: dict) -> LandmarkSet:
    pts = np.asarray(rec["points"], dtype=float)
    if pts.ndim != 2 or pts.shape[1] != int(rec["dim"]):
        raise RigError(f"frame {rec.get('frame')}: points do not match dim={rec['dim']}")
    return LandmarkSet(pts)
