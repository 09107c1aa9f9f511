"""Meshes, blendshape rigs, rigid poses, cameras and landmark selection.

All containers are frozen dataclasses holding read-only numpy arrays. The
functions here are pure and never modify their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ARKIT_NAMES = (
    "browDownLeft", "browDownRight", "browInnerUp", "browOuterUpLeft",
    "browOuterUpRight", "cheekPuff", "cheekSquintLeft", "cheekSquintRight",
    "eyeBlinkLeft", "eyeBlinkRight", "eyeLookDownLeft", "eyeLookDownRight",
    "eyeLookInLeft", "eyeLookInRight", "eyeLookOutLeft", "eyeLookOutRight",
    "eyeLookUpLeft", "eyeLookUpRight", "eyeSquintLeft", "eyeSquintRight",
    "eyeWideLeft", "eyeWideRight", "jawForward", "jawLeft", "jawOpen",
    "jawRight", "mouthClose", "mouthDimpleLeft", "mouthDimpleRight",
    "mouthFrownLeft", "mouthFrownRight", "mouthFunnel", "mouthLeft",
    "mouthLowerDownLeft", "mouthLowerDownRight", "mouthPressLeft",
    "mouthPressRight", "mouthPucker", "mouthRight", "mouthRollLower",
    "mouthRollUpper", "mouthShrugLower", "mouthShrugUpper", "mouthSmileLeft",
    "mouthSmileRight", "mouthStretchLeft", "mouthStretchRight",
    "mouthUpperUpLeft", "mouthUpperUpRight", "noseSneerLeft", "noseSneerRight",
    "tongueOut",
)
NUM_SHAPES = 52
NUM_LANDMARKS = 146
REGIONS = ("lips", "eyes", "brows", "irises", "oval")


class RigError(ValueError):
    """Invalid mesh, rig, landmark map or coefficient input."""


class DegenerateRotationError(ValueError):
    """A 6D rotation whose columns are zero or parallel."""


class BehindCameraError(ValueError):
    def __init__(self, index: int, z: float):
        super().__init__(f"point {index} is behind the camera (z={z:.6g})")
        self.index = index
        self.z = z


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = _frozen(self.vertices)
        f = _frozen(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise RigError(f"vertices must be (n, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise RigError(f"faces must be (m, 3) triangles, got {f.shape}")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise RigError("face index out of range")
        if f.size and np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise RigError("degenerate face with repeated vertex index")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def with_vertices(self, vertices) -> "Mesh":
        return Mesh(vertices, self.faces)

    def same_topology(self, other: "Mesh") -> bool:
        return (
            self.vertices.shape == other.vertices.shape
            and np.array_equal(self.faces, other.faces)
        )


@dataclass(frozen=True, eq=False)
class LandmarkMap:
    """Landmark vertex indices, their region tags and the inter-ocular pair.

    ``interocular_pair`` holds positions into ``indices`` (not vertex ids).
    """

    indices: np.ndarray
    regions: tuple
    interocular_pair: tuple

    def __post_init__(self):
        idx = _frozen(self.indices, dtype=np.int64)
        regions = tuple(str(r) for r in self.regions)
        pair = tuple(int(i) for i in self.interocular_pair)
        if idx.shape != (NUM_LANDMARKS,):
            raise RigError(f"landmark map needs {NUM_LANDMARKS} indices, got {idx.shape}")
        if len(regions) != len(idx):
            raise RigError("one region tag per landmark required")
        bad = set(regions) - set(REGIONS)
        if bad:
            raise RigError(f"unknown landmark regions {sorted(bad)}")
        if len(pair) != 2 or pair[0] == pair[1]:
            raise RigError("interocular_pair must name two distinct landmarks")
        for p in pair:
            if not 0 <= p < len(idx) or regions[p] != "eyes":
                raise RigError(f"interocular landmark {p} must be an eyes-region landmark")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "regions", regions)
        object.__setattr__(self, "interocular_pair", pair)

    def __len__(self):
        return len(self.indices)

    def region_mask(self, region: str) -> np.ndarray:
        return np.array([r == region for r in self.regions])

    def validate_for(self, n_vertices: int):
        if self.indices.min() < 0 or self.indices.max() >= n_vertices:
            raise RigError(f"landmark index out of range for a {n_vertices}-vertex mesh")


@dataclass(frozen=True, eq=False)
class LandmarkSet:
    points: np.ndarray
    regions: tuple = ()

    def __post_init__(self):
        p = _frozen(self.points)
        if p.ndim != 2 or p.shape[1] not in (2, 3):
            raise RigError(f"landmark points must be (n, 2) or (n, 3), got {p.shape}")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "regions", tuple(self.regions))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True, eq=False)
class BlendshapeRig:
    neutral: Mesh
    shapes: tuple
    names: tuple
    landmark_map: LandmarkMap
    _deltas: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        shapes = tuple(self.shapes)
        names = tuple(str(n) for n in self.names)
        if len(shapes) != NUM_SHAPES:
            raise RigError(f"rig needs exactly {NUM_SHAPES} shapes, got {len(shapes)}")
        if len(names) != NUM_SHAPES or len(set(names)) != NUM_SHAPES:
            raise RigError(f"rig needs {NUM_SHAPES} unique names")
        for name, s in zip(names, shapes):
            if not s.same_topology(self.neutral):
                raise RigError(f"shape {name!r} does not share the neutral topology")
        self.landmark_map.validate_for(self.neutral.n_vertices)
        deltas = np.stack([s.vertices - self.neutral.vertices for s in shapes])
        object.__setattr__(self, "shapes", shapes)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "_deltas", _frozen(deltas))

    @property
    def deltas(self) -> np.ndarray:
        """(52, n_vertices, 3) displacement of every shape from the neutral."""
        return self._deltas

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise RigError(f"unknown blendshape {name!r}") from None

    def coefficients(self, mapping: dict) -> np.ndarray:
        """Dense coefficient vector from a name -> weight mapping."""
        w = np.zeros(NUM_SHAPES)
        for k, v in mapping.items():
            w[self.index(k)] = v
        return w

    def landmark_basis(self) -> tuple:
        """Neutral landmarks (146, 3) and landmark deltas (52, 146, 3)."""
        idx = self.landmark_map.indices
        return self.neutral.vertices[idx], self.deltas[:, idx]


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: tuple = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
    translation: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        R = np.asarray(self.rotation, dtype=float)
        if R.shape != (3, 3) or not np.allclose(R.T @ R, np.eye(3), atol=1e-9):
            raise ValueError("camera rotation must be orthonormal")
        object.__setattr__(self, "rotation", tuple(map(tuple, R.tolist())))
        object.__setattr__(self, "translation", tuple(float(x) for x in self.translation))

    @property
    def R(self) -> np.ndarray:
        return np.array(self.rotation)

    @property
    def t(self) -> np.ndarray:
        return np.array(self.translation)

    def to_camera(self, points) -> np.ndarray:
        return np.asarray(points) @ self.R.T + self.t

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "rotation": [list(r) for r in self.rotation],
            "translation": list(self.translation),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(
            float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
            tuple(map(tuple, d.get("rotation", np.eye(3).tolist()))),
            tuple(d.get("translation", (0.0, 0.0, 0.0))),
        )


@dataclass(frozen=True, eq=False)
class RigidPose:
    r6: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0, 1.0, 0]))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r6 = _frozen(self.r6)
        t = _frozen(self.t)
        if r6.shape != (6,) or t.shape != (3,):
            raise ValueError("pose needs r6 of length 6 and t of length 3")
        object.__setattr__(self, "r6", r6)
        object.__setattr__(self, "t", t)

    @property
    def rotation(self) -> np.ndarray:
        return rot6d_to_rotation(self.r6)

    @classmethod
    def from_matrix(cls, R, t=(0.0, 0.0, 0.0)) -> "RigidPose":
        R = np.asarray(R, dtype=float)
        return cls(np.concatenate([R[:, 0], R[:, 1]]), np.asarray(t, dtype=float))

    def inverse(self) -> "RigidPose":
        R = self.rotation
        return RigidPose.from_matrix(R.T, -R.T @ self.t)

    def compose(self, other: "RigidPose") -> "RigidPose":
        """Pose applying ``other`` first, then ``self``."""
        R1, R2 = self.rotation, other.rotation
        return RigidPose.from_matrix(R1 @ R2, R1 @ other.t + self.t)


def apply_expression(rig: BlendshapeRig, w) -> Mesh:
    """Neutral plus the coefficient-weighted sum of blendshape displacements."""
    w = np.asarray(w, dtype=float)
    if w.shape != (NUM_SHAPES,):
        raise RigError(f"expected {NUM_SHAPES} coefficients, got shape {w.shape}")
    v = rig.neutral.vertices + np.tensordot(w, rig.deltas, axes=1)
    return rig.neutral.with_vertices(v)


def rot6d_to_rotation(r6, eps: float = 1e-12) -> np.ndarray:
    """Gram-Schmidt decode of a 6D rotation into a 3x3 matrix.

    The two 3-vectors become the first two columns after orthonormalization;
    the third column is their cross product. Accepts (..., 6) batches.
    """
    r6 = np.asarray(r6, dtype=float)
    if r6.shape[-1] != 6:
        raise ValueError(f"6D rotation must have 6 entries, got {r6.shape}")
    a1, a2 = r6[..., :3], r6[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(n1 <= eps):
        raise DegenerateRotationError("first rotation column is zero")
    b1 = a1 / n1
    u2 = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(u2, axis=-1, keepdims=True)
    if np.any(n2 <= eps * np.maximum(1.0, np.linalg.norm(a2, axis=-1, keepdims=True))):
        raise DegenerateRotationError("rotation columns are parallel or the second is zero")
    b2 = u2 / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def rot6d_backward(r6, grad_R) -> np.ndarray:
    """Vector-Jacobian product of :func:`rot6d_to_rotation`.

    ``grad_R`` is dL/dR with the same (..., 3, 3) layout as the decoded matrix.
    """
    r6 = np.asarray(r6, dtype=float)
    grad_R = np.asarray(grad_R, dtype=float)
    a1, a2 = r6[..., :3], r6[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    b1 = a1 / n1
    d = np.sum(b1 * a2, axis=-1, keepdims=True)
    u2 = a2 - d * b1
    n2 = np.linalg.norm(u2, axis=-1, keepdims=True)
    b2 = u2 / n2
    g1, g2, g3 = grad_R[..., :, 0], grad_R[..., :, 1], grad_R[..., :, 2]
    # b3 = b1 x b2
    g1 = g1 + np.cross(b2, g3)
    g2 = g2 + np.cross(g3, b1)
    # b2 = u2 / |u2|
    gu2 = (g2 - np.sum(g2 * b2, axis=-1, keepdims=True) * b2) / n2
    # u2 = a2 - (b1.a2) b1
    ga2 = gu2 - np.sum(gu2 * b1, axis=-1, keepdims=True) * b1
    g1 = g1 - d * gu2 - np.sum(gu2 * b1, axis=-1, keepdims=True) * a2
    # b1 = a1 / |a1|
    ga1 = (g1 - np.sum(g1 * b1, axis=-1, keepdims=True) * b1) / n1
    return np.concatenate([ga1, ga2], axis=-1)


def apply_rigid(points, pose: RigidPose) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    return points @ pose.rotation.T + pose.t


def project(points, cam: Camera) -> np.ndarray:
    """Pinhole projection of camera-frame points to pixels."""
    p = np.asarray(points, dtype=float)
    z = p[:, 2]
    bad = np.flatnonzero(~(z > 0))
    if bad.size:
        raise BehindCameraError(int(bad[0]), float(z[bad[0]]))
    return np.stack([cam.fx * p[:, 0] / z + cam.cx, cam.fy * p[:, 1] / z + cam.cy], axis=1)


def extract_landmarks(mesh: Mesh, lmap: LandmarkMap) -> LandmarkSet:
    lmap.validate_for(mesh.n_vertices)
    return LandmarkSet(mesh.vertices[lmap.indices], lmap.regions)


def geodesic_angle(R1, R2) -> float:
    """Rotation angle (radians) of R1^T R2."""
    c = (np.trace(np.asarray(R1).T @ np.asarray(R2)) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def euler_to_rotation(rx: float, ry: float, rz: float) -> np.ndarray:
    """Rotation Rz @ Ry @ Rx from angles in radians."""
    cx, sx, cy, sy, cz, sz = np.cos(rx), np.sin(rx), np.cos(ry), np.sin(ry), np.cos(rz), np.sin(rz)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx
