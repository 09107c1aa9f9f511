"""Procedural face rigs, identity variation and landmark training data.

The template is a front-facing ellipsoidal face patch. Landmark vertices are
placed exactly on feature contours (oval, brows, eyes, irises, lips) laid out
in a unit-disk parameter plane, background vertices fill the rest of the disk
and the whole set is Delaunay-triangulated before being lifted onto the
ellipsoid. Each of the 52 blendshapes is a sum of Gaussian displacement
fields over that parameter plane, optionally gated to one side of the mouth
or eye line.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import Delaunay

from . import defxfer
from .mesh import (
    ARKIT_NAMES,
    NUM_LANDMARKS,
    BehindCameraError,
    BlendshapeRig,
    Camera,
    LandmarkMap,
    Mesh,
    RigError,
    RigidPose,
    apply_expression,
    euler_to_rotation,
    project,
)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class TemplateConfig:
    seed: int = 0
    resolution: int = 600
    head_axes: tuple = (0.8, 1.0, 0.9)
    eye_center: tuple = (0.36, 0.22)
    eye_size: tuple = (0.15, 0.06)
    iris_radius: float = 0.03
    brow_center: tuple = (0.36, 0.42)
    brow_half_width: float = 0.17
    mouth_center: tuple = (0.0, -0.42)
    mouth_size: tuple = (0.26, 0.11)
    inner_lip_size: tuple = (0.2, 0.025)
    oval_radius: float = 0.9

    def __post_init__(self):
        if self.resolution < 200:
            raise RigError(f"resolution {self.resolution} is too low to host {NUM_LANDMARKS} landmarks")

    @classmethod
    def from_dict(cls, d: dict) -> "TemplateConfig":
        d = dict(d)
        for k in ("head_axes", "eye_center", "eye_size", "brow_center", "mouth_center",
                  "mouth_size", "inner_lip_size"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


def _ellipse(center, size, n, start=0.0):
    a = start + 2 * np.pi * np.arange(n) / n
    return np.stack([center[0] + size[0] * np.cos(a), center[1] + size[1] * np.sin(a)], axis=1)


def landmark_layout(cfg: TemplateConfig):
    """Parameter-plane landmark positions, region tags and the inter-ocular pair."""
    pts, regions = [], []

    def add(p, region):
        pts.extend(np.atleast_2d(p))
        regions.extend([region] * len(np.atleast_2d(p)))

    add(_ellipse((0.0, 0.0), (cfg.oval_radius, cfg.oval_radius), 44, np.pi / 2), "oval")
    for s in (1.0, -1.0):
        cx, cy = s * cfg.brow_center[0], cfg.brow_center[1]
        x = cx + np.linspace(-cfg.brow_half_width, cfg.brow_half_width, 5)
        arch = 0.03 * (1 - ((x - cx) / cfg.brow_half_width) ** 2)
        add(np.stack([x, cy + arch], axis=1), "brows")
        add(np.stack([x, cy - 0.04 + arch], axis=1), "brows")
    outer = {}
    for s in (1.0, -1.0):
        c = (s * cfg.eye_center[0], cfg.eye_center[1])
        # angle 0 (left eye) / pi (right eye) is the outer corner
        start = 0.0 if s > 0 else np.pi
        outer[s] = len(pts)
        add(_ellipse(c, cfg.eye_size, 16, start), "eyes")
    for s in (1.0, -1.0):
        c = np.array([s * cfg.eye_center[0], cfg.eye_center[1]])
        add(np.vstack([c, _ellipse(c, (cfg.iris_radius,) * 2, 4)]), "irises")
    add(_ellipse(cfg.mouth_center, cfg.mouth_size, 20), "lips")
    add(_ellipse(cfg.mouth_center, cfg.inner_lip_size, 20, np.pi / 20), "lips")
    pts = np.array(pts)
    assert len(pts) == NUM_LANDMARKS
    return pts, tuple(regions), (outer[1.0], outer[-1.0])


def _param_points(cfg: TemplateConfig, rng: np.random.Generator):
    lm, regions, pair = landmark_layout(cfg)
    n_ring = 64
    ring = _ellipse((0.0, 0.0), (1.0, 1.0), n_ring)
    n_fill = max(cfg.resolution - NUM_LANDMARKS - n_ring, 16)
    h = np.sqrt(np.pi * 0.97 ** 2 / (n_fill * 1.15))
    g = np.arange(-1.0, 1.0 + h, h)
    gx, gy = np.meshgrid(g, g)
    grid = np.stack([gx.ravel(), gy.ravel()], axis=1)
    grid = grid + rng.uniform(-0.05 * h, 0.05 * h, grid.shape)
    grid = grid[np.linalg.norm(grid, axis=1) < 1.0 - 0.5 * h]
    taken = np.vstack([lm, ring])
    d = np.min(np.linalg.norm(grid[:, None, :] - taken[None, :, :], axis=2), axis=1)
    grid = grid[d > 0.5 * h]
    uv = np.vstack([lm, ring, grid])
    return uv, np.arange(NUM_LANDMARKS), regions, pair


def lift(uv, axes) -> np.ndarray:
    """Map parameter-plane points onto the front of the head ellipsoid."""
    lon = uv[:, 0] * np.radians(75.0)
    lat = uv[:, 1] * np.radians(70.0)
    a, b, c = axes
    return np.stack([a * np.sin(lon) * np.cos(lat), b * np.sin(lat), c * np.cos(lon) * np.cos(lat)], axis=1)


def _gauss(uv, center, sigma):
    d = (uv - np.asarray(center)) / np.asarray(sigma)
    return np.exp(-0.5 * np.sum(d * d, axis=1))


def _gate(v, line, side, width=0.012):
    s = (v - line) / width if side == "above" else (line - v) / width
    return 0.5 * (1.0 + np.tanh(0.5 * s))


def _shape_table(cfg: TemplateConfig):
    """name -> list of displacement components.

    A component is (center, sigma, direction, amplitude, gate) where direction
    is a 3-vector, ``"normal"``, ``"radial_u"`` or ``"radial_v"`` and gate is
    None or (line_v, "above"|"below").
    """
    ex, ey = cfg.eye_center
    bx, by = cfg.brow_center
    mx, my = cfg.mouth_center
    mw, mh = cfg.mouth_size
    t = {}
    for s, side in ((1.0, "Left"), (-1.0, "Right")):
        e = (s * ex, ey)
        t[f"browDown{side}"] = [((s * bx, by), (0.16, 0.08), (-0.3 * s, -1.0, 0.0), 0.06, None)]
        t[f"browOuterUp{side}"] = [((s * (bx + 0.14), by), (0.12, 0.08), (0.0, 1.0, 0.0), 0.07, None)]
        t[f"cheekSquint{side}"] = [((s * 0.42, 0.05), (0.12, 0.1), (0.0, 1.0, 0.3), 0.05, None)]
        t[f"eyeBlink{side}"] = [((e[0], ey + 0.04), (0.14, 0.05), (0.0, -1.0, 0.0), 0.09, (ey, "above"))]
        t[f"eyeSquint{side}"] = [((e[0], ey - 0.05), (0.14, 0.04), (0.0, 1.0, 0.0), 0.04, (ey, "below"))]
        t[f"eyeWide{side}"] = [((e[0], ey + 0.05), (0.15, 0.05), (0.0, 1.0, 0.0), 0.04, (ey, "above"))]
        # opposite gaze directions are not mirror images: the lid follows the
        # iris more when looking down, the eyeball bulges when turned out, and
        # the bump sits slightly toward the look direction
        gaze = {"Down": ((0, -1, 0.15), 0.025), "Up": ((0, 1, 0.05), 0.022),
                "In": ((-s, 0, 0.1), 0.024), "Out": ((s, 0, 0.2), 0.026)}
        for k, (d, amp) in gaze.items():
            c = (e[0] + 0.008 * d[0], e[1] + 0.008 * d[1])
            t[f"eyeLook{k}{side}"] = [(c, (0.025, 0.025), d, amp, None)]
        corner = (s * mw + mx, my)
        t[f"mouthDimple{side}"] = [((s * (mw + 0.04), my), (0.06, 0.06), (0.3 * s, 0.0, -1.0), 0.04, None)]
        t[f"mouthFrown{side}"] = [(corner, (0.08, 0.08), (0.0, -1.0, 0.0), 0.06, None)]
        t[f"mouthLowerDown{side}"] = [((s * 0.12, my - 0.08), (0.1, 0.05), (0.0, -1.0, 0.0), 0.05, (my, "below"))]
        t[f"mouthPress{side}"] = [((s * 0.14, my), (0.1, 0.05), "radial_v", -0.02, None),
                                  ((s * 0.14, my), (0.1, 0.05), (0.0, 0.0, -1.0), 0.01, None)]
        t[f"mouthSmile{side}"] = [(corner, (0.1, 0.08), (0.5 * s, 1.0, -0.2), 0.07, None)]
        t[f"mouthStretch{side}"] = [(corner, (0.09, 0.07), (s, -0.2, 0.0), 0.06, None)]
        t[f"mouthUpperUp{side}"] = [((s * 0.12, my + 0.09), (0.1, 0.05), (0.0, 1.0, 0.0), 0.04, (my, "above"))]
        t[f"noseSneer{side}"] = [((s * 0.1, 0.0), (0.1, 0.14), (0.0, 1.0, 0.2), 0.04, None)]
    t["browInnerUp"] = [((0.0, by - 0.02), (0.18, 0.08), (0.0, 1.0, 0.0), 0.07, None)]
    t["cheekPuff"] = [((s * 0.45, -0.3), (0.15, 0.15), "normal", 0.08, None) for s in (1.0, -1.0)]
    jaw = ((0.0, -0.75), (0.4, 0.25))
    below = (my, "below")
    above = (my, "above")
    t["jawForward"] = [(*jaw, (0.0, 0.0, 1.0), 0.08, below)]
    # sideways shapes pivot about an off-centre point, so left and right differ
    t["jawLeft"] = [((0.06, -0.75), (0.4, 0.25), (1.0, 0.0, 0.05), 0.08, below)]
    t["jawRight"] = [((-0.06, -0.75), (0.4, 0.25), (-1.0, 0.0, 0.05), 0.08, below)]
    t["jawOpen"] = [(*jaw, (0.0, -1.0, -0.15), 0.22, below)]
    t["mouthClose"] = [((0.0, my - 0.06), (0.25, 0.07), (0.0, 1.0, 0.0), 0.08, below)]
    t["mouthFunnel"] = [((mx, my), (0.22, 0.1), (0.0, 0.0, 1.0), 0.05, None),
                        ((mx, my), (0.22, 0.1), "radial_v", 0.03, None)]
    t["mouthLeft"] = [((mx + 0.05, my), (0.3, 0.12), (1.0, 0.0, -0.1), 0.06, None)]
    t["mouthRight"] = [((mx - 0.05, my), (0.3, 0.12), (-1.0, 0.0, -0.1), 0.06, None)]
    t["mouthPucker"] = [((mx, my), (0.2, 0.12), "radial_u", -0.06, None),
                        ((mx, my), (0.2, 0.12), (0.0, 0.0, 1.0), 0.03, None)]
    t["mouthRollLower"] = [((0.0, my - 0.08), (0.22, 0.05), (0.0, 0.3, -1.0), 0.04, below)]
    t["mouthRollUpper"] = [((0.0, my + 0.08), (0.22, 0.05), (0.0, -0.3, -1.0), 0.04, above)]
    t["mouthShrugLower"] = [((0.0, my - 0.13), (0.2, 0.08), (0.0, 1.0, 0.3), 0.04, below)]
    t["mouthShrugUpper"] = [((0.0, my + 0.1), (0.2, 0.06), (0.0, 1.0, 0.2), 0.03, above)]
    t["tongueOut"] = [((mx, my), (0.12, 0.04), (0.0, -0.3, 1.0), 0.05, None)]
    assert set(t) == set(ARKIT_NAMES)
    return t


def _displacement(uv, verts, normals, components):
    d = np.zeros_like(verts)
    for center, sigma, direction, amp, gate in components:
        wgt = amp * _gauss(uv, center, sigma)
        if gate is not None:
            wgt = wgt * _gate(uv[:, 1], *gate)
        if isinstance(direction, str):
            if direction == "normal":
                vec = normals
            else:
                k = 0 if direction == "radial_u" else 1
                vec = np.zeros_like(verts)
                vec[:, k] = np.tanh((uv[:, k] - center[k]) / (0.5 * sigma[k]))
        else:
            vec = np.broadcast_to(np.asarray(direction, float) / np.linalg.norm(direction), verts.shape)
        d += wgt[:, None] * vec
    return d


def _vertex_normals(verts, faces):
    fn = np.cross(verts[faces[:, 1]] - verts[faces[:, 0]], verts[faces[:, 2]] - verts[faces[:, 0]])
    n = np.zeros_like(verts)
    for k in range(3):
        np.add.at(n, faces[:, k], fn)
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def _neutral_relief(uv, cfg: TemplateConfig):
    """Small depth features (nose bump, eye sockets, lips) along the surface normal."""
    ex, ey = cfg.eye_center
    r = 0.15 * _gauss(uv, (0.0, 0.0), (0.08, 0.16))
    r -= 0.04 * (_gauss(uv, (ex, ey), (0.14, 0.08)) + _gauss(uv, (-ex, ey), (0.14, 0.08)))
    r += 0.03 * _gauss(uv, cfg.mouth_center, (0.22, 0.09))
    return r


def make_template(cfg: TemplateConfig = TemplateConfig()) -> BlendshapeRig:
    """Deterministic 52-shape template rig for ``cfg``."""
    rng = np.random.default_rng(cfg.seed)
    uv, lm_idx, regions, pair = _param_points(cfg, rng)
    tri = Delaunay(uv)
    faces = tri.simplices.astype(np.int64)
    # consistent counter-clockwise winding in the parameter plane
    a, b, c = uv[faces[:, 0]], uv[faces[:, 1]], uv[faces[:, 2]]
    cw = ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])) < 0
    faces[cw] = faces[cw][:, [0, 2, 1]]
    base = lift(uv, cfg.head_axes)
    normals = _vertex_normals(base, faces)
    verts = base + _neutral_relief(uv, cfg)[:, None] * normals
    normals = _vertex_normals(verts, faces)
    neutral = Mesh(verts, faces)
    table = _shape_table(cfg)
    shapes = [neutral.with_vertices(verts + _displacement(uv, verts, normals, table[n])) for n in ARKIT_NAMES]
    return BlendshapeRig(neutral, shapes, ARKIT_NAMES, LandmarkMap(lm_idx, regions, pair))


def head_radius(mesh: Mesh) -> float:
    return float(np.mean(np.linalg.norm(mesh.vertices, axis=1)))


def make_identity(template: BlendshapeRig, seed: int, amplitude: float = 0.05, n_waves: int = 6) -> Mesh:
    """Template neutral plus a smooth random radial deformation.

    ``amplitude`` is the peak radial offset as a fraction of the mean head
    radius. The deformation is a sum of ``n_waves`` low-frequency plane waves
    over the unit sphere of directions, scaled so its peak equals the
    requested amplitude.
    """
    v = template.neutral.vertices
    if amplitude == 0:
        return template.neutral
    rng = np.random.default_rng(seed)
    radial = v / np.linalg.norm(v, axis=1, keepdims=True)
    k = rng.normal(size=(n_waves, 3))
    k *= rng.uniform(0.5, 2.5, size=(n_waves, 1)) / np.linalg.norm(k, axis=1, keepdims=True)
    phase = rng.uniform(0, 2 * np.pi, n_waves)
    coef = rng.normal(size=n_waves)
    f = np.cos(radial @ k.T * np.pi + phase) @ coef
    f *= amplitude * head_radius(template.neutral) / np.max(np.abs(f))
    return template.neutral.with_vertices(v + f[:, None] * radial)


# ---------------------------------------------------------------------------
# training data

MAX_ANGLE_DEG = 30.0
# translation box (model units) around the head origin; with the default
# camera 7 units away every landmark stays in front of the lens
TRANSLATION_BOX = ((-0.3, 0.3), (-0.3, 0.3), (-0.5, 0.5))
MAX_POSE_RESAMPLES = 100


def default_camera() -> Camera:
    """256x256 pinhole camera on the +z axis looking back at the face."""
    return Camera(700.0, 700.0, 128.0, 128.0,
                  rotation=((1.0, 0.0, 0.0), (0.0, -1.0, 0.0), (0.0, 0.0, -1.0)),
                  translation=(0.0, 0.0, 7.0))


def random_pose(rng: np.random.Generator, max_angle_deg: float = MAX_ANGLE_DEG,
                box=TRANSLATION_BOX) -> RigidPose:
    ang = np.deg2rad(rng.uniform(-max_angle_deg, max_angle_deg, 3))
    t = np.array([rng.uniform(lo, hi) for lo, hi in box])
    return RigidPose.from_matrix(euler_to_rotation(*ang), t)


def render_landmarks(rig: BlendshapeRig, w, pose: RigidPose, cam: Camera) -> np.ndarray:
    """Forward model: expression, rigid pose, camera projection -> (146, 2) pixels.

    Raises :class:`BehindCameraError` if any landmark is not in front of the camera.
    """
    base, deltas = rig.landmark_basis()
    X = base + np.tensordot(np.asarray(w, dtype=float), deltas, axes=1)
    P = X @ pose.rotation.T + pose.t
    return project(cam.to_camera(P), cam)


@dataclass(eq=False)
class DataSample:
    index: int
    landmarks2d: np.ndarray
    coefficients: np.ndarray
    pose: RigidPose
    identity_id: int
    camera_id: int = 0

    def to_record(self) -> dict:
        return {
            "type": "sample",
            "index": self.index,
            "identity_id": self.identity_id,
            "camera_id": self.camera_id,
            "coefficients": self.coefficients.tolist(),
            "pose": {"r6": self.pose.r6.tolist(), "t": self.pose.t.tolist()},
            "landmarks2d": self.landmarks2d.tolist(),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "DataSample":
        pts = np.asarray(rec["landmarks2d"], dtype=float)
        w = np.asarray(rec["coefficients"], dtype=float)
        if pts.shape != (NUM_LANDMARKS, 2) or w.shape != (len(ARKIT_NAMES),):
            raise ValueError(f"sample {rec.get('index')}: malformed landmarks or coefficients")
        return cls(int(rec["index"]), pts, w, RigidPose(rec["pose"]["r6"], rec["pose"]["t"]),
                   int(rec["identity_id"]), int(rec.get("camera_id", 0)))


@dataclass
class Diagnostics:
    pose_resamples: int = 0
    identities_built: int = 0


class IdentityCache:
    """Per-identity rigs (procedural neutral + transferred shapes), built on demand.

    Identity ``k`` is always ``make_identity(template, k)``, so any dataset
    can be re-rendered from its records and the template alone.
    """

    def __init__(self, template: BlendshapeRig, amplitude: float = 0.05):
        self.template = template
        self.amplitude = amplitude
        self._rigs = {}

    def build(self, identity_id: int) -> BlendshapeRig:
        neutral = make_identity(self.template, identity_id, self.amplitude)
        if neutral is self.template.neutral:
            return self.template
        return defxfer.transfer_rig(self.template, neutral)

    def prefetch(self, ids, threads: int = 1):
        todo = sorted(set(int(i) for i in ids) - set(self._rigs))
        if threads > 1 and len(todo) > 1:
            with ThreadPoolExecutor(threads) as ex:
                rigs = list(ex.map(self.build, todo))
        else:
            rigs = [self.build(i) for i in todo]
        self._rigs.update(zip(todo, rigs))
        return len(todo)

    def __getitem__(self, identity_id: int) -> BlendshapeRig:
        if identity_id not in self._rigs:
            self._rigs[identity_id] = self.build(identity_id)
        return self._rigs[identity_id]

    def __len__(self):
        return len(self._rigs)


def sample_streams(seed: int, index: int):
    """Independent generators for identity choice, expression and pose of one sample."""
    ss = np.random.SeedSequence([seed, index])
    return [np.random.default_rng(s) for s in ss.spawn(3)]


def generate_dataset(n: int, template: BlendshapeRig, prior, cam: Camera | None = None, seed: int = 0,
                     n_identities: int = 200, identity_offset: int = 0, sample_offset: int = 0,
                     threads: int = 1, cache: IdentityCache | None = None,
                     diagnostics: Diagnostics | None = None):
    """Yield ``n`` samples in index order.

    Sample ``i`` has global index ``sample_offset + i`` and draws from its own
    seed streams, picks identity ``identity_offset + j`` with
    ``j < n_identities``, samples coefficients from ``prior``, poses the face
    with Euler angles uniform in +-30 degrees and a translation in
    :data:`TRANSLATION_BOX`, and projects the 146 landmarks through ``cam``.
    """
    from .prior import sample_coefficients

    if n < 1:
        raise ValueError("n must be >= 1")
    if n_identities < 1:
        raise ValueError("n_identities must be >= 1")
    cam = cam or default_camera()
    cache = cache or IdentityCache(template)
    diag = diagnostics if diagnostics is not None else Diagnostics()
    plans = []
    for i in range(n):
        idx = sample_offset + i
        r_id, r_w, r_pose = sample_streams(seed, idx)
        plans.append((idx, identity_offset + int(r_id.integers(n_identities)), r_w, r_pose))
    diag.identities_built += cache.prefetch([p[1] for p in plans], threads)
    for idx, ident, r_w, r_pose in plans:
        rig = cache[ident]
        w = sample_coefficients(prior, r_w)
        for _ in range(MAX_POSE_RESAMPLES):
            pose = random_pose(r_pose)
            try:
                pts = render_landmarks(rig, w, pose, cam)
                break
            except BehindCameraError:
                diag.pose_resamples += 1
        else:
            raise BehindCameraError(-1, float("nan"))
        yield DataSample(idx, pts, w, pose, ident, 0)


def dataset_header(seed: int, n: int, cam: Camera, prior, template: BlendshapeRig, template_cfg=None,
                   n_identities: int = 200, identity_offset: int = 0, sample_offset: int = 0,
                   extra: dict | None = None) -> dict:
    from .io import rig_hash

    return {
        "type": "header",
        "schema_version": SCHEMA_VERSION,
        "seed": seed,
        "n": n,
        "cameras": [cam.to_dict()],
        "prior_hash": prior.hash(),
        "template_hash": rig_hash(template),
        "template_cfg": template_cfg.to_dict() if template_cfg is not None else None,
        "n_identities": n_identities,
        "identity_offset": identity_offset,
        "sample_offset": sample_offset,
        "pose": {"max_angle_deg": MAX_ANGLE_DEG, "translation_box": [list(b) for b in TRANSLATION_BOX]},
        **(extra or {}),
    }


def write_dataset(path, header: dict, samples) -> str:
    """Write header + samples as JSON lines; returns the file's sha256."""
    from .io import file_sha256, write_jsonl

    write_jsonl(path, [header, *(s.to_record() for s in samples)])
    return file_sha256(path)


def read_dataset(path):
    """``(header, [DataSample, ...])`` from a JSON-lines dataset file."""
    from .io import read_jsonl

    header, samples = None, []
    for rec in read_jsonl(path):
        if rec.get("type") == "header":
            if rec.get("schema_version") != SCHEMA_VERSION:
                raise ValueError(f"{path}: unsupported schema version {rec.get('schema_version')}")
            header = rec
        else:
            samples.append(DataSample.from_record(rec))
    if header is None:
        raise ValueError(f"{path}: missing header record")
    return header, samples


def identity_ranges_disjoint(h1: dict, h2: dict) -> bool:
    a = (h1["identity_offset"], h1["identity_offset"] + h1["n_identities"])
    b = (h2["identity_offset"], h2["identity_offset"] + h2["n_identities"])
    return a[1] <= b[0] or b[1] <= a[0]
