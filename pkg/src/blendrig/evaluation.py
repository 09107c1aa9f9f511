"""Landmark error metrics and the holdout evaluation harness.

MNE (mean normalized error) is the mean landmark distance divided by the
ground-truth inter-ocular distance, in percent.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from itertools import combinations

import numpy as np

from .mesh import NUM_SHAPES, BehindCameraError, BlendshapeRig, LandmarkMap, LandmarkSet, RigidPose

REPORT_REGIONS = ("lips", "eyes")


def _points(x) -> np.ndarray:
    return np.asarray(x.points if isinstance(x, LandmarkSet) else x, dtype=float)


def mne(pred, gt, lmap: LandmarkMap) -> float:
    """MNE in percent; ``pred`` and ``gt`` are LandmarkSets or (N, d) arrays."""
    return float(np.mean(_per_landmark(pred, gt, lmap)))


def _per_landmark(pred, gt, lmap: LandmarkMap) -> np.ndarray:
    p, g = _points(pred), _points(gt)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    if len(g) != len(lmap):
        raise ValueError(f"{len(g)} landmarks, map has {len(lmap)}")
    a, b = lmap.interocular_pair
    iod = np.linalg.norm(g[a] - g[b])
    if not iod > 0:
        raise ValueError("ground-truth inter-ocular distance is zero")
    return 100.0 * np.linalg.norm(p - g, axis=1) / iod


def region_mne(pred, gt, lmap: LandmarkMap, region: str) -> float:
    """MNE over landmarks tagged ``region``; still normalized by the full inter-ocular distance."""
    mask = lmap.region_mask(region)
    if not mask.any():
        raise ValueError(f"region {region!r} has no landmarks")
    return float(np.mean(_per_landmark(pred, gt, lmap)[mask]))


@dataclass
class MneReport:
    """Summary of per-sample MNEs (all in percent)."""

    overall: float
    regions: dict
    region_average: float
    median: float
    p95: float
    count: int
    per_sample: list = field(default_factory=list, repr=False)

    def to_dict(self, with_samples: bool = False) -> dict:
        d = asdict(self)
        if not with_samples:
            d.pop("per_sample")
        return d


def summarize(per_sample_errors: np.ndarray, lmap: LandmarkMap, regions=REPORT_REGIONS) -> MneReport:
    """Aggregate a (S, 146) array of per-landmark errors into a report.

    ``overall`` is the landmark-weighted mean; ``region_average`` is the plain
    mean of the listed region values.
    """
    E = np.asarray(per_sample_errors, dtype=float)
    if E.ndim != 2 or len(E) == 0:
        raise ValueError("no samples to summarize")
    per = E.mean(axis=1)
    reg = {r: float(E[:, lmap.region_mask(r)].mean()) for r in regions}
    return MneReport(
        overall=float(per.mean()),
        regions=reg,
        region_average=float(np.mean(list(reg.values()))),
        median=float(np.median(per)),
        p95=float(np.percentile(per, 95)),
        count=len(per),
        per_sample=per.tolist(),
    )


def pairwise_blendshape_diff(rig: BlendshapeRig, regions=REPORT_REGIONS) -> dict:
    """MNE between fully activated blendshape pairs on ``rig``'s landmarks.

    Normalized by the neutral's inter-ocular distance so the matrix is
    symmetric. Returns the (52, 52) matrix (zero diagonal), the mean over
    unordered pairs i < j, and the same per region.
    """
    base, deltas = rig.landmark_basis()
    L = base[None] + deltas  # (52, 146, 3)
    a, b = rig.landmark_map.interocular_pair
    iod = np.linalg.norm(base[a] - base[b])
    D = 100.0 * np.linalg.norm(L[:, None] - L[None], axis=-1) / iod  # (52, 52, 146)
    iu = np.triu_indices(len(L), 1)
    out = {
        "matrix": D.mean(axis=-1),
        "mean": float(D.mean(axis=-1)[iu].mean()),
        "regions": {},
        "names": list(rig.names),
    }
    for r in regions:
        m = rig.landmark_map.region_mask(r)
        out["regions"][r] = float(D[..., m].mean(axis=-1)[iu].mean())
    return out


def constant_baseline(train_coefficients) -> np.ndarray:
    """Mean training coefficient vector, used as a no-information predictor."""
    w = np.asarray(train_coefficients, dtype=float)
    if w.ndim != 2 or w.shape[1] != NUM_SHAPES or len(w) == 0:
        raise ValueError("need a non-empty (S, 52) coefficient array")
    return w.mean(axis=0)


def _posed_error(rig, w, pose, cam, gt, lmap):
    from .synth import render_landmarks

    try:
        pred = render_landmarks(rig, w, pose, cam)
    except BehindCameraError:
        return np.full(len(gt), np.inf)
    return _per_landmark(pred, gt, lmap)


def evaluate_model(params, mixer_cfg, samples, cache, cameras, baseline_w=None,
                   fit_opts=None, with_fitter: bool = True, progress=None) -> dict:
    """Model, constant-baseline and offline-fitter MNE rows on holdout ``samples``.

    Model row: the mixer's coefficients and decoded rotation, with the
    sample's ground-truth translation, posed on the sample identity's rig
    and projected with the sample's camera. Baseline row: the same but with
    ``baseline_w`` in place of the predicted coefficients. Fitter row:
    2D fit of the identity rig to the ground-truth landmarks.
    """
    from .fitter import FitOptions, fit_frame
    from .mixer import check_params, forward, normalize_landmarks

    samples = list(samples)
    if not samples:
        raise ValueError("empty holdout")
    check_params(params, mixer_cfg)
    lmap = cache.template.landmark_map
    X = normalize_landmarks(np.stack([s.landmarks2d for s in samples]), lmap.interocular_pair)
    W, R6 = forward(params, X, mixer_cfg)
    W, R6 = np.asarray(W, dtype=float), np.asarray(R6, dtype=float)
    rows = {"model": [], "baseline": [], "fitter": []}
    fit_opts = fit_opts or FitOptions(target_space="2d")
    for k, s in enumerate(samples):
        rig, cam = cache[s.identity_id], cameras[s.camera_id]
        pose = RigidPose(R6[k], s.pose.t)
        rows["model"].append(_posed_error(rig, W[k], pose, cam, s.landmarks2d, lmap))
        if baseline_w is not None:
            rows["baseline"].append(_posed_error(rig, baseline_w, pose, cam, s.landmarks2d, lmap))
        if with_fitter:
            fit = fit_frame(rig, LandmarkSet(s.landmarks2d), fit_opts, camera=cam)
            rows["fitter"].append(_posed_error(rig, fit.coefficients, fit.pose, cam, s.landmarks2d, lmap))
        if progress:
            progress(k + 1, len(samples))
    return {name: summarize(np.stack(errs), lmap) for name, errs in rows.items() if errs}, W


def format_table(reports: dict) -> str:
    """Plain-text table: one row per method, columns lips / eyes / average."""
    head = f"{'method':<12}{'lips':>9}{'eyes':>9}{'avg(reg)':>10}{'avg(lmk)':>10}{'median':>9}{'p95':>9}{'n':>6}"
    lines = [head, "-" * len(head)]
    for name, r in reports.items():
        lines.append(f"{name:<12}{r.regions.get('lips', float('nan')):>9.3f}{r.regions.get('eyes', float('nan')):>9.3f}"
                     f"{r.region_average:>10.3f}{r.overall:>10.3f}{r.median:>9.3f}{r.p95:>9.3f}{r.count:>6d}")
    return "\n".join(lines)


def report_json(reports: dict, meta: dict | None = None) -> str:
    body = {"meta": meta or {}, "rows": {k: v.to_dict() for k, v in reports.items()}}
    return json.dumps(body, sort_keys=True, indent=2)
