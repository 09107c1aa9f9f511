"""Offline inverse rig fitting: blendshape coefficients plus a rigid pose.

The 52 coefficients are optimized as unconstrained slack variables with a
one-sided quadratic penalty outside [0, 1], jointly with a 6D rotation and
a translation (61 parameters), then clamped to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lbfgs import lbfgs_minimize
from .mesh import (
    NUM_SHAPES,
    BehindCameraError,
    BlendshapeRig,
    Camera,
    DegenerateRotationError,
    LandmarkSet,
    RigError,
    RigidPose,
    rot6d_backward,
    rot6d_to_rotation,
)

N_PARAMS = NUM_SHAPES + 9
IDENTITY_R6 = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


REBASIS_EVERY = 20


@dataclass(frozen=True)
class FitOptions:
    lbfgs_memory: int = 10
    max_iters: int = 200
    grad_tol: float = 1e-6
    penalty_weight: float = 10.0
    target_space: str = "3d"

    def __post_init__(self):
        if self.lbfgs_memory < 1:
            raise ValueError("lbfgs_memory must be >= 1")
        if not (self.grad_tol > 0 and self.max_iters > 0 and self.penalty_weight >= 0):
            raise ValueError("tolerances and iteration caps must be positive")
        if self.target_space not in ("3d", "2d"):
            raise ValueError("target_space must be '3d' or '2d'")


@dataclass(frozen=True, eq=False)
class FitResult:
    coefficients: np.ndarray
    pose: RigidPose
    final_objective: float
    iterations: int
    converged: bool
    pre_clip_coefficients: np.ndarray
    initial_objective: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "coefficients": self.coefficients.tolist(),
            "pre_clip_coefficients": self.pre_clip_coefficients.tolist(),
            "pose": {"r6": self.pose.r6.tolist(), "t": self.pose.t.tolist()},
            "final_objective": self.final_objective,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def pack(slack, r6, t) -> np.ndarray:
    return np.concatenate([np.asarray(slack, float), np.asarray(r6, float), np.asarray(t, float)])


def unpack(params):
    params = np.asarray(params, dtype=float)
    if params.shape != (N_PARAMS,):
        raise ValueError(f"expected {N_PARAMS} parameters, got {params.shape}")
    return params[:NUM_SHAPES], params[NUM_SHAPES:NUM_SHAPES + 6], params[NUM_SHAPES + 6:]


class _Problem:
    """Landmark basis and target for repeated objective evaluation."""

    def __init__(self, rig: BlendshapeRig, target: LandmarkSet, opts: FitOptions, camera: Camera | None):
        want = 3 if opts.target_space == "3d" else 2
        if target.dim != want:
            raise RigError(f"{opts.target_space} fitting needs {want}D landmarks, got {target.dim}D")
        if len(target) != len(rig.landmark_map):
            raise RigError(f"target has {len(target)} landmarks, rig has {len(rig.landmark_map)}")
        if want == 2 and camera is None:
            raise ValueError("2d fitting needs a camera")
        self.base, deltas = rig.landmark_basis()
        self.deltas = deltas.reshape(NUM_SHAPES, -1)
        self.target = target.points
        self.lam = opts.penalty_weight
        self.camera = camera
        self.space = opts.target_space

    def landmarks(self, slack) -> np.ndarray:
        return self.base + (slack @ self.deltas).reshape(self.base.shape)

    def residuals(self, params) -> np.ndarray:
        slack, r6, t = unpack(params)
        P = self.landmarks(slack) @ rot6d_to_rotation(r6).T + t
        if self.space == "2d":
            cam = self.camera
            Pc = P @ cam.R.T + cam.t
            P = np.stack([cam.fx * Pc[:, 0] / Pc[:, 2] + cam.cx, cam.fy * Pc[:, 1] / Pc[:, 2] + cam.cy], axis=1)
        return (P - self.target).ravel()

    def jacobian(self, params, h: float = 1e-6) -> np.ndarray:
        """Central-difference Jacobian of :meth:`residuals` (residuals x 61)."""
        eye = np.eye(N_PARAMS)
        return np.stack([(self.residuals(params + h * e) - self.residuals(params - h * e)) / (2 * h)
                         for e in eye], axis=1)

    def variable_scale(self, params, cutoff: float = 1e-14) -> np.ndarray:
        """Basis ``C`` (61 x k) for ``params = x0 + C z`` with ``C^T H C = I``.

        ``H`` is the Gauss-Newton matrix at ``params`` plus the curvature of
        the slack penalties that are active there. Directions with eigenvalue
        below ``cutoff`` times the largest change nothing to first order (the
        column scales of the 6D rotation, exact blendshape null spaces) and
        are left out.
        """
        J = self.jacobian(params)
        H = J.T @ J
        slack = params[:NUM_SHAPES]
        H[np.arange(NUM_SHAPES), np.arange(NUM_SHAPES)] += 2.0 * self.lam * ((slack < 0) | (slack > 1))
        ev, V = np.linalg.eigh(H)
        keep = ev > cutoff * ev[-1]
        return V[:, keep] / np.sqrt(ev[keep])

    def __call__(self, params, strict: bool = True):
        """Objective and gradient. With ``strict=False`` infeasible trial
        points (degenerate rotation, landmarks behind the camera) give an
        infinite value so the line search backs off."""
        slack, r6, t = unpack(params)
        try:
            R = rot6d_to_rotation(r6)
        except DegenerateRotationError:
            if strict:
                raise
            return np.inf, np.zeros(N_PARAMS)
        X = self.landmarks(slack)
        P = X @ R.T + t
        if self.space == "3d":
            r = P - self.target
            gP = 2.0 * r
        else:
            cam = self.camera
            Pc = P @ cam.R.T + cam.t
            z = Pc[:, 2]
            if np.any(z <= 0):
                if strict:
                    bad = int(np.flatnonzero(z <= 0)[0])
                    raise BehindCameraError(bad, float(z[bad]))
                return np.inf, np.zeros(N_PARAMS)
            uv = np.stack([cam.fx * Pc[:, 0] / z + cam.cx, cam.fy * Pc[:, 1] / z + cam.cy], axis=1)
            r = uv - self.target
            gu, gv = 2.0 * r[:, 0], 2.0 * r[:, 1]
            gPc = np.stack([gu * cam.fx / z, gv * cam.fy / z,
                            -(gu * cam.fx * Pc[:, 0] + gv * cam.fy * Pc[:, 1]) / z ** 2], axis=1)
            gP = gPc @ cam.R
        data = float(np.sum(r * r))
        lo, hi = np.minimum(slack, 0.0), np.maximum(slack - 1.0, 0.0)
        penalty = self.lam * float(np.sum(lo * lo + hi * hi))
        g_slack = self.deltas @ (gP @ R).ravel() + 2.0 * self.lam * (lo + hi)
        g_r6 = rot6d_backward(r6, gP.T @ X)
        g_t = gP.sum(axis=0)
        return data + penalty, np.concatenate([g_slack, g_r6, g_t])

    def terms(self, params):
        slack, r6, t = unpack(params)
        lam, self.lam = self.lam, 0.0
        data, _ = self(params)
        self.lam = lam
        lo, hi = np.minimum(slack, 0.0), np.maximum(slack - 1.0, 0.0)
        return data, lam * float(np.sum(lo * lo + hi * hi))


def fit_objective(params, rig: BlendshapeRig, target: LandmarkSet, opts: FitOptions = FitOptions(),
                  camera: Camera | None = None):
    """Landmark misfit plus slack penalty, and its analytic gradient (length 61).

    Parameters are 52 slack coefficients, a 6D rotation and a translation.
    In 3D mode the posed landmarks are compared with the target directly; in
    2D mode they are first projected through ``camera`` (pixels).
    """
    return _Problem(rig, target, opts, camera)(params)


def objective_terms(params, rig, target, opts=FitOptions(), camera=None):
    """``(data_term, penalty_term)`` of :func:`fit_objective`."""
    return _Problem(rig, target, opts, camera).terms(params)


def interocular_distance(points, rig: BlendshapeRig) -> float:
    a, b = rig.landmark_map.interocular_pair
    return float(np.linalg.norm(np.asarray(points)[a] - np.asarray(points)[b]))


def initial_params(rig: BlendshapeRig, target: LandmarkSet, opts: FitOptions, init: FitResult | None = None,
                   camera: Camera | None = None):
    """Start point: warm start from ``init``, else small coefficients, no rotation
    and a translation matching the target's centroid (and, in 2D, its scale)."""
    if init is not None:
        return pack(init.pre_clip_coefficients, init.pose.r6, init.pose.t)
    slack = np.full(NUM_SHAPES, 0.1)
    base, _ = rig.landmark_basis()
    c3 = base.mean(axis=0)
    if opts.target_space == "3d":
        t = target.points.mean(axis=0) - c3
    else:
        # depth from the ratio of 3D to pixel inter-ocular distance, then
        # back-project the 2D centroid to that depth
        cam = camera
        iod2 = interocular_distance(target.points, rig)
        depth = cam.fx * interocular_distance(base, rig) / iod2
        u, v = target.points.mean(axis=0)
        pc = np.array([(u - cam.cx) * depth / cam.fx, (v - cam.cy) * depth / cam.fy, depth])
        t = cam.R.T @ (pc - cam.t) - c3
    return pack(slack, IDENTITY_R6, t)


def _align_pose(problem: _Problem, x0, opts: FitOptions, iters: int = 100):
    """Rigid-only pre-alignment with the coefficients held at their start values.

    Without it a large head rotation can be partly absorbed by the
    coefficients before the pose has settled.
    """
    pose_sl = slice(NUM_SHAPES, N_PARAMS)
    J = problem.jacobian(x0)[:, pose_sl]
    scale = 1.0 / np.sqrt(np.maximum(np.sum(J * J, axis=0), 1e-12))

    def f(z):
        x = x0.copy()
        x[pose_sl] += scale * z
        value, grad = problem(x, strict=False)
        return value, grad[pose_sl] * scale

    res = lbfgs_minimize(f, np.zeros(N_PARAMS - NUM_SHAPES), opts.lbfgs_memory, iters, opts.grad_tol)
    x = x0.copy()
    x[pose_sl] += scale * res.x
    # unit, orthogonal 6D columns keep the joint stage well conditioned
    x[NUM_SHAPES:NUM_SHAPES + 6] = RigidPose.from_matrix(rot6d_to_rotation(x[NUM_SHAPES:NUM_SHAPES + 6])).r6
    return x


def fit_frame(rig: BlendshapeRig, target: LandmarkSet, opts: FitOptions = FitOptions(),
              init: FitResult | None = None, camera: Camera | None = None) -> FitResult:
    """Recover clipped coefficients and a rigid pose for one target frame.

    ``init`` warm-starts from a previous frame's result (sequential clips).
    """
    problem = _Problem(rig, target, opts, camera)
    if interocular_distance(target.points, rig) <= 0:
        raise RigError("target inter-ocular distance is zero")
    x0 = initial_params(rig, target, opts, init, camera)
    f0, _ = problem(x0)
    if init is None:
        x0 = _align_pose(problem, x0, opts)
    # L-BFGS runs on whitened variables params = x0 + C z; the basis is
    # rebuilt every REBASIS_EVERY iterations because the penalty kinks and
    # the rotation move the curvature far from where it was measured
    x, its = x0, 0
    while True:
        C = problem.variable_scale(x)
        base = x

        def scaled(z):
            value, grad = problem(base + C @ z, strict=False)
            return value, C.T @ grad

        budget = min(REBASIS_EVERY, opts.max_iters - its)
        res = lbfgs_minimize(scaled, np.zeros(C.shape[1]), opts.lbfgs_memory, budget, opts.grad_tol)
        x, its = base + C @ res.x, its + res.iterations
        if res.converged or its >= opts.max_iters or res.iterations == 0:
            break
    slack, r6, t = unpack(x)
    return FitResult(
        coefficients=np.clip(slack, 0.0, 1.0),
        pose=RigidPose(r6, t),
        final_objective=res.f,
        iterations=its,
        converged=res.converged,
        pre_clip_coefficients=slack.copy(),
        initial_objective=float(f0),
    )


def fit_sequence(rig: BlendshapeRig, targets, opts: FitOptions = FitOptions(), camera: Camera | None = None):
    """Fit consecutive frames, warm-starting each from the previous result."""
    out, prev = [], None
    for target in targets:
        prev = fit_frame(rig, target, opts, prev, camera)
        out.append(prev)
    return out


def posed_landmarks(rig: BlendshapeRig, w, pose: RigidPose) -> np.ndarray:
    base, deltas = rig.landmark_basis()
    X = base + np.tensordot(np.asarray(w, float), deltas, axes=1)
    return X @ pose.rotation.T + pose.t
