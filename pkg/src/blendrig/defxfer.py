"""Affine deformation transfer between meshes that share one topology.

Each triangle gets a deformation gradient built from its two edges and a
normal-derived fourth vertex. A target shape is recovered by matching those
gradients in least squares; the fourth vertices are extra unknowns so the
problem stays linear. The x, y and z coordinates decouple, so one sparse
system is shared by every coordinate and every blendshape of a rig and the
normal equations are solved for all right-hand sides at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import BlendshapeRig, Mesh, RigError

AREA_EPS = 1e-12


class DegenerateTriangleError(RigError):
    def __init__(self, face: int, area: float):
        super().__init__(f"face {face} is degenerate (area={area:.3g})")
        self.face = face
        self.area = area


class CGConvergenceError(RuntimeError):
    def __init__(self, iterations: int, residual: float, shape: str | None = None):
        where = f" for shape {shape!r}" if shape else ""
        super().__init__(
            f"conjugate gradient did not converge{where} after {iterations} iterations "
            f"(relative residual {residual:.3e})"
        )
        self.iterations = iterations
        self.residual = residual
        self.shape = shape


def _frames(vertices: np.ndarray, faces: np.ndarray, check: bool = True) -> np.ndarray:
    """(F, 3, 3) edge frames with columns e1, e2 and the scaled normal."""
    v1, v2, v3 = (vertices[faces[:, k]] for k in range(3))
    e1, e2 = v2 - v1, v3 - v1
    c = np.cross(e1, e2)
    cn = np.linalg.norm(c, axis=1)
    if check:
        bad = np.flatnonzero(0.5 * cn <= AREA_EPS)
        if bad.size:
            raise DegenerateTriangleError(int(bad[0]), float(0.5 * cn[bad[0]]))
    e3 = c / np.sqrt(np.maximum(cn, np.finfo(float).tiny))[:, None]
    return np.stack([e1, e2, e3], axis=2)


def triangle_gradient(rest_tri, deformed_tri) -> np.ndarray:
    """Affine map (3x3) carrying the rest triangle's frame onto the deformed one."""
    rest = np.asarray(rest_tri, dtype=float).reshape(1, 3, 3)
    deformed = np.asarray(deformed_tri, dtype=float).reshape(1, 3, 3)
    f = np.array([[0, 1, 2]])
    D_rest = _frames(rest[0], f)[0]
    D_def = _frames(deformed[0], f, check=False)[0]
    return D_def @ np.linalg.inv(D_rest)


def face_gradients(rest: Mesh, deformed: Mesh) -> np.ndarray:
    """Per-face deformation gradients, shape (F, 3, 3)."""
    D_rest = _frames(rest.vertices, rest.faces)
    D_def = _frames(deformed.vertices, deformed.faces, check=False)
    return D_def @ np.linalg.inv(D_rest)


def conjugate_gradient(matvec, b, x0=None, precond=None, tol=1e-8, maxiter=5000):
    """Preconditioned CG for SPD systems, one independent solve per column of ``b``.

    Stops when every column reaches ``||b - Ax|| <= tol * ||b||``. Returns
    ``(x, info)`` with ``info`` holding iterations, per-column relative
    residuals and a ``converged`` flag.
    """
    b = np.asarray(b, dtype=float)
    vec = b.ndim == 1
    if vec:
        b = b[:, None]
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float).reshape(b.shape)
    precond = precond if precond is not None else (lambda r: r)
    bnorm = np.linalg.norm(b, axis=0)
    bnorm[bnorm == 0] = 1.0
    r = b - matvec(x)
    z = precond(r)
    p = z.copy()
    rz = np.sum(r * z, axis=0)
    rel = np.linalg.norm(r, axis=0) / bnorm
    it = 0
    while it < maxiter and np.any(rel > tol):
        active = rel > tol
        Ap = matvec(p)
        pAp = np.sum(p * Ap, axis=0)
        alpha = np.where(active & (pAp > 0), rz / np.where(pAp > 0, pAp, 1.0), 0.0)
        x += alpha * p
        r -= alpha * Ap
        z = precond(r)
        rz_new = np.sum(r * z, axis=0)
        beta = np.where(active, rz_new / np.where(rz != 0, rz, 1.0), 0.0)
        p = z + beta * p
        rz = rz_new
        rel = np.linalg.norm(r, axis=0) / bnorm
        it += 1
    info = {"iterations": it, "residual": rel, "converged": bool(np.all(rel <= tol))}
    return (x[:, 0] if vec else x), info


@dataclass(frozen=True, eq=False)
class TransferSystem:
    """Gradient-matching operator for one target neutral mesh, vertex 0 anchored.

    Unknowns are vertices 1..n-1 followed by one auxiliary fourth vertex per
    face. Row ``3 f + l`` of ``A`` produces column ``l`` of face ``f``'s
    deformation gradient for any single coordinate.
    """

    A: sp.csr_matrix
    anchor_col: np.ndarray
    anchor: np.ndarray
    target_frames: np.ndarray
    n_vertices: int

    @property
    def n_faces(self) -> int:
        return len(self.target_frames)

    def normal_matvec(self, x):
        return self.A.T @ (self.A @ x)

    def jacobi(self):
        d = np.asarray(self.A.multiply(self.A).sum(axis=0)).ravel()
        inv = 1.0 / np.where(d > 0, d, 1.0)
        return lambda r: r * inv[:, None]

    def rhs(self, gradients: np.ndarray) -> np.ndarray:
        """Least-squares targets (3F, 3) with the anchored column moved across."""
        B = np.transpose(gradients, (0, 2, 1)).reshape(-1, 3)
        return B - np.outer(self.anchor_col, self.anchor)

    def unpack(self, x: np.ndarray) -> np.ndarray:
        return np.vstack([self.anchor[None, :], x[: self.n_vertices - 1]])


def build_system(tgt_neutral: Mesh) -> TransferSystem:
    v, faces = tgt_neutral.vertices, tgt_neutral.faces
    n, F = len(v), len(faces)
    D = _frames(v, faces)
    Q = np.linalg.inv(D)
    # columns: vertex j, vertex k, aux vertex; vertex i gets minus their sum
    cols = np.stack([faces[:, 1], faces[:, 2], n + np.arange(F), faces[:, 0]], axis=1)
    coef = np.concatenate([Q, -Q.sum(axis=1, keepdims=True)], axis=1)  # (F, 4, 3)
    rows = 3 * np.arange(F)[:, None, None] + np.arange(3)[None, None, :]
    rows = np.broadcast_to(rows, coef.shape)
    cols = np.broadcast_to(cols[:, :, None], coef.shape)
    A = sp.csr_matrix((coef.ravel(), (rows.ravel(), cols.ravel())), shape=(3 * F, n + F))
    anchor_col = A[:, 0].toarray().ravel()
    A = A[:, 1:].tocsr()
    return TransferSystem(A, anchor_col, v[0].copy(), D, n)


def transferred_gradients(src_neutral: Mesh, src_shape: Mesh, system: TransferSystem) -> np.ndarray:
    """Source deformation gradients re-expressed in the target's rest frames.

    Each source gradient is conjugated by the affine map taking the source
    rest triangle onto the target rest triangle. When the two neutrals agree
    this is the plain source gradient; for a rotated or scaled target the
    transferred deltas rotate and scale with it.
    """
    Ds = _frames(src_neutral.vertices, src_neutral.faces)
    Ds_def = _frames(src_shape.vertices, src_shape.faces, check=False)
    Dt = system.target_frames
    local = np.linalg.solve(Ds, Ds_def)
    return Dt @ local @ np.linalg.inv(Dt)


def _initial_guess(system: TransferSystem, src_neutral: Mesh, src_shapes, tgt_neutral: Mesh):
    x0 = []
    for s in src_shapes:
        guess = tgt_neutral.vertices + (s.vertices - src_neutral.vertices)
        D = _frames(guess, tgt_neutral.faces, check=False)
        aux = guess[tgt_neutral.faces[:, 0]] + D[:, :, 2]
        x0.append(np.vstack([guess[1:], aux]))
    return np.concatenate(x0, axis=1)


def _check_topology(*meshes: Mesh):
    ref = meshes[0]
    for m in meshes[1:]:
        if not ref.same_topology(m):
            raise RigError("meshes do not share a topology")


def transfer_shapes(src_neutral: Mesh, src_shapes, tgt_neutral: Mesh, tol: float = 1e-8,
                    maxiter: int = 5000, names=None, return_info: bool = False):
    """Transfer several source shapes onto ``tgt_neutral`` in one batched solve."""
    src_shapes = list(src_shapes)
    _check_topology(src_neutral, tgt_neutral, *src_shapes)
    system = build_system(tgt_neutral)
    B = np.concatenate(
        [system.rhs(transferred_gradients(src_neutral, s, system)) for s in src_shapes], axis=1
    )
    rhs = system.A.T @ B
    x0 = _initial_guess(system, src_neutral, src_shapes, tgt_neutral)
    x, info = conjugate_gradient(system.normal_matvec, rhs, x0, system.jacobi(), tol, maxiter)
    if not info["converged"]:
        worst = int(np.argmax(info["residual"]))
        shape = names[worst // 3] if names is not None else None
        raise CGConvergenceError(info["iterations"], float(info["residual"][worst]), shape)
    out = [tgt_neutral.with_vertices(system.unpack(x[:, 3 * k: 3 * k + 3])) for k in range(len(src_shapes))]
    return (out, info) if return_info else out


def transfer_blendshape(src_neutral: Mesh, src_shape: Mesh, tgt_neutral: Mesh,
                        tol: float = 1e-8, maxiter: int = 5000) -> Mesh:
    """Retarget one blendshape; vertex 0 stays at the target neutral's vertex 0."""
    return transfer_shapes(src_neutral, [src_shape], tgt_neutral, tol, maxiter)[0]


def transfer_rig(template: BlendshapeRig, tgt_neutral: Mesh, tol: float = 1e-8,
                 maxiter: int = 5000) -> BlendshapeRig:
    """Identity-specific rig: all 52 template shapes transferred onto ``tgt_neutral``."""
    if not template.neutral.same_topology(tgt_neutral):
        raise RigError("target neutral does not share the template topology")
    shapes = transfer_shapes(template.neutral, template.shapes, tgt_neutral, tol, maxiter,
                             names=template.names)
    return BlendshapeRig(tgt_neutral, shapes, template.names, template.landmark_map)


def dense_transfer(src_neutral: Mesh, src_shape: Mesh, tgt_neutral: Mesh) -> Mesh:
    """Direct dense least-squares solve of the same anchored problem (small meshes)."""
    system = build_system(tgt_neutral)
    B = system.rhs(transferred_gradients(src_neutral, src_shape, system))
    x, *_ = np.linalg.lstsq(system.A.toarray(), B, rcond=None)
    return tgt_neutral.with_vertices(system.unpack(x))


def gradient_objective(src_neutral: Mesh, src_shape: Mesh, tgt_neutral: Mesh, tgt_shape: Mesh) -> float:
    """Sum over faces of squared Frobenius mismatch, fourth vertices at their optimum."""
    system = build_system(tgt_neutral)
    B = system.rhs(transferred_gradients(src_neutral, src_shape, system))
    n = system.n_vertices
    A = system.A.tocsc()
    Av, Aa = A[:, : n - 1], A[:, n - 1:]
    r0 = B - Av @ tgt_shape.vertices[1:] - np.outer(system.anchor_col, tgt_shape.vertices[0] - system.anchor)
    aux, *_ = np.linalg.lstsq(Aa.toarray(), r0, rcond=None)
    return float(np.sum((r0 - Aa @ aux) ** 2))
