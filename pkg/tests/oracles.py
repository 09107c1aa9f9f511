"""Independent reference computations used as test oracles.

Each one takes a different route from the library code: scalar loops
instead of vectorized numpy, Rodrigues' formula instead of Euler products,
finite differences instead of analytic gradients.
"""

import math

import numpy as np


def expression_loop(neutral, shapes, w):
    """Blendshape combination vertex by vertex, coordinate by coordinate."""
    out = [[float(c) for c in v] for v in neutral]
    for i, wi in enumerate(w):
        for k, (v0, vi) in enumerate(zip(neutral, shapes[i])):
            for c in range(3):
                out[k][c] += wi * (vi[c] - v0[c])
    return np.array(out)


def mne_loop(pred, gt, pair):
    a, b = pair
    iod = math.sqrt(sum((gt[a][c] - gt[b][c]) ** 2 for c in range(len(gt[a]))))
    total = 0.0
    for p, g in zip(pred, gt):
        total += math.sqrt(sum((pc - gc) ** 2 for pc, gc in zip(p, g)))
    return 100.0 * total / len(gt) / iod


def rodrigues(axis, angle):
    k = np.asarray(axis, float)
    k = k / np.linalg.norm(k)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * K @ K


def central_diff(f, x, h):
    """Central finite-difference gradient of scalar ``f`` at ``x``."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_err(a, n, floor=1e-6):
    a, n = np.asarray(a, float), np.asarray(n, float)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
