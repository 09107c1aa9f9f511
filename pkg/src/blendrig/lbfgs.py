"""Limited-memory BFGS with an Armijo backtracking line search."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

ARMIJO_C1 = 1e-4
SHRINK = 0.5
MAX_BACKTRACKS = 40


@dataclass
class LbfgsResult:
    x: np.ndarray
    f: float
    grad: np.ndarray
    iterations: int
    evaluations: int
    converged: bool
    message: str
    history: list = field(default_factory=list)


def two_loop(g, s_hist, y_hist):
    """Apply the inverse-Hessian estimate to ``g`` (returns H @ g)."""
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        q -= a * y
        alphas.append((rho, a))
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= (s @ y) / (y @ y)
    for (s, y), (rho, a) in zip(zip(s_hist, y_hist), reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def lbfgs_minimize(f, x0, memory: int = 10, max_iters: int = 200, grad_tol: float = 1e-6) -> LbfgsResult:
    """Minimize ``f`` where ``f(x)`` returns ``(value, gradient)``.

    Stops once the largest gradient component is below ``grad_tol`` or after
    ``max_iters`` iterations. Each accepted step satisfies the Armijo
    condition, so the objective never increases. If no acceptable step is
    found after 40 halvings the current (best) iterate is returned with
    ``converged=False``.
    """
    if memory < 1:
        raise ValueError("memory must be >= 1")
    x = np.array(x0, dtype=float)
    fx, g = f(x)
    g = np.asarray(g, dtype=float)
    if not (np.isfinite(fx) and np.all(np.isfinite(g))):
        raise ValueError("objective is not finite at the starting point")
    s_hist, y_hist = deque(maxlen=memory), deque(maxlen=memory)
    history = [float(fx)]
    evals = 1
    it = 0
    message = "max_iters reached"
    converged = False
    while True:
        if np.max(np.abs(g)) < grad_tol:
            converged, message = True, "gradient tolerance reached"
            break
        if it >= max_iters:
            break
        d = -two_loop(g, list(s_hist), list(y_hist))
        slope = g @ d
        if not slope < 0:
            s_hist.clear()
            y_hist.clear()
            d = -g
            slope = g @ d
        step = 1.0 if s_hist else min(1.0, 1.0 / np.max(np.abs(g)))
        for _ in range(MAX_BACKTRACKS + 1):
            x_new = x + step * d
            f_new, g_new = f(x_new)
            evals += 1
            if np.isfinite(f_new) and f_new <= fx + ARMIJO_C1 * step * slope:
                break
            step *= SHRINK
        else:
            message = "line search failed"
            break
        g_new = np.asarray(g_new, dtype=float)
        s, y = x_new - x, g_new - g
        if s @ y > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            s_hist.append(s)
            y_hist.append(y)
        x, fx, g = x_new, f_new, g_new
        history.append(float(fx))
        it += 1
    return LbfgsResult(x, float(fx), g, it, evals, converged, message, history)
