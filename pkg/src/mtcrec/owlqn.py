"""Orthant-Wise Limited-memory Quasi-Newton minimiser.

Minimises F(x) = smooth(x) + sum_j c_j |x_j| for per-coordinate nonnegative
L1 weights c_j. The orthant machinery (pseudo-gradient, direction
alignment, trial-point projection) is applied only to coordinates with
c_j > 0, so with all weights zero the method reduces exactly to L-BFGS
with Armijo backtracking.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class OwlqnConfig:
    memory: int = 10
    max_iters: int = 500
    grad_tol: float = 1e-6  # on pseudo-gradient inf-norm relative to max(1, |x|_inf)
    ls_decrease: float = 1e-4
    ls_shrink: float = 0.5
    ls_max_steps: int = 50
    keep_iterates: bool = False

    def __post_init__(self):
        if self.memory < 1:
            raise ValueError("memory must be >= 1")
        if self.grad_tol <= 0 or self.ls_decrease <= 0 or not 0 < self.ls_shrink < 1:
            raise ValueError("tolerances must be positive and shrink in (0, 1)")


@dataclass
class OwlqnReport:
    x: np.ndarray
    objective: float
    iterations: int
    reason: str  # converged | max_iters | line_search_failure
    trace: list[float] = field(default_factory=list)
    iterates: list[np.ndarray] = field(default_factory=list)


def _pseudo_gradient(grad: np.ndarray, x: np.ndarray, c: np.ndarray, penalized: np.ndarray) -> np.ndarray:
    pg = grad.copy()
    pos = penalized & (x > 0)
    neg = penalized & (x < 0)
    zero = penalized & (x == 0)
    pg[pos] += c[pos]
    pg[neg] -= c[neg]
    right = grad[zero] + c[zero]
    left = grad[zero] - c[zero]
    pg[zero] = np.where(right < 0, right, np.where(left > 0, left, 0.0))
    return pg


def _two_loop(pg: np.ndarray, s_hist: list[np.ndarray], y_hist: list[np.ndarray]) -> np.ndarray:
    """L-BFGS two-loop recursion; returns the quasi-Newton descent direction."""
    d = -pg.copy()
    if not s_hist:
        return d
    alphas = []
    rhos = [1.0 / float(y @ s) for s, y in zip(s_hist, y_hist)]
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rhos)):
        a = rho * float(s @ d)
        alphas.append(a)
        d -= a * y
    s, y = s_hist[-1], y_hist[-1]
    d *= float(s @ y) / float(y @ y)
    for (s, y, rho), a in zip(zip(s_hist, y_hist, rhos), reversed(alphas)):
        b = rho * float(y @ d)
        d += (a - b) * s
    return d


def minimize(
    objective: Callable[[np.ndarray], tuple[float, np.ndarray]],
    l1_weights: np.ndarray,
    x0: np.ndarray,
    cfg: OwlqnConfig | None = None,
) -> OwlqnReport:
    """Minimise objective(x)[0] + sum_j l1_weights[j] * |x_j|.

    ``objective`` returns the smooth value and its gradient. Coordinates
    with a positive L1 weight may come out exactly zero. On line-search
    failure the best accepted iterate is returned.
    """
    cfg = cfg or OwlqnConfig()
    c = np.asarray(l1_weights, dtype=np.float64)
    x = np.asarray(x0, dtype=np.float64).copy()
    if c.shape != x.shape:
        raise ValueError("l1_weights and x0 must have the same length")
    if np.any(c < 0):
        raise ValueError("l1_weights must be nonnegative")
    penalized = c > 0

    val, grad = objective(x)
    if not (np.isfinite(val) and np.isfinite(grad).all()):
        raise ValueError("objective or gradient non-finite at the initial point")
    full = val + float(c @ np.abs(x))
    trace = [full]
    iterates = [x.copy()] if cfg.keep_iterates else []

    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    reason = "max_iters"
    iters = 0

    for it in range(cfg.max_iters):
        pg = _pseudo_gradient(grad, x, c, penalized)
        if np.max(np.abs(pg), initial=0.0) <= cfg.grad_tol * max(1.0, np.max(np.abs(x), initial=0.0)):
            reason = "converged"
            break

        d = _two_loop(pg, s_hist, y_hist)
        # keep the direction in the descent orthant for penalized coordinates
        d[penalized & (d * -pg <= 0)] = 0.0
        if not np.any(d):
            reason = "line_search_failure"
            break
        # orthant of the expected sign pattern
        xi = np.sign(x)
        at_zero = penalized & (xi == 0)
        xi[at_zero] = np.sign(-pg[at_zero])

        alpha = 1.0 if s_hist else 1.0 / np.linalg.norm(d)
        accepted = False
        for _ in range(cfg.ls_max_steps):
            xt = x + alpha * d
            flip = penalized & (xt * xi < 0)
            xt[flip] = 0.0
            step = xt - x
            dg = float(pg @ step)
            vt, gt = objective(xt)
            ft = vt + float(c @ np.abs(xt))
            if np.isfinite(ft) and ft <= full + cfg.ls_decrease * dg:
                accepted = True
                break
            alpha *= cfg.ls_shrink
        if not accepted:
            reason = "line_search_failure"
            break

        s = xt - x
        y = gt - grad
        sy = float(s @ y)
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            s_hist.append(s)
            y_hist.append(y)
            if len(s_hist) > cfg.memory:
                s_hist.pop(0)
                y_hist.pop(0)

        x, val, grad, full = xt, vt, gt, ft
        trace.append(full)
        if cfg.keep_iterates:
            iterates.append(x.copy())
        iters = it + 1

    return OwlqnReport(x=x, objective=full, iterations=iters, reason=reason, trace=trace, iterates=iterates)
