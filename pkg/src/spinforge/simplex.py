"""Nelder-Mead simplex minimizer shared by the pulse and fitting code.

Standard coefficients (reflection 1, expansion 2, contraction 0.5,
shrink 0.5).  Termination: spread of vertex function values below
``ftol`` or the evaluation budget exhausted.  The caller's objective is
responsible for any bound penalties.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


@dataclass
class SimplexResult:
    x: np.ndarray
    fun: float
    n_evaluations: int
    converged: bool


def _initial_simplex(x0: np.ndarray, steps: np.ndarray) -> np.ndarray:
    n = x0.size
    simplex = np.tile(x0, (n + 1, 1))
    for i in range(n):
        simplex[i + 1, i] += steps[i] if steps[i] != 0 else 1e-4
    return simplex


def nelder_mead(
    fun: Callable[[np.ndarray], float],
    x0: Sequence[float],
    steps: Sequence[float] | None = None,
    max_evaluations: int = 10000,
    ftol: float = 1e-8,
) -> SimplexResult:
    """Minimize ``fun`` starting from ``x0`` with per-axis initial steps."""
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    if steps is None:
        steps = 0.1 * np.maximum(np.abs(x0), 1.0)
    steps = np.asarray(steps, dtype=float)
    if steps.shape != x0.shape:
        raise ValueError("steps must match x0 in shape")

    evals = 0

    def f(x):
        nonlocal evals
        evals += 1
        return float(fun(x))

    simplex = _initial_simplex(x0, steps)
    fvals = np.array([f(v) for v in simplex])
    converged = False

    while evals < max_evaluations:
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]
        if fvals[-1] - fvals[0] < ftol:
            converged = True
            break

        centroid = simplex[:-1].mean(axis=0)
        # reflection
        xr = centroid + (centroid - simplex[-1])
        fr = f(xr)
        if fr < fvals[0]:
            # expansion
            xe = centroid + 2.0 * (centroid - simplex[-1])
            fe = f(xe)
            if fe < fr:
                simplex[-1], fvals[-1] = xe, fe
            else:
                simplex[-1], fvals[-1] = xr, fr
        elif fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
        else:
            # contraction (outside if the reflected point improved the worst)
            if fr < fvals[-1]:
                xc = centroid + 0.5 * (xr - centroid)
            else:
                xc = centroid + 0.5 * (simplex[-1] - centroid)
            fc = f(xc)
            if fc < min(fr, fvals[-1]):
                simplex[-1], fvals[-1] = xc, fc
            else:
                # shrink toward the best vertex
                for i in range(1, n + 1):
                    simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0])
                    fvals[i] = f(simplex[i])

    order = np.argsort(fvals, kind="stable")
    simplex, fvals = simplex[order], fvals[order]
    return SimplexResult(x=simplex[0].copy(), fun=float(fvals[0]), n_evaluations=evals, converged=converged)
