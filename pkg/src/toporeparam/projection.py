"""Volume-constrained sigmoid: logits to densities with a prescribed mean.

``x = 1 / (1 + exp(xhat - b))`` with the scalar shift ``b`` chosen so that
``mean(x) == V0``. Densities decrease as logits increase.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit


class ProjectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProjectionResult:
    x: np.ndarray
    b: float
    converged: bool
    iterations: int
    volfrac: float


def _volume(xhat, b):
    return expit(b - xhat).mean()


def project(xhat, volfrac: float, tol: float = 1e-8, max_iter: int = 128) -> ProjectionResult:
    """Find ``b`` by bisection and return the constrained densities.

    Bisection continues past ``tol`` until the bracket stops shrinking so the
    shift is resolved to floating-point precision; ``tol`` only decides the
    ``converged`` flag.
    """
    if not 0 < volfrac < 1:
        raise ValueError(f"volume fraction must lie in (0, 1), got {volfrac}")
    xhat = np.asarray(xhat, dtype=float)
    if not np.all(np.isfinite(xhat)):
        raise ValueError("logits contain NaN or infinite values")

    lo, hi = xhat.min() - 40.0, xhat.max() + 40.0
    step = 40.0
    # the initial bracket straddles the root in exact arithmetic; widen if not
    while _volume(xhat, lo) > volfrac:
        step *= 2
        lo -= step
    while _volume(xhat, hi) < volfrac:
        step *= 2
        hi += step

    it = 0
    for it in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _volume(xhat, mid) < volfrac:
            lo = mid
        else:
            hi = mid
    b = 0.5 * (lo + hi)
    x = expit(b - xhat)
    converged = abs(x.mean() - volfrac) <= tol
    if not converged:
        raise ProjectionError(
            f"volume bisection did not converge after {it} iterations "
            f"(|mean - V0| = {abs(x.mean() - volfrac):.3g}); logits are likely overflow-scale"
        )
    return ProjectionResult(x=x, b=float(b), converged=True, iterations=it, volfrac=float(volfrac))


def project_backward(result: ProjectionResult, g) -> np.ndarray:
    """Vector-Jacobian product through the projection, including ``db/dxhat``.

    With ``s = x (1 - x)``: ``db/dxhat = s / sum(s)`` from the volume
    constraint, so ``J^T g = -s * g + s * (s . g) / sum(s)``.
    """
    if not result.converged:
        raise ProjectionError("cannot differentiate an unconverged projection")
    g = np.asarray(g, dtype=float)
    if g.shape != result.x.shape:
        raise ValueError(f"gradient shape {g.shape} != density shape {result.x.shape}")
    x = result.x
    s = x * (1.0 - x)
    total = s.sum()
    if total <= 0:
        raise ProjectionError("all sigmoids are saturated; the projection Jacobian is degenerate")
    return s * (np.vdot(s, g) / total - g)
