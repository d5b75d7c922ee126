"""L-BFGS with a strong-Wolfe line search, and the Optimality Criteria update."""

from __future__ import annotations

import logging
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

logger = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


class LineSearchError(RuntimeError):
    pass


@dataclass
class IterationRecord:
    iteration: int
    loss: float
    grad_norm: float
    elapsed: float


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    nit: int
    nfev: int
    message: str
    history: list[IterationRecord] = field(default_factory=list)


def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimizer of the cubic interpolating (a, fa, ga) and (b, fb, gb), or None."""
    d1 = ga + gb - 3 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0:
        return None
    d2 = np.sign(b - a) * np.sqrt(disc)
    t = b - (b - a) * (gb + d2 - d1) / (gb - ga + 2 * d2)
    return t if np.isfinite(t) else None


def strong_wolfe(phi, f0, g0, alpha=1.0, c1=1e-4, c2=0.9, max_evals=25, alpha_max=1e10):
    """Step length satisfying the strong Wolfe conditions.

    ``phi(a)`` returns ``(f, dphi, payload)`` along the search direction;
    ``payload`` is handed back with the accepted step. Raises LineSearchError
    when no acceptable step is found within ``max_evals`` evaluations.
    """
    if g0 >= 0:
        raise LineSearchError("not a descent direction")
    evals = 0
    a_prev, f_prev, g_prev = 0.0, f0, g0

    def zoom(lo, f_lo, g_lo, hi, f_hi, g_hi):
        nonlocal evals
        while evals < max_evals:
            a = _cubic_min(lo, f_lo, g_lo, hi, f_hi, g_hi)
            left, right = min(lo, hi), max(lo, hi)
            margin = 0.1 * (right - left)
            if a is None or not left + margin <= a <= right - margin:
                a = 0.5 * (lo + hi)
            f, g, payload = phi(a)
            evals += 1
            if not np.isfinite(f) or f > f0 + c1 * a * g0 or f >= f_lo:
                hi, f_hi, g_hi = a, f, g
            else:
                if abs(g) <= -c2 * g0:
                    return a, f, payload
                if g * (hi - lo) >= 0:
                    hi, f_hi, g_hi = lo, f_lo, g_lo
                lo, f_lo, g_lo = a, f, g
            if abs(hi - lo) < 1e-16 * max(1.0, abs(lo)):
                break
        raise LineSearchError("zoom phase failed to find a strong Wolfe step")

    while evals < max_evals:
        f, g, payload = phi(alpha)
        evals += 1
        if not np.isfinite(f) or f > f0 + c1 * alpha * g0 or (evals > 1 and f >= f_prev):
            return zoom(a_prev, f_prev, g_prev, alpha, f, g)
        if abs(g) <= -c2 * g0:
            return alpha, f, payload
        if g >= 0:
            return zoom(alpha, f, g, a_prev, f_prev, g_prev)
        a_prev, f_prev, g_prev = alpha, f, g
        alpha = min(2.0 * alpha, alpha_max)
    raise LineSearchError("bracketing phase exhausted its evaluation budget")


def _backtrack(fun, x, f, g, direction, c1=1e-4, shrink=0.5, max_evals=30):
    slope = float(g @ direction)
    alpha = 1.0
    for _ in range(max_evals):
        xn = x + alpha * direction
        fn, gn = fun(xn)
        if np.isfinite(fn) and fn <= f + c1 * alpha * slope:
            return xn, fn, gn
        alpha *= shrink
    raise LineSearchError("backtracking failed")


def two_loop_direction(g, pairs):
    """``-H g`` for the L-BFGS inverse Hessian built from ``(s, y, rho)`` pairs."""
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if pairs:
        s, y, _ = pairs[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def lbfgs_minimize(
    fun: Objective,
    x0: np.ndarray,
    max_iter: int = 200,
    memory: int = 10,
    gtol: float = 1e-10,
    ftol: float = 0.0,
    c1: float = 1e-4,
    c2: float = 0.9,
    callback: Callable[[int, np.ndarray, float, np.ndarray], None] | None = None,
) -> OptimizeResult:
    """Minimize ``fun`` (returning loss and gradient) from ``x0``.

    Returns the lowest-loss iterate seen. ``callback(it, x, f, g)`` is called
    for the initial point (``it == 0``) and after every accepted step.
    """
    start = time.perf_counter()
    x = np.array(x0, dtype=float)
    nfev = 0

    def evaluate(z):
        nonlocal nfev
        nfev += 1
        fz, gz = fun(z)
        return float(fz), np.asarray(gz, dtype=float)

    f, g = evaluate(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise ValueError("objective is not finite at the initial point")
    history = [IterationRecord(0, f, float(np.linalg.norm(g)), time.perf_counter() - start)]
    if callback:
        callback(0, x, f, g)
    best_x, best_f = x.copy(), f
    pairs: deque = deque(maxlen=memory)
    message = "maximum iterations reached"
    it = 0
    failed_last = False
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) <= gtol:
            message = "gradient tolerance reached"
            it -= 1
            break
        direction = two_loop_direction(g, list(pairs))
        slope = float(g @ direction)
        if not slope < 0:
            pairs.clear()
            direction, slope = -g, -float(g @ g)
        alpha0 = 1.0 if pairs else min(1.0, 1.0 / np.linalg.norm(g))

        def phi(a, direction=direction):
            z = x + a * direction
            fz, gz = evaluate(z)
            return fz, float(gz @ direction), (z, gz)

        try:
            _, f_new, (x_new, g_new) = strong_wolfe(phi, f, slope, alpha0, c1=c1, c2=c2)
            failed_last = False
        except LineSearchError as exc:
            if failed_last:
                message = "line search failed twice in a row"
                it -= 1
                break
            logger.debug("line search failed at iteration %d (%s); trying steepest descent", it, exc)
            failed_last = True
            pairs.clear()
            try:
                x_new, f_new, g_new = _backtrack(evaluate, x, f, g, -g * min(1.0, 1.0 / np.linalg.norm(g)))
            except LineSearchError:
                message = "line search failed"
                it -= 1
                break
        s, y = x_new - x, g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            pairs.append((s, y, 1.0 / sy))
        f_old = f
        x, f, g = x_new, f_new, g_new
        history.append(IterationRecord(it, f, float(np.linalg.norm(g)), time.perf_counter() - start))
        if callback:
            callback(it, x, f, g)
        if f < best_f:
            best_x, best_f = x.copy(), f
        if ftol > 0 and abs(f_old - f) <= ftol * max(abs(f_old), abs(f), 1.0):
            message = "function tolerance reached"
            break
    return OptimizeResult(best_x, best_f, it, nfev, message, history)


# --- optimality criteria ---------------------------------------------------


@dataclass
class OcState:
    x: np.ndarray
    move: float = 0.2
    eta: float = 0.5
    lagrange: float = float("nan")
    change: float = float("nan")


def oc_step(state: OcState, gradient: np.ndarray, volfrac: float, tol: float = 1e-10) -> OcState:
    """One OC update with the Lagrange multiplier found by bisection.

    ``x_new = clip(x * (-gradient / lam) ** eta)`` within the move limit and
    [0, 1], with ``lam`` chosen so that ``mean(x_new) == volfrac``.
    """
    x = np.asarray(state.x, dtype=float)
    dc = np.asarray(gradient, dtype=float)
    if dc.shape != x.shape:
        raise ValueError(f"gradient shape {dc.shape} != design shape {x.shape}")
    if np.any(dc > 0):
        raise ValueError("OC requires nonpositive compliance sensitivities")
    lower = np.maximum(0.0, x - state.move)
    upper = np.minimum(1.0, x + state.move)
    if not lower.mean() - tol <= volfrac <= upper.mean() + tol:
        raise ValueError(f"volume fraction {volfrac} unreachable within the move limit")
    ratio = x * (-dc) ** state.eta

    def update(lam):
        return np.clip(ratio / lam**state.eta, lower, upper)

    # mean(update(lam)) is non-increasing in lam; bisect in log space
    lo, hi = 1e-40, 1e40
    lam = np.sqrt(lo * hi)
    for _ in range(400):
        lam = np.sqrt(lo * hi)
        vol = update(lam).mean()
        if abs(vol - volfrac) <= tol:
            break
        if vol > volfrac:
            lo = lam
        else:
            hi = lam
        if hi / lo - 1 < 1e-15:
            break
    x_new = update(lam)
    if abs(x_new.mean() - volfrac) > 1e-6:
        raise RuntimeError("OC multiplier bisection did not converge; check the sensitivity signs")
    return OcState(x_new, state.move, state.eta, float(lam), float(np.max(np.abs(x_new - x))))


def oc_minimize(
    problem: Objective,
    x0: np.ndarray,
    volfrac: float,
    max_iter: int = 100,
    move: float = 0.2,
    eta: float = 0.5,
    change_tol: float = 0.0,
    callback: Callable[[int, np.ndarray, float, np.ndarray], None] | None = None,
) -> OptimizeResult:
    """Run OC from ``x0``; the returned design is the lowest-compliance iterate.

    ``max_iter`` counts design updates, so ``max_iter + 1`` designs are
    evaluated (the last one without a further update).
    """
    start = time.perf_counter()
    state = OcState(np.array(x0, dtype=float), move, eta)
    history = []
    best_x, best_f = None, np.inf
    message = "maximum iterations reached"
    it = 0
    for it in range(max_iter + 1):
        c, dc = problem(state.x)
        history.append(IterationRecord(it, float(c), float(np.linalg.norm(dc)), time.perf_counter() - start))
        if callback:
            callback(it, state.x, c, dc)
        if c < best_f:
            best_x, best_f = state.x.copy(), float(c)
        if it == max_iter:
            break
        if change_tol > 0 and it > 0 and state.change < change_tol:
            message = "design change below tolerance"
            break
        state = oc_step(state, dc, volfrac)
    return OptimizeResult(best_x, best_f, it, len(history), message, history)
