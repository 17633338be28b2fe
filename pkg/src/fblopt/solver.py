"""Small dense log-barrier interior-point solver with a phase-I stage.

Problems are tiny (a handful of variables), so everything is dense numpy.
Callables return ``(value, grad)`` or ``(value, grad, hess)``; when the
Hessian is missing it is built from central differences of the gradient.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InfeasibleError, NumericalError, UsageError

ARMIJO = 1e-4
SHRINK = 0.5
MAX_HALVINGS = 60
BARRIER_GROWTH = 10.0
GAP_TOL = 1e-8
CENTERING_TOL = 1e-10
MAX_NEWTON = 200
FEASIBLE_MARGIN = 1e-9


@dataclass
class SmoothProgram:
    n: int
    objective: Callable
    constraints: Sequence[Callable] = ()
    lower: Sequence[float] | None = None
    upper: Sequence[float] | None = None

    def bounds(self):
        lo = np.full(self.n, -np.inf) if self.lower is None else np.asarray(self.lower, float)
        hi = np.full(self.n, np.inf) if self.upper is None else np.asarray(self.upper, float)
        return lo, hi

    @property
    def n_inequalities(self) -> int:
        lo, hi = self.bounds()
        return len(self.constraints) + int(np.isfinite(lo).sum() + np.isfinite(hi).sum())


@dataclass
class SolveStats:
    iterations: int = 0
    stages: int = 0
    slack: float = 0.0
    grad_norm: float = 0.0
    wall_time: float = 0.0
    stage_objectives: list = field(default_factory=list)
    barrier_t: float = 0.0


def _second_order(fn, x):
    out = fn(x)
    if len(out) == 3:
        v, g, h = out
        return float(v), np.asarray(g, float), np.asarray(h, float)
    v, g = out
    return float(v), np.asarray(g, float), _fd_hessian(fn, x)


def _fd_hessian(fn, x):
    n = x.size
    h = np.empty((n, n))
    for j in range(n):
        step = 1e-6 * (1.0 + abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += step
        xm[j] -= step
        h[:, j] = (np.asarray(fn(xp)[1], float) - np.asarray(fn(xm)[1], float)) / (2.0 * step)
    return 0.5 * (h + h.T)


def _value(fn, x):
    try:
        v = float(fn(x)[0])
    except (ValueError, ZeroDivisionError, OverflowError, ArithmeticError):
        return math.nan
    return v


class _Barrier:
    """phi(x) = t f(x) - sum log(-g_j(x)) - sum log(box slacks)."""

    def __init__(self, program: SmoothProgram):
        self.p = program
        self.lo, self.hi = program.bounds()
        self.has_lo = np.isfinite(self.lo)
        self.has_hi = np.isfinite(self.hi)

    def strictly_feasible(self, x) -> bool:
        if np.any(x[self.has_lo] <= self.lo[self.has_lo]) or np.any(x[self.has_hi] >= self.hi[self.has_hi]):
            return False
        for c in self.p.constraints:
            v = _value(c, x)
            if not (v < 0.0):
                return False
        return True

    def value(self, x, t):
        """Barrier value, or +inf outside the strict interior."""
        if np.any(x[self.has_lo] <= self.lo[self.has_lo]) or np.any(x[self.has_hi] >= self.hi[self.has_hi]):
            return math.inf
        total = 0.0
        # constraints first: the objective may be undefined outside the domain
        for c in self.p.constraints:
            v = _value(c, x)
            if not (v < 0.0):
                return math.inf
            total -= math.log(-v)
        total += t * _value(self.p.objective, x)
        if not math.isfinite(total):
            return math.inf
        total -= np.log(x[self.has_lo] - self.lo[self.has_lo]).sum()
        total -= np.log(self.hi[self.has_hi] - x[self.has_hi]).sum()
        return float(total)

    def derivatives(self, x, t):
        f, gf, hf = _second_order(self.p.objective, x)
        grad = t * gf
        hess = t * hf
        for c in self.p.constraints:
            v, g, h = _second_order(c, x)
            inv = -1.0 / v
            grad += inv * g
            hess += inv * h + inv * inv * np.outer(g, g)
        dlo = x[self.has_lo] - self.lo[self.has_lo]
        dhi = self.hi[self.has_hi] - x[self.has_hi]
        grad[self.has_lo] -= 1.0 / dlo
        grad[self.has_hi] += 1.0 / dhi
        diag = np.zeros(x.size)
        diag[self.has_lo] += 1.0 / dlo**2
        diag[self.has_hi] += 1.0 / dhi**2
        hess[np.diag_indices_from(hess)] += diag
        return f, gf, grad, hess

    def duals(self, x, t):
        """Multiplier estimates 1 / (-t g_j) for constraints and box sides."""
        lam = [1.0 / (-t * _value(c, x)) for c in self.p.constraints]
        return np.asarray(lam)


def _newton_direction(grad, hess):
    n = grad.size
    scale = max(float(np.max(np.abs(np.diag(hess)))), 1e-300)
    reg = 0.0
    for _ in range(40):
        try:
            l = np.linalg.cholesky(hess + reg * np.eye(n))
            y = np.linalg.solve(l, -grad)
            return np.linalg.solve(l.T, y)
        except np.linalg.LinAlgError:
            reg = scale * 1e-12 if reg == 0.0 else reg * 10.0
    raise NumericalError("barrier Hessian could not be regularized", {"scale": scale})


def _center(bar: _Barrier, x, t, stats, stop=None):
    phi = bar.value(x, t)
    for _ in range(MAX_NEWTON):
        _, _, grad, hess = bar.derivatives(x, t)
        dx = _newton_direction(grad, hess)
        slope = float(grad @ dx)
        if -slope / 2.0 <= CENTERING_TOL:
            break
        s = 1.0
        accepted = False
        for _h in range(MAX_HALVINGS):
            trial = x + s * dx
            if np.array_equal(trial, x):
                # the step no longer moves x; Armijo would accept a non-move
                break
            phi_t = bar.value(trial, t)
            if phi_t <= phi + ARMIJO * s * slope:
                accepted = True
                break
            s *= SHRINK
        if not accepted:
            # roundoff floor: the decrement is already negligible against phi
            if -slope / 2.0 <= 1e-9 * max(1.0, abs(phi)):
                break
            raise NumericalError(
                "line search failed after 60 halvings",
                {"t": t, "decrement": -slope, "phi": phi, "x": x.tolist()},
            )
        x = trial
        stalled = phi - phi_t <= 1e-15 * max(1.0, abs(phi))
        phi = phi_t
        stats.iterations += 1
        if stalled:
            # roundoff floor: accepted steps no longer change phi
            break
        if stop is not None and stop(x):
            return x, True
    return x, False


def minimize(program: SmoothProgram, x0, *, _stop=None):
    """Barrier method: t = 1, 10, 100, ... until (#inequalities) / t < 1e-8.

    Returns ``(x, SolveStats)``.  ``x0`` must be strictly feasible.
    """
    start = time.perf_counter()
    x = np.array(x0, dtype=float)
    if x.shape != (program.n,):
        raise UsageError(f"x0 has shape {x.shape}, program dimension is {program.n}")
    bar = _Barrier(program)
    if not bar.strictly_feasible(x):
        raise UsageError("x0 is not strictly feasible")
    stats = SolveStats()
    n_ineq = program.n_inequalities
    t = 1.0
    while True:
        x, stopped = _center(bar, x, t, stats, _stop)
        stats.stages += 1
        stats.stage_objectives.append(_value(program.objective, x))
        if stopped or n_ineq == 0 or n_ineq / t < GAP_TOL:
            break
        t *= BARRIER_GROWTH
    f, gf, _, _ = bar.derivatives(x, t)
    resid = gf.copy()
    if program.constraints:
        lam = bar.duals(x, t)
        for lj, c in zip(lam, program.constraints):
            resid += lj * np.asarray(c(x)[1], float)
    lo, hi = bar.lo, bar.hi
    resid[bar.has_lo] -= 1.0 / (t * (x[bar.has_lo] - lo[bar.has_lo]))
    resid[bar.has_hi] += 1.0 / (t * (hi[bar.has_hi] - x[bar.has_hi]))
    stats.grad_norm = float(np.linalg.norm(resid))
    stats.slack = max((_value(c, x) for c in program.constraints), default=-math.inf)
    stats.barrier_t = t
    stats.wall_time = time.perf_counter() - start
    return x, stats


def kkt_residual(program: SmoothProgram, x, t) -> tuple[float, float]:
    """(||grad f + sum lambda_j grad g_j||, ||grad f||) with lambda_j = 1/(-t g_j)."""
    bar = _Barrier(program)
    _, gf, _, _ = bar.derivatives(np.asarray(x, float), t)
    resid = gf.copy()
    for c in program.constraints:
        v, g = c(x)[:2]
        resid += np.asarray(g, float) / (-t * v)
    resid[bar.has_lo] -= 1.0 / (t * (x[bar.has_lo] - bar.lo[bar.has_lo]))
    resid[bar.has_hi] += 1.0 / (t * (bar.hi[bar.has_hi] - x[bar.has_hi]))
    return float(np.linalg.norm(resid)), float(np.linalg.norm(gf))


def _interior(x, lo, hi):
    x = np.array(x, dtype=float)
    for i in range(x.size):
        a, b = lo[i], hi[i]
        if math.isfinite(a) and math.isfinite(b):
            if not (a < x[i] < b):
                x[i] = min(max(x[i], a + 1e-3 * (b - a)), b - 1e-3 * (b - a))
        elif math.isfinite(a) and x[i] <= a:
            x[i] = a + 1e-3 * max(1.0, abs(a))
        elif math.isfinite(b) and x[i] >= b:
            x[i] = b - 1e-3 * max(1.0, abs(b))
    return x


def find_feasible(program: SmoothProgram, hint):
    """Phase I: minimize a common slack s subject to g_j(x) <= s.

    Returns x with max_j g_j(x) <= -1e-9.  Constraints are assumed to be scaled
    to order one; the slack is bounded below by -1.
    """
    lo, hi = program.bounds()
    x = _interior(hint, lo, hi)
    if x.shape != (program.n,):
        raise UsageError(f"hint has shape {x.shape}, program dimension is {program.n}")
    vals = [_value(c, x) for c in program.constraints]
    if any(not math.isfinite(v) for v in vals):
        raise UsageError("constraints are not finite at the hint")
    worst = max(vals, default=-math.inf)
    if worst <= -FEASIBLE_MARGIN:
        return x

    n = program.n

    def lifted(c):
        def fn(z):
            out = c(z[:n])
            g = np.append(np.asarray(out[1], float), -1.0)
            if len(out) == 3:
                h = np.zeros((n + 1, n + 1))
                h[:n, :n] = out[2]
                return out[0] - z[n], g, h
            return out[0] - z[n], g
        return fn

    def slack(z):
        g = np.zeros(n + 1)
        g[n] = 1.0
        return z[n], g, np.zeros((n + 1, n + 1))

    phase1 = SmoothProgram(
        n=n + 1,
        objective=slack,
        constraints=[lifted(c) for c in program.constraints],
        lower=np.append(lo, -1.0),
        upper=np.append(hi, np.inf),
    )
    z0 = np.append(x, max(worst, -0.5) + 1.0)

    def reached(z):
        return max(_value(c, z[:n]) for c in program.constraints) <= -FEASIBLE_MARGIN

    z, _ = minimize(phase1, z0, _stop=reached)
    xf = z[:n]
    best = max(_value(c, xf) for c in program.constraints)
    if not best <= -FEASIBLE_MARGIN:
        raise InfeasibleError("no strictly feasible point", residual=float(z[n]))
    return xf


def check_gradient(fn, x) -> float:
    """Worst deviation between ``fn(x)[1]`` and central differences of ``fn(x)[0]``.

    Per-coordinate step 1e-6 (1 + |x_i|); deviations are relative to the larger
    of the two gradient magnitudes (infinity norm), so zero components are safe.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    analytic = np.atleast_1d(np.asarray(fn(x)[1], dtype=float))
    fd = np.empty_like(x)
    for i in range(x.size):
        h = 1e-6 * (1.0 + abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        fd[i] = (float(fn(xp)[0]) - float(fn(xm)[0])) / (2.0 * h)
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(fd)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(analytic - fd)) / scale)
