"""Min-max error allocation of blocklength and power over N orthogonal users.

Three solvers share one problem type:

* :func:`solve_joint` substitutes ``a = 1/m`` and ``b = sqrt(p)``, which makes the
  whole problem convex, and solves its epigraph form with the barrier method;
* :func:`solve_integer` enumerates integer blocklength vectors and solves the
  power-only sub-problem for each (pruned branch-and-bound, exact);
* :func:`solve_alternating` alternates blocklength and power sub-problems.

:func:`round_solution` turns a relaxed solution into an integer one.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from . import solver
from .errors import InfeasibleError, ResourceError, UsageError
from .fbl import LN2, SQRT2, normal_pdf, q_func, q_inv, w_partials
from .region import ConvexityVerdict, delta6_peak, snr_threshold

DEFAULT_CAP = 20_000_000
_LOG_SNR_CAP = 300.0


@dataclass(frozen=True)
class AllocationProblem:
    d_bits: tuple
    gain: tuple
    m_total: float
    e_total: float
    eps_max: float = 0.1
    gamma_th: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "d_bits", tuple(float(d) for d in self.d_bits))
        object.__setattr__(self, "gain", tuple(float(g) for g in self.gain))
        if len(self.d_bits) == 0:
            raise UsageError("at least one user is required")
        if len(self.d_bits) != len(self.gain):
            raise UsageError("d_bits and gain must have one entry per user")
        if any(not (d > 0 and math.isfinite(d)) for d in self.d_bits):
            raise UsageError("payloads must be positive")
        if any(not (g > 0 and math.isfinite(g)) for g in self.gain):
            raise UsageError("gains must be positive")
        if not (self.m_total > 0 and self.e_total > 0):
            raise UsageError("blocklength and energy budgets must be positive")
        if not (0.0 < self.eps_max < 0.5):
            raise UsageError("eps_max must lie in (0, 0.5)")
        if not self.gamma_th > 0:
            raise UsageError("gamma_th must be positive")

    @property
    def n_users(self) -> int:
        return len(self.d_bits)

    @property
    def p_min(self) -> np.ndarray:
        return self.gamma_th / np.asarray(self.gain)

    def to_dict(self) -> dict:
        return {
            "d_bits": list(self.d_bits),
            "gain": list(self.gain),
            "m_total": self.m_total,
            "e_total": self.e_total,
            "eps_max": self.eps_max,
            "gamma_th": self.gamma_th,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AllocationProblem":
        return cls(**data)


@dataclass
class AllocationResult:
    method: str
    m: np.ndarray
    p: np.ndarray
    eps: np.ndarray
    objective: float
    binding: dict
    stats: solver.SolveStats
    info: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "m": self.m.tolist(),
            "p": self.p.tolist(),
            "eps": self.eps.tolist(),
            "objective": self.objective,
            "binding": self.binding,
            "iterations": self.stats.iterations,
            "stages": self.stats.stages,
            "info": self.info,
            "warnings": list(self.warnings),
        }


# --------------------------------------------------------------------------
# per-user error and its derivatives in the various coordinate systems
# --------------------------------------------------------------------------

def _eps(m, gamma, d):
    w = w_partials(m, gamma, d)[0]
    return 0.5 * math.erfc(w / SQRT2)


def error_ab(a: float, b: float, g: float, d_bits: float):
    """Error of one user in (a, b) = (1/m, sqrt(p)): value, gradient, Hessian."""
    m = 1.0 / a
    w, wm, wg, wmm, wgg, wmg = w_partials(m, g * b * b, d_bits)
    dgam = 2.0 * g * b
    wa = -wm * m * m
    wb = wg * dgam
    waa = wmm * m**4 + 2.0 * wm * m**3
    wbb = wgg * dgam * dgam + 2.0 * g * wg
    wab = -wmg * m * m * dgam
    phi = normal_pdf(w)
    eps = 0.5 * math.erfc(w / SQRT2)
    grad = np.array([-phi * wa, -phi * wb])
    hess = phi * np.array(
        [[w * wa * wa - waa, w * wa * wb - wab], [w * wa * wb - wab, w * wb * wb - wbb]]
    )
    return eps, grad, hess


def curvature_margins(m: float, p: float, d_bits: float) -> tuple[float, float]:
    """x2 = (2w/a) dw/dp - 2 and x3 = (2 b^2 w / a) dw/dm - 1 with p equal to the SNR."""
    w, wm, wg, *_ = w_partials(m, p, d_bits)
    return 2.0 * w * m * wg - 2.0, 2.0 * p * w * m * wm - 1.0


def _user_m(m, p, g, d):
    w, wm, wg, wmm, wgg, wmg = w_partials(m, g * p, d)
    phi = normal_pdf(w)
    eps = 0.5 * math.erfc(w / SQRT2)
    return eps, -phi * wm, phi * (w * wm * wm - wmm)


def _user_p(m, p, g, d):
    w, wm, wg, wmm, wgg, wmg = w_partials(m, g * p, d)
    phi = normal_pdf(w)
    eps = 0.5 * math.erfc(w / SQRT2)
    wp = g * wg
    return eps, -phi * wp, phi * (w * wp * wp - g * g * wgg)


# --------------------------------------------------------------------------
# epigraph machinery shared by all solvers
# --------------------------------------------------------------------------

def _memo(fn):
    """One-entry cache: every constraint of a user shares the same evaluation."""
    last = [None, None]

    def wrapped(x):
        key = x.tobytes()
        if last[0] != key:
            last[0], last[1] = key, fn(x)
        return last[1]

    return wrapped


def _epigraph_solve(n, user_errors, constraints, lower, x_hint, eps_max):
    """min max_i eps_i(x) as min tau s.t. eps_i(x) <= tau * t_ref.

    ``user_errors(x)`` returns a list of (eps_i, grad_i, hess_i) over the full
    ``x``.  ``t_ref`` is re-anchored at the latest optimum until it is within a
    factor two, so the fixed absolute barrier gap is a relative one.
    """
    user_errors = _memo(user_errors)
    k = len(user_errors(np.asarray(x_hint, float)))

    def eps_constraint(i, scale):
        def fn(z):
            e, g, h = user_errors(z[:n])[i]
            gz = np.zeros(n + 1)
            gz[:n] = g / scale
            hz = np.zeros((n + 1, n + 1))
            hz[:n, :n] = h / scale
            return e / scale - 1.0, gz, hz
        return fn

    def epi_constraint(i, t_ref):
        def fn(z):
            e, g, h = user_errors(z[:n])[i]
            gz = np.zeros(n + 1)
            gz[:n] = g / t_ref
            gz[n] = -1.0
            hz = np.zeros((n + 1, n + 1))
            hz[:n, :n] = h / t_ref
            return e / t_ref - z[n], gz, hz
        return fn

    def lift(c):
        def fn(z):
            v, g, h = c(z[:n])
            gz = np.zeros(n + 1)
            gz[:n] = g
            hz = np.zeros((n + 1, n + 1))
            hz[:n, :n] = h
            return v, gz, hz
        return fn

    def tau(z):
        g = np.zeros(n + 1)
        g[n] = 1.0
        return z[n], g, np.zeros((n + 1, n + 1))

    base = [lift(c) for c in constraints] + [eps_constraint(i, eps_max) for i in range(k)]
    lower_z = np.append(np.asarray(lower, float), -np.inf)

    # phase I on the resource constraints only (tau is free there)
    feas_prog = solver.SmoothProgram(n=n + 1, objective=tau, constraints=base, lower=lower_z)
    z = solver.find_feasible(feas_prog, np.append(np.asarray(x_hint, float), 0.0))
    x = z[:n]

    total = solver.SolveStats()
    t_ref = max(e for e, _, _ in user_errors(x))
    passes = 0
    if t_ref == 0.0:
        return x, total, passes
    while passes < 30:
        passes += 1
        prog = solver.SmoothProgram(
            n=n + 1,
            objective=tau,
            constraints=base + [epi_constraint(i, t_ref) for i in range(k)],
            lower=lower_z,
        )
        cur = max(e for e, _, _ in user_errors(x))
        z0 = np.append(x, cur / t_ref * 1.5 + 1e-3)
        z, st = solver.minimize(prog, z0)
        x = z[:n]
        total.iterations += st.iterations
        total.stages += st.stages
        total.stage_objectives.extend(v * t_ref for v in st.stage_objectives)
        total.grad_norm = st.grad_norm
        total.slack = st.slack
        total.barrier_t = st.barrier_t
        obj = max(e for e, _, _ in user_errors(x))
        if obj == 0.0 or obj >= 0.5 * t_ref:
            break
        t_ref = obj
    return x, total, passes


def _initial_weight(n, objective, constraints, lower, upper, x, f_ref):
    """Objective weight that makes ``x`` closest to central (least squares).

    Starting the barrier at its analytic center can park the iterate on a
    plateau of a saturating objective; weighting the objective keeps the first
    stage near the starting point.  Never below one.
    """
    const = lambda _x: (0.0, np.zeros(n), np.zeros((n, n)))
    bar = solver._Barrier(solver.SmoothProgram(n=n, objective=const, constraints=constraints,
                                               lower=lower, upper=upper))
    gb = bar.derivatives(x, 0.0)[2]
    gf = objective(x)[1] / f_ref
    den = float(gf @ gf)
    if not den > 0:
        return 1.0
    return max(1.0, -float(gf @ gb) / den)


def scaled_minimize(n, objective, constraints, lower, x_hint, upper=None):
    """Minimize a positive objective with the barrier solver, relative accuracy.

    The objective is divided by a reference level re-anchored at the latest
    optimum until it is within a factor two, for the same reason as the
    epigraph form above.
    """
    objective = _memo(objective)
    lower = np.asarray(lower, float)
    upper = None if upper is None else np.asarray(upper, float)

    def const(_x):
        return 0.0, np.zeros(n), np.zeros((n, n))

    feas = solver.SmoothProgram(n=n, objective=const, constraints=constraints, lower=lower, upper=upper)
    x = solver.find_feasible(feas, np.asarray(x_hint, float))
    total = solver.SolveStats()
    f_ref = objective(x)[0]
    passes = 0
    if f_ref == 0.0:
        return x, total, passes
    while passes < 30:
        passes += 1
        ref = f_ref / _initial_weight(n, objective, constraints, lower, upper, x, f_ref)

        def scaled(z, ref=ref):
            v, g, h = objective(z)
            return v / ref, g / ref, h / ref

        prog = solver.SmoothProgram(n=n, objective=scaled, constraints=constraints, lower=lower, upper=upper)
        x, st = solver.minimize(prog, x)
        total.iterations += st.iterations
        total.stages += st.stages
        total.stage_objectives.extend(v * ref for v in st.stage_objectives)
        total.grad_norm = st.grad_norm * ref
        total.slack = st.slack
        total.barrier_t = st.barrier_t
        obj = objective(x)[0]
        if obj == 0.0 or obj >= 0.5 * ref:
            break
        f_ref = obj
    return x, total, passes


def _binding(problem, m, p, tol=1e-6):
    return {
        "blocklength": bool(m.sum() >= problem.m_total * (1.0 - tol)),
        "energy": bool((m * p).sum() >= problem.e_total * (1.0 - tol)),
    }


def _result(problem, method, m, p, stats, start, **info):
    m = np.asarray(m, float)
    p = np.asarray(p, float)
    eps = np.array(
        [_eps(mi, gi * pi, di) for mi, pi, gi, di in zip(m, p, problem.gain, problem.d_bits)]
    )
    stats.wall_time = time.perf_counter() - start
    res = AllocationResult(
        method=method,
        m=m,
        p=p,
        eps=eps,
        objective=float(eps.max()),
        binding=_binding(problem, m, p),
        stats=stats,
        info=info,
    )
    res.warnings.extend(_region_warnings(problem))
    return res


# --------------------------------------------------------------------------
# region validation
# --------------------------------------------------------------------------

def validate(problem: AllocationProblem) -> list[ConvexityVerdict]:
    """Per-user convexity verdict over the whole feasible set.

    The worst case for both sufficient conditions is the lowest rate a user can
    see (all M channel uses, r = D/M) at the lowest admissible SNR.  The rate
    condition is checked against the supremum of delta6 over SNR >= 1.
    """
    if not isinstance(problem, AllocationProblem):
        raise UsageError("validate needs an AllocationProblem")
    sup6 = delta6_peak()[1]
    out = []
    for d in problem.d_bits:
        r_min = d / problem.m_total
        thr = snr_threshold(r_min)
        pre = problem.gamma_th >= 1.0 and problem.eps_max <= 0.5
        out.append(ConvexityVerdict(pre, r_min > sup6, problem.gamma_th >= thr, thr))
    return out


def _region_warnings(problem):
    msgs = []
    for i, v in enumerate(validate(problem)):
        if not v.in_region:
            msgs.append(f"user {i}: feasible set not covered by the convexity region")
    return msgs


# --------------------------------------------------------------------------
# joint convex solve
# --------------------------------------------------------------------------

def _joint_errors(problem):
    n = problem.n_users
    gains, ds = problem.gain, problem.d_bits

    def errs(x):
        out = []
        for i in range(n):
            e, g, h = error_ab(x[i], x[n + i], gains[i], ds[i])
            gf = np.zeros(2 * n)
            gf[i], gf[n + i] = g
            hf = np.zeros((2 * n, 2 * n))
            hf[i, i], hf[i, n + i] = h[0]
            hf[n + i, i], hf[n + i, n + i] = h[1]
            out.append((e, gf, hf))
        return out

    return errs


def _budget_constraints_ab(problem):
    n = problem.n_users
    M, E = problem.m_total, problem.e_total

    def blocklength(x):
        a = x[:n]
        g = np.zeros(2 * n)
        g[:n] = -1.0 / (a * a * M)
        h = np.zeros((2 * n, 2 * n))
        h[np.arange(n), np.arange(n)] = 2.0 / (a**3 * M)
        return (1.0 / a).sum() / M - 1.0, g, h

    def energy(x):
        a, b = x[:n], x[n:]
        g = np.concatenate([-(b * b) / (a * a * E), 2.0 * b / (a * E)])
        h = np.zeros((2 * n, 2 * n))
        ia = np.arange(n)
        ib = ia + n
        h[ia, ia] = 2.0 * b * b / (a**3 * E)
        h[ia, ib] = h[ib, ia] = -2.0 * b / (a * a * E)
        h[ib, ib] = 2.0 / (a * E)
        return (b * b / a).sum() / E - 1.0, g, h

    return [blocklength, energy]


def solve_joint(problem: AllocationProblem) -> AllocationResult:
    start = time.perf_counter()
    n = problem.n_users
    m0 = np.full(n, 0.999 * problem.m_total / n)
    p0 = np.maximum(np.full(n, 0.999 * problem.e_total / problem.m_total), problem.p_min * 1.001)
    x0 = np.concatenate([1.0 / m0, np.sqrt(p0)])
    lower = np.concatenate([np.zeros(n), np.sqrt(problem.p_min)])
    x, stats, passes = _epigraph_solve(
        2 * n, _joint_errors(problem), _budget_constraints_ab(problem), lower, x0, problem.eps_max
    )
    return _result(problem, "joint", 1.0 / x[:n], x[n:] ** 2, stats, start, passes=passes)


# --------------------------------------------------------------------------
# fixed-blocklength power sub-problem
# --------------------------------------------------------------------------

def _w_user(m, gamma, d):
    return w_partials(m, gamma, d)[0]


def _snr_for_level(m, d, s, g_lo, g_hi):
    """SNR at which this user's w reaches ``s`` (w is increasing in SNR)."""
    if _w_user(m, g_lo, d) >= s:
        return g_lo
    hi = g_hi
    while _w_user(m, hi, d) < s:
        hi *= 2.0
    return brentq(lambda gm: _w_user(m, gm, d) - s, g_lo, hi, xtol=1e-14, rtol=1e-15, maxiter=200)


def power_level(problem: AllocationProblem, m) -> tuple[float, np.ndarray] | None:
    """Exact optimum of the power sub-problem at fixed blocklengths.

    Returns ``(s, p)`` where ``s`` is the largest achievable min_i w_i (the
    objective is Q(s)), or ``None`` if the sub-problem is infeasible.  The
    min-max of decreasing errors under one linear budget is attained by
    raising every user to a common level.
    """
    m = np.asarray(m, float)
    gains = np.asarray(problem.gain)
    ds = problem.d_bits
    pmin = problem.p_min
    E = problem.e_total
    base = float(m @ pmin)
    if base > E:
        return None
    n = m.size
    pmax = (E - (base - m * pmin)) / m
    s_hi = min(_w_user(m[i], gains[i] * pmax[i], ds[i]) for i in range(n))
    s_need = q_inv(problem.eps_max)
    if s_hi < s_need:
        return None
    s_lo = min(_w_user(m[i], problem.gamma_th, ds[i]) for i in range(n))

    def snrs(s):
        return np.array(
            [_snr_for_level(m[i], ds[i], s, problem.gamma_th, gains[i] * pmax[i]) for i in range(n)]
        )

    if s_lo >= s_hi:
        s = s_lo
    else:
        f = lambda s: float(m @ (snrs(s) / gains)) - E
        if f(s_hi) <= 0.0:
            s = s_hi
        else:
            s = brentq(f, s_lo, s_hi, xtol=1e-13, rtol=1e-15, maxiter=200)
    p = snrs(s) / gains
    return s, p


def _solve_power(problem, m, p_hint):
    """Power-only convex sub-problem at fixed ``m`` via the barrier solver."""
    n = problem.n_users
    m = np.asarray(m, float)
    gains, ds, E = problem.gain, problem.d_bits, problem.e_total

    def errs(p):
        out = []
        for i in range(n):
            e, g, h = _user_p(m[i], p[i], gains[i], ds[i])
            gf = np.zeros(n)
            gf[i] = g
            hf = np.zeros((n, n))
            hf[i, i] = h
            out.append((e, gf, hf))
        return out

    def energy(p):
        return float(m @ p) / E - 1.0, m / E, np.zeros((n, n))

    return _epigraph_solve(n, errs, [energy], problem.p_min, p_hint, problem.eps_max)


def _solve_blocklength(problem, p, m_hint):
    """Blocklength-only convex sub-problem at fixed ``p``."""
    n = problem.n_users
    p = np.asarray(p, float)
    gains, ds = problem.gain, problem.d_bits
    M, E = problem.m_total, problem.e_total

    def errs(m):
        out = []
        for i in range(n):
            e, g, h = _user_m(m[i], p[i], gains[i], ds[i])
            gf = np.zeros(n)
            gf[i] = g
            hf = np.zeros((n, n))
            hf[i, i] = h
            out.append((e, gf, hf))
        return out

    def blocklength(m):
        return m.sum() / M - 1.0, np.full(n, 1.0 / M), np.zeros((n, n))

    def energy(m):
        return float(m @ p) / E - 1.0, p / E, np.zeros((n, n))

    return _epigraph_solve(n, errs, [blocklength, energy], np.zeros(n), m_hint, problem.eps_max)


def _interior_power_hint(problem, m, level):
    s, p = level
    # back off the common level slightly so the energy budget is strict
    s_back = s - 1e-6 * max(1.0, abs(s))
    gains = np.asarray(problem.gain)
    n = len(m)
    snr = [
        _snr_for_level(m[i], problem.d_bits[i], s_back, problem.gamma_th, gains[i] * p[i] * 2 + 1)
        for i in range(n)
    ]
    p_hint = np.maximum(np.array(snr) / gains, problem.p_min * (1.0 + 1e-9))
    return p_hint


def solve_power_at(problem: AllocationProblem, m) -> AllocationResult:
    """Re-solve powers for a fixed (possibly integer) blocklength vector."""
    start = time.perf_counter()
    m = np.asarray(m, float)
    level = power_level(problem, m)
    if level is None:
        raise InfeasibleError("no feasible power allocation for this blocklength vector")
    p, stats, passes = _solve_power(problem, m, _interior_power_hint(problem, m, level))
    return _result(problem, "power", m, p, stats, start, passes=passes, level=level[0])


# --------------------------------------------------------------------------
# integer enumeration
# --------------------------------------------------------------------------

def enumeration_count(m_total: float, n_users: int) -> int:
    """Number of positive integer vectors of length N with sum <= M."""
    return math.comb(int(math.floor(m_total)), n_users)


def _compositions(m_total: int, n: int, chunk: int = 200_000):
    combos = itertools.combinations(range(1, m_total + 1), n)
    while True:
        block = list(itertools.islice(combos, chunk))
        if not block:
            return
        cuts = np.array(block, dtype=np.int64)
        yield np.diff(cuts, axis=1, prepend=0)


def _w_vec(m, gamma, d):
    v = gamma * (gamma + 2.0) / (1.0 + gamma) ** 2
    return np.sqrt(m / v) * (np.log1p(gamma) - d / m * LN2)


def _snr_table(problem, s, m_max):
    """SNR each user needs to reach w = s, for every blocklength 1..m_max.

    Row i, column m - 1.  w is increasing in SNR, so this is a vectorized
    bisection on log SNR; the SNR floor gamma_th is applied.
    """
    m = np.arange(1, m_max + 1, dtype=float)
    out = np.empty((problem.n_users, m_max))
    for i, d in enumerate(problem.d_bits):
        lo = np.full(m_max, math.log(problem.gamma_th))
        hi = lo + 1.0
        done = _w_vec(m, np.exp(lo), d) >= s
        # beyond SNR e^300 the level counts as unreachable (infinite energy)
        reach = done | (_w_vec(m, np.exp(np.full(m_max, _LOG_SNR_CAP)), d) >= s)
        while True:
            short = reach & ~done & (_w_vec(m, np.exp(hi), d) < s)
            if not short.any():
                break
            hi[short] = np.minimum(hi[short] + 2.0 * (hi[short] - lo[short]), _LOG_SNR_CAP)
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            up = _w_vec(m, np.exp(mid), d) >= s
            hi = np.where(up, mid, hi)
            lo = np.where(up, lo, mid)
        out[i] = np.where(done, problem.gamma_th, np.where(reach, np.exp(hi), np.inf))
    return out


def solve_integer(problem: AllocationProblem, cap: int = DEFAULT_CAP) -> AllocationResult:
    """Exhaustive search over integer blocklengths, exact and pruned.

    A vector can beat an incumbent level s only if lifting every user to w = s
    fits in the energy budget.  That energy is a sum of per-user terms which
    depend on (user, blocklength) alone, so it is tabulated once per incumbent
    and checked for all vectors at array speed.  Survivors get the exact power
    level; the winner's powers come from the barrier solver.  Ties go to the
    lexicographically smallest blocklength vector.
    """
    start = time.perf_counter()
    n = problem.n_users
    count = enumeration_count(problem.m_total, n)
    if count > cap:
        raise ResourceError(
            f"integer search needs {count} sub-problems (cap {cap}); use solve_joint"
        )
    m_max = int(math.floor(problem.m_total))
    gains = np.asarray(problem.gain)
    E = problem.e_total
    rows = np.arange(n)

    best_s, best_m = q_inv(problem.eps_max), None
    n_exact = 0
    # seed the incumbent with the equal split
    if m_max >= n:
        eq = np.full(n, float(m_max // n))
        eq[: m_max % n] += 1.0
        level = power_level(problem, eq)
        n_exact += 1
        if level is not None:
            best_s, best_m = level[0], eq
    table = _snr_table(problem, best_s, m_max) / gains[:, None]

    def better(level, cand):
        tol = 1e-12 * max(1.0, abs(best_s))
        if best_m is None or level > best_s + tol:
            return True
        return abs(level - best_s) <= tol and tuple(cand) < tuple(best_m)

    for ms in _compositions(m_max, n):
        need = (ms * table[rows, ms - 1]).sum(axis=1)
        idx = np.flatnonzero(need <= E * (1.0 + 1e-9))
        idx = idx[np.argsort(need[idx], kind="stable")]
        for j in idx:
            cand = ms[j].astype(float)
            if float(cand @ table[rows, ms[j] - 1]) > E * (1.0 + 1e-9):
                continue
            level = power_level(problem, cand)
            n_exact += 1
            if level is None or not better(level[0], cand):
                continue
            improved = best_m is None or level[0] > best_s
            best_s, best_m = max(best_s, level[0]), cand
            if improved:
                table = _snr_table(problem, best_s, m_max) / gains[:, None]
    if best_m is None:
        raise InfeasibleError("no integer blocklength vector admits a feasible power allocation")
    res = solve_power_at(problem, best_m)
    return replace(
        res,
        method="integer",
        info={**res.info, "enumerated": count, "exact_levels": n_exact},
        stats=replace(res.stats, wall_time=time.perf_counter() - start),
    )


# --------------------------------------------------------------------------
# alternating search
# --------------------------------------------------------------------------

def solve_alternating(problem: AllocationProblem, p_init=None, max_rounds: int = 200,
                      tol: float = 1e-9) -> AllocationResult:
    """Block-coordinate search: blocklengths at fixed power, then powers at fixed blocklength.

    Stops when the relative improvement of the objective drops below ``tol``.
    """
    start = time.perf_counter()
    n = problem.n_users
    if p_init is None:
        p = np.full(n, problem.e_total / problem.m_total)
    else:
        p = np.asarray(p_init, float)
    if p.shape != (n,) or np.any(p < problem.p_min) or np.any(~np.isfinite(p)):
        raise UsageError("p_init must give every user SNR >= gamma_th")
    m = np.full(n, problem.m_total / n)
    scale = min(1.0, problem.e_total / float(m @ p))
    m = 0.999 * scale * m
    stats = solver.SolveStats()
    history = []
    prev = math.inf
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        try:
            m, st, _ = _solve_blocklength(problem, p, m)
        except InfeasibleError as exc:
            if rounds == 1:
                raise UsageError(f"initial power vector is infeasible: {exc}") from exc
            raise
        stats.iterations += st.iterations
        stats.stages += st.stages
        level = power_level(problem, m)
        hint = p if level is None else _interior_power_hint(problem, m, level)
        p, st, _ = _solve_power(problem, m, hint)
        stats.iterations += st.iterations
        stats.stages += st.stages
        obj = max(_eps(m[i], problem.gain[i] * p[i], problem.d_bits[i]) for i in range(n))
        history.append(obj)
        if prev - obj <= tol * prev:
            break
        prev = obj
    return _result(problem, "alternating", m, p, stats, start, rounds=rounds, history=history)


# --------------------------------------------------------------------------
# rounding
# --------------------------------------------------------------------------

def round_solution(problem: AllocationProblem, result: AllocationResult,
                   max_exhaustive: int = 20) -> AllocationResult:
    """Integer blocklengths from the floor/ceil neighbourhood of a relaxed solution.

    Neighbours are ranked by their exact power level; the winner's powers are
    re-solved with the barrier solver.
    """
    start = time.perf_counter()
    m = np.asarray(result.m, float)
    n = m.size
    M = problem.m_total
    fl = np.floor(m + 1e-9)
    is_int = np.abs(m - np.round(m)) <= 1e-9
    fl = np.where(is_int, np.round(m), fl)
    ce = np.where(is_int, fl, fl + 1.0)

    def score(cand):
        if cand.sum() > M + 1e-9 or np.any(cand < 1):
            return -math.inf
        lvl = power_level(problem, cand)
        return -math.inf if lvl is None else lvl[0]

    if n <= max_exhaustive:
        best, best_s = None, -math.inf
        choices = [(f,) if f == c else (f, c) for f, c in zip(fl, ce)]
        for cand in itertools.product(*choices):
            cand = np.array(cand)
            s = score(cand)
            if s > best_s:
                best, best_s = cand, s
    else:
        best = fl.copy()
        best_s = score(best)
        for _ in range(n):
            trials = []
            for i in range(n):
                if ce[i] > best[i]:
                    cand = best.copy()
                    cand[i] = ce[i]
                    trials.append((score(cand), i, cand))
            trials = [t for t in trials if t[0] > best_s]
            if not trials:
                break
            best_s, _, best = max(trials, key=lambda t: (t[0], -t[1]))
    if best is None or not math.isfinite(best_s):
        raise InfeasibleError("no feasible integer neighbour of the relaxed solution")
    res = solve_power_at(problem, best)
    return replace(
        res,
        method=f"{result.method}+round",
        stats=replace(res.stats, wall_time=time.perf_counter() - start),
    )
