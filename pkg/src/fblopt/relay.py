"""Two-hop decode-and-forward relaying.

A packet is lost if either hop fails, so the end-to-end error is
``e1 + e2 - e1 e2``.  Both hops draw from one blocklength budget and one
energy budget.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import solver
from .allocator import (
    AllocationProblem,
    AllocationResult,
    _budget_constraints_ab,
    _eps,
    _joint_errors,
    scaled_minimize,
    solve_joint,
)
from .errors import DomainError, RegionError, UsageError
from .fbl import normal_pdf, q_func

W_REGION = 1.2


@dataclass(frozen=True)
class RelayProblem:
    d_bits: float
    gain: tuple
    m_total: float
    e_total: float
    eps_max: float = 0.1
    gamma_th: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "gain", tuple(float(g) for g in self.gain))
        if len(self.gain) != 2:
            raise UsageError("a relay link has exactly two hop gains")
        # reuse the allocator's range checks
        self.as_allocation()

    @property
    def n_users(self) -> int:
        return 2

    def as_allocation(self) -> AllocationProblem:
        return AllocationProblem(
            d_bits=(self.d_bits, self.d_bits),
            gain=self.gain,
            m_total=self.m_total,
            e_total=self.e_total,
            eps_max=self.eps_max,
            gamma_th=self.gamma_th,
        )

    def to_dict(self) -> dict:
        return {
            "type": "relay",
            "d_bits": self.d_bits,
            "gain": list(self.gain),
            "m_total": self.m_total,
            "e_total": self.e_total,
            "eps_max": self.eps_max,
            "gamma_th": self.gamma_th,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RelayProblem":
        data = dict(data)
        if data.pop("type", "relay") != "relay":
            raise UsageError("type tag must be 'relay'")
        return cls(**data)


def overall_error(eps1: float, eps2: float) -> float:
    for e in (eps1, eps2):
        if not (0.0 <= e <= 1.0):
            raise DomainError(f"hop error must lie in [0, 1], got {e!r}")
    return eps1 + eps2 - eps1 * eps2


def relay_w_hessian(w1: float, w2: float) -> tuple[np.ndarray, float]:
    """Hessian of the end-to-end error in (w1, w2) and its determinant."""
    if w1 < W_REGION or w2 < W_REGION:
        raise RegionError(f"relay curvature analysis needs w1, w2 >= {W_REGION}")
    d1 = (1.0 - q_func(w2)) * w1 * normal_pdf(w1)
    d2 = (1.0 - q_func(w1)) * w2 * normal_pdf(w2)
    off = -math.exp(-0.5 * (w1 * w1 + w2 * w2)) / (2.0 * math.pi)
    h = np.array([[d1, off], [off, d2]])
    return h, d1 * d2 - off * off


def _relay_objective(problem: RelayProblem):
    errs = _joint_errors(problem.as_allocation())

    def fn(x):
        (e1, g1, h1), (e2, g2, h2) = errs(x)
        v = e1 + e2 - e1 * e2
        g = (1.0 - e2) * g1 + (1.0 - e1) * g2
        h = (1.0 - e2) * h1 + (1.0 - e1) * h2 - np.outer(g1, g2) - np.outer(g2, g1)
        return v, g, h

    return fn, errs


def balanced_split(problem: RelayProblem) -> dict:
    """Equal blocklengths, energy inversely proportional to the hop gain (equal SNR)."""
    g = np.asarray(problem.gain)
    m = np.full(2, problem.m_total / 2.0)
    inv = 1.0 / g
    p = problem.e_total * inv / inv.sum() / m
    eps = np.array([_eps(m[i], g[i] * p[i], problem.d_bits) for i in range(2)])
    feasible = bool(np.all(eps <= problem.eps_max) and np.all(g * p >= problem.gamma_th))
    return {"m": m, "p": p, "eps": eps, "objective": overall_error(*eps), "feasible": feasible}


def solve_relay(problem: RelayProblem) -> AllocationResult:
    """Minimize the end-to-end error in the (1/m, sqrt(p)) coordinates."""
    start = time.perf_counter()
    alloc = problem.as_allocation()
    objective, errs = _relay_objective(problem)
    cons = list(_budget_constraints_ab(alloc))
    for i in range(2):
        def cap(x, i=i):
            e, g, h = errs(x)[i]
            return e / problem.eps_max - 1.0, g / problem.eps_max, h / problem.eps_max
        cons.append(cap)
    g = np.asarray(problem.gain)
    # the min-max optimum has the same feasible set: it decides feasibility
    # (raising InfeasibleError) and, being strictly inside the caps, seeds the solve
    mm = solve_joint(alloc)
    x0 = np.concatenate([1.0 / mm.m, np.sqrt(mm.p)])
    lower = np.concatenate([np.zeros(2), np.sqrt(alloc.p_min)])
    x, stats, passes = scaled_minimize(4, objective, cons, lower, x0)
    m, p = 1.0 / x[:2], x[2:] ** 2
    eps = np.array([_eps(m[i], g[i] * p[i], problem.d_bits) for i in range(2)])
    stats.wall_time = time.perf_counter() - start
    res = AllocationResult(
        method="relay",
        m=m,
        p=p,
        eps=eps,
        objective=overall_error(*eps),
        binding={
            "blocklength": bool(m.sum() >= problem.m_total * (1 - 1e-6)),
            "energy": bool((m * p).sum() >= problem.e_total * (1 - 1e-6)),
        },
        stats=stats,
        info={"passes": passes},
    )
    if problem.eps_max > 0.1:
        res.warnings.append("eps_max above 0.1: hop errors may leave the proven convexity region")
    return res


def gap_report(result: AllocationResult, eps_max: float) -> dict:
    """How far the additive surrogate e1 + e2 sits above the end-to-end error."""
    e1, e2 = (float(v) for v in result.eps)
    eo = overall_error(e1, e2)
    cross = e1 * e2
    return {
        "eps1": e1,
        "eps2": e2,
        "eps_overall": eo,
        "eps_sum": e1 + e2,
        "cross_term": cross,
        "bound": eps_max * eps_max,
        "ok": bool(0.0 <= cross <= eps_max * eps_max),
    }
