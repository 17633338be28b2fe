"""Joint-convexity region of the error in (blocklength, power).

A point is *in region* when it is reliable (error <= eps_max, SNR >= gamma_th,
capacity >= rate) and either the rate condition ``r > delta6(SNR)`` or the
stricter SNR condition holds.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainError, UsageError
from .fbl import (
    LN2,
    LinkPoint,
    _delta_terms,
    capacity_dispersion,
    det_h_from_deltas,
    error_grad_hess_mp,
    error_probability,
)

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ConvexityVerdict:
    preconditions_ok: bool
    cond_rate_ok: bool
    cond_snr_ok: bool
    snr_threshold: float

    @property
    def in_region(self) -> bool:
        return self.preconditions_ok and (self.cond_rate_ok or self.cond_snr_ok)


@dataclass(frozen=True)
class DeltaTerms:
    delta1: float
    delta2: float
    delta3: float
    delta4: float
    delta5: float
    delta6: float
    det_h: float


def delta6(gamma: float) -> float:
    """Smallest rate for which the Delta_5 term is non-negative at this SNR."""
    gamma = float(gamma)
    if not gamma >= 1.0:
        raise DomainError(f"delta6 is defined for SNR >= 1, got {gamma!r}")
    return _delta_terms(gamma, 0.0)[5]


@lru_cache(maxsize=None)
def delta6_peak(lo: float = 1.0, hi: float = 1e4, tol: float = 1e-6) -> tuple[float, float]:
    """Golden-section maximization of :func:`delta6` on ``[lo, hi]``.

    The bracket is searched on a log scale (delta6 decays slowly toward zero),
    then refined on the linear scale to ``tol`` in SNR.
    """
    a, b = math.log(lo), math.log(hi)
    f = lambda u: -delta6(math.exp(u))
    a, b = _golden(f, a, b, 1e-9)
    a, b = math.exp(a), math.exp(b)
    a, b = _golden(lambda g: -delta6(g), max(lo, a - 1e-3), min(hi, b + 1e-3), tol)
    g = 0.5 * (a + b)
    return g, delta6(g)


def _golden(f, a, b, tol):
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return a, b


def snr_threshold(r: float) -> float:
    """SNR above which the simpler sufficient condition guarantees convexity."""
    return max(1.0 / (5.0 * r * LN2), 8.0 / (45.0 * r * r * LN2 * LN2))


def convexity_condition(point: LinkPoint, eps_max: float = 0.1, gamma_th: float = 1.0) -> ConvexityVerdict:
    gamma, r = point.gamma, point.rate
    c, _ = capacity_dispersion(gamma)
    eps = error_probability(point)
    pre = eps <= eps_max and gamma >= gamma_th and c >= r
    # delta6 only exists for SNR >= 1; below that the rate condition is unproven
    rate_ok = gamma >= 1.0 and r > delta6(gamma)
    thr = snr_threshold(r)
    return ConvexityVerdict(pre, rate_ok, gamma >= 1.0 and gamma >= thr, thr)


def det_h_terms(point: LinkPoint) -> DeltaTerms:
    gamma = point.gamma
    if gamma < 1.0:
        raise DomainError(f"Delta terms need SNR >= 1, got {gamma:.6g}")
    d = _delta_terms(gamma, point.rate)
    return DeltaTerms(*d, det_h=det_h_from_deltas(point.m, gamma, point.rate))


def error_hessian_mp(point: LinkPoint) -> np.ndarray:
    return error_grad_hess_mp(point.m, point.p, point.g, point.d_bits)[2]


@dataclass
class PsdScanReport:
    min_scaled_eigenvalue: float
    worst_point: LinkPoint | None
    n_in_region: int
    n_out_region: int
    n_violations: int
    rows: list[dict]

    @property
    def passed(self) -> bool:
        return self.n_violations == 0


def _scan_row(point, eps_max, gamma_th, tol):
    verdict = convexity_condition(point, eps_max, gamma_th)
    row = {"m": point.m, "p": point.p, "g": point.g, "d_bits": point.d_bits,
           "gamma": point.gamma, "rate": point.rate}
    row.update(asdict(verdict))
    row["in_region"] = verdict.in_region
    eig_lo = eig_hi = scaled = float("nan")
    if verdict.in_region:
        h = error_hessian_mp(point)
        eig_lo, eig_hi = np.linalg.eigvalsh(h)
        scaled = eig_lo / (1.0 + abs(np.trace(h)))
    row.update(eig_min=float(eig_lo), eig_max=float(eig_hi), eig_min_scaled=float(scaled),
               psd_ok=bool(not verdict.in_region or scaled >= -tol))
    return row


def numeric_psd_scan(grid, eps_max: float = 0.1, gamma_th: float = 1.0, tol: float = 1e-9) -> PsdScanReport:
    """Eigenvalue check of the error Hessian in (m, p) at every in-region point.

    Eigenvalues are compared against ``-tol * (1 + |trace|)``.
    """
    grid = list(grid)
    if not grid:
        raise UsageError("numeric_psd_scan needs a non-empty grid")
    rows = [_scan_row(pt, eps_max, gamma_th, tol) for pt in grid]
    worst, worst_val = None, math.inf
    n_in = n_bad = 0
    for pt, row in zip(grid, rows):
        if not row["in_region"]:
            continue
        n_in += 1
        if not row["psd_ok"]:
            n_bad += 1
        if row["eig_min_scaled"] < worst_val:
            worst, worst_val = pt, row["eig_min_scaled"]
    return PsdScanReport(worst_val, worst, n_in, len(grid) - n_in, n_bad, rows)


def log_grid(gamma_range=(1.0, 30.0), m_range=(100.0, 2000.0), d_bits=480.0, n=50, g=1.0):
    """``n x n`` log-spaced grid of points (SNR, blocklength) at fixed payload."""
    gammas = np.geomspace(*gamma_range, n)
    ms = np.geomspace(*m_range, n)
    return [LinkPoint(m=float(m), p=float(gm) / g, g=g, d_bits=d_bits) for gm in gammas for m in ms]
