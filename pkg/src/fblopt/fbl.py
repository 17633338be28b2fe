"""Normal-approximation error model for short-packet transmission over AWGN.

All scalar routines are pure functions of their arguments.  Blocklength is a
positive real here; integer handling belongs to :mod:`fblopt.allocator`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .errors import DomainError, NumericalError, RegionError

LN2 = math.log(2.0)
SQRT2 = math.sqrt(2.0)
SQRT2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class LinkPoint:
    """One operating point.

    ``g`` is the effective gain z/sigma^2, so the receive SNR is ``g * p``.
    With ``g = 1`` the power is the normalized power of the use case (p = SNR).
    """

    m: float
    p: float
    g: float
    d_bits: float

    def __post_init__(self):
        for name in ("m", "p", "g", "d_bits"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise DomainError(f"{name} must be positive and finite, got {v!r}")

    @classmethod
    def from_snr(cls, m: float, gamma: float, d_bits: float) -> "LinkPoint":
        return cls(m=m, p=gamma, g=1.0, d_bits=d_bits)

    @property
    def gamma(self) -> float:
        return self.g * self.p

    @property
    def rate(self) -> float:
        return self.d_bits / self.m


@dataclass(frozen=True)
class FblCurvature:
    dw_dm: float
    dw_dgamma: float
    d2w_dm2: float
    d2w_dgamma2: float
    d2w_dmdgamma: float
    det_h: float
    det_h_split: float

    def hessian(self) -> np.ndarray:
        return np.array(
            [[self.d2w_dm2, self.d2w_dmdgamma], [self.d2w_dmdgamma, self.d2w_dgamma2]]
        )


# --------------------------------------------------------------------------
# Q-function
# --------------------------------------------------------------------------

def q_func(x: float) -> float:
    """Gaussian tail probability, through erfc so tails down to ~1e-300 survive."""
    x = float(x)
    if not math.isfinite(x):
        raise DomainError(f"q_func needs a finite argument, got {x!r}")
    return 0.5 * math.erfc(x / SQRT2)


def q_array(x):
    """Vectorized :func:`q_func` (no domain checks)."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / SQRT2)


def normal_pdf(x: float) -> float:
    return math.exp(-0.5 * x * x) / SQRT2PI


def q_inv(p: float) -> float:
    """Inverse of :func:`q_func` by bracketing plus safeguarded Newton."""
    p = float(p)
    if not (0.0 < p < 1.0):
        raise DomainError(f"q_inv needs p in (0, 1), got {p!r}")
    if p == 0.5:
        return 0.0
    if p > 0.5:
        # Q(-x) = 1 - Q(x); 1 - p is exact for p >= 0.5
        return -q_inv(1.0 - p)

    # p < 0.5, root is positive. Work on log Q to keep deep tails well scaled.
    target = math.log(p)
    lo, hi = 0.0, 1.0
    while q_func(hi) > p:
        lo, hi = hi, 2.0 * hi
    x = 0.5 * (lo + hi)
    for _ in range(200):
        q = q_func(x)
        if q == 0.0:
            hi = x
            x = 0.5 * (lo + hi)
            continue
        f = math.log(q) - target
        if f > 0:
            lo = x
        else:
            hi = x
        step = f * q / normal_pdf(x)  # f / (d log Q / dx) with sign flipped
        x_new = x + step
        if not (lo < x_new < hi):
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= 1e-15 * max(1.0, abs(x)):
            x = x_new
            break
        x = x_new
    return x


# --------------------------------------------------------------------------
# capacity, dispersion, auxiliary variable
# --------------------------------------------------------------------------

def capacity_dispersion(gamma: float) -> tuple[float, float]:
    """Shannon capacity (bits/use) and dispersion of the real AWGN channel."""
    gamma = float(gamma)
    if not (math.isfinite(gamma) and gamma > 0):
        raise DomainError(f"SNR must be positive, got {gamma!r}")
    c = math.log1p(gamma) / LN2
    v = gamma * (gamma + 2.0) / (1.0 + gamma) ** 2
    return c, v


def _w(m: float, gamma: float, d_bits: float) -> float:
    v = gamma * (gamma + 2.0) / (1.0 + gamma) ** 2
    return math.sqrt(m / v) * (math.log1p(gamma) - d_bits / m * LN2)


def channel_w(point: LinkPoint) -> float:
    """Argument of Q in the error model; non-negative iff capacity >= rate."""
    return _w(point.m, point.gamma, point.d_bits)


def error_probability(point: LinkPoint) -> float:
    return q_func(channel_w(point))


def error_probability_array(m, gamma, d_bits):
    """Broadcasting version of :func:`error_probability` over numpy arrays."""
    m = np.asarray(m, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    v = gamma * (gamma + 2.0) / (1.0 + gamma) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.sqrt(m / v) * (np.log1p(gamma) - d_bits / m * LN2)
    # gamma -> 0 sends w to -inf: the packet is certainly lost
    w = np.where(gamma > 0, w, -np.inf)
    return q_array(w)


def achievable_rate(gamma: float, m: float, eps0: float) -> float:
    """Largest rate in bits per use reaching error ``eps0``.

    The dispersion is in nats squared, so the penalty carries log2(e); this
    makes the rate the exact inverse of :func:`error_probability`.
    """
    if not (math.isfinite(m) and m > 0):
        raise DomainError(f"blocklength must be positive, got {m!r}")
    c, v = capacity_dispersion(gamma)
    return c - math.sqrt(v / m) * q_inv(eps0) / LN2


def error_linear(point: LinkPoint, verbatim: bool = False) -> float:
    """Three-segment linearization of the error in SNR.

    The slope magnitude is used (the segment must fall with SNR).  By default
    the rate is converted to nats before exponentiating, which makes the middle
    segment the tangent of the exact curve at its 0.5 crossing.  ``verbatim``
    exponentiates the rate in bits as printed in the literature.
    """
    r = point.rate if verbatim else point.rate * LN2
    alpha = math.expm1(r)
    mu = math.sqrt(point.m / (2.0 * math.pi * math.expm1(2.0 * r)))
    half = 0.5 / mu
    gamma = point.gamma
    if gamma < alpha - half:
        return 1.0
    if gamma >= alpha + half:
        return 0.0
    return 0.5 - mu * (gamma - alpha)


def error_unit_dispersion(point: LinkPoint) -> float:
    """Error model with the dispersion frozen at 1 (high-SNR simplification)."""
    c = math.log1p(point.gamma) / LN2
    return q_func(math.sqrt(point.m) * (c - point.rate) * LN2)


# --------------------------------------------------------------------------
# analytic derivatives of w
# --------------------------------------------------------------------------

def _delta_terms(gamma: float, r: float) -> tuple[float, float, float, float, float, float]:
    """Delta_1..Delta_6 of the determinant analysis (closed forms)."""
    s = gamma * gamma + 2.0 * gamma
    lg = math.log1p(gamma)
    c = lg / LN2
    d1 = s - lg
    d2 = -(gamma + 1.0) ** 3 + 1.0 / (gamma + 1.0) + 3.0 * (gamma + 1.0) * lg
    d3 = (c / (s * LN2) - 3.0 * c * c / (4.0 * s) + c / (4.0 * LN2)
          - 1.0 / (4.0 * LN2 * LN2) - 3.0 * c * c / (5.0 * s * s))
    d4 = 3.0 * r / (4.0 * LN2) - 3.0 * r * c / (2.0 * s) - 2.0 * r * c / (s * s)
    d5 = (2.0 * r / (s * LN2) + 9.0 * r * r / (4.0 * s) + 2.0 * r * r / (s * s)
          - 2.0 * c * c / (5.0 * s * s))
    k = 9.0 * (gamma + 1.0) ** 2 - 1.0
    d6 = 2.0 / (LN2 * k) * (-2.0 * s + math.sqrt(4.0 * s * s + 0.4 * k * lg * lg))
    return d1, d2, d3, d4, d5, d6


def det_h_from_deltas(m: float, gamma: float, r: float) -> float:
    """det of the Hessian of w rebuilt from Delta_3 + Delta_4 + Delta_5.

    The prefactor is ln(2)^2 / (m (gamma^2 + 2 gamma)); a single ln(2) is off by
    exactly that factor against the product form.
    """
    _, _, d3, d4, d5, _ = _delta_terms(gamma, r)
    s = gamma * gamma + 2.0 * gamma
    return LN2 * LN2 / (m * s) * (d3 + d4 + d5)


def w_partials(m: float, gamma: float, d_bits: float):
    """(w, w_m, w_g, w_mm, w_gg, w_mg) without region checks.  Hot path."""
    gp1 = gamma + 1.0
    s = gamma * (gamma + 2.0)
    v = s / (gp1 * gp1)
    lg = math.log1p(gamma)
    c = lg / LN2
    r = d_bits / m
    sv = math.sqrt(v)
    sm = math.sqrt(m)
    w = sm / sv * (lg - r * LN2)

    dl = d_bits * LN2
    wm = 0.5 / (sm * sv) * (c * LN2 + dl / m)
    wmm = -0.25 / (m * sm * sv) * (c * LN2 + 3.0 * dl / m)
    wg = sm / sv * (s - lg) / (s * gp1) + dl / (sm * v * sv * gp1 ** 3)
    wgg = sm / s ** 2.5 * (-gp1 ** 3 + 1.0 / gp1 + 3.0 * gp1 * lg - 3.0 * LN2 * gp1 * r)
    wmg = LN2 / (2.0 * sm * sv * gp1) * (-(c + r) / s + 1.0 / LN2)
    return w, wm, wg, wmm, wgg, wmg


def w_derivatives(point: LinkPoint) -> FblCurvature:
    gamma = point.gamma
    if gamma < 1.0:
        raise RegionError(f"derivative sign analysis needs SNR >= 1, got {gamma:.6g}")
    _, wm, wg, wmm, wgg, wmg = w_partials(point.m, gamma, point.d_bits)
    det = wmm * wgg - wmg * wmg
    det_split = det_h_from_deltas(point.m, gamma, point.rate)
    scale = abs(wmm * wgg) + wmg * wmg
    if abs(det - det_split) > 1e-9 * scale:
        raise NumericalError(
            "Hessian determinant disagrees with its Delta decomposition",
            {"product": det, "split": det_split, "scale": scale},
        )
    return FblCurvature(wm, wg, wmm, wgg, wmg, det, det_split)


def error_grad_hess_mp(m: float, p: float, g: float, d_bits: float):
    """Value, gradient and Hessian of the error in (m, p) by the chain rule."""
    w, wm, wg, wmm, wgg, wmg = w_partials(m, g * p, d_bits)
    eps = 0.5 * math.erfc(w / SQRT2)
    phi = normal_pdf(w)
    grad_w = np.array([wm, g * wg])
    hess_w = np.array([[wmm, g * wmg], [g * wmg, g * g * wgg]])
    grad = -phi * grad_w
    hess = phi * (w * np.outer(grad_w, grad_w) - hess_w)
    return eps, grad, hess


def w_partials_array(m, gamma, d_bits):
    """Broadcasting twin of :func:`w_partials` over numpy arrays."""
    m = np.asarray(m, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    gp1 = gamma + 1.0
    s = gamma * (gamma + 2.0)
    v = s / (gp1 * gp1)
    lg = np.log1p(gamma)
    c = lg / LN2
    r = d_bits / m
    sv = np.sqrt(v)
    sm = np.sqrt(m)
    dl = d_bits * LN2
    w = sm / sv * (lg - r * LN2)
    wm = 0.5 / (sm * sv) * (c * LN2 + dl / m)
    wmm = -0.25 / (m * sm * sv) * (c * LN2 + 3.0 * dl / m)
    wg = sm / sv * (s - lg) / (s * gp1) + dl / (sm * v * sv * gp1**3)
    wgg = sm / s**2.5 * (-gp1**3 + 1.0 / gp1 + 3.0 * gp1 * lg - 3.0 * LN2 * gp1 * r)
    wmg = LN2 / (2.0 * sm * sv * gp1) * (-(c + r) / s + 1.0 / LN2)
    return w, wm, wg, wmm, wgg, wmg
