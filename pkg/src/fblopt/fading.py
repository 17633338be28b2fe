"""Expected error over a quasi-static fading channel.

Two cases:

* perfect CSI: the transmitter adapts (m, p) per channel state, so the expected
  error is a weighted sum over the quantized states (:func:`solve_per_state`);
* average CSI: a single (m, p) is used for every realization
  (:func:`expected_error_avg`, :func:`solve_avg_csi`).

Channel gains ``z`` are power gains |h|^2; the receive SNR is ``z p / sigma2``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np
from scipy.special import erfc

from .allocator import _budget_constraints_ab, scaled_minimize
from .errors import InfeasibleError, ModelError, UsageError
from .fbl import LN2, SQRT2, error_probability_array, w_partials_array
from .region import _golden
from .solver import SolveStats

KINDS = ("rayleigh-power", "point-mass", "tabulated")


@dataclass(frozen=True)
class FadingModel:
    """Distribution of the channel power gain.

    ``rayleigh-power``: exponential with ``mean``; ``point-mass``: always
    ``location``; ``tabulated``: piecewise-linear pdf through ``(z, pdf)``.
    """

    kind: str = "rayleigh-power"
    mean: float = 1.0
    location: float | None = None
    z: tuple | None = None
    pdf: tuple | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError(f"unknown fading kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "rayleigh-power" and not (self.mean > 0 and math.isfinite(self.mean)):
            raise ModelError("rayleigh-power needs a positive mean")
        if self.kind == "point-mass":
            if self.location is None or not (self.location > 0 and math.isfinite(self.location)):
                raise ModelError("point-mass needs a positive location")
        if self.kind == "tabulated":
            if self.z is None or self.pdf is None:
                raise ModelError("tabulated model needs z and pdf samples")
            z = np.asarray(self.z, float)
            f = np.asarray(self.pdf, float)
            object.__setattr__(self, "z", tuple(z.tolist()))
            object.__setattr__(self, "pdf", tuple(f.tolist()))
            if z.ndim != 1 or z.size < 2 or z.size != f.size:
                raise ModelError("z and pdf must be 1-D with equal length >= 2")
            if np.any(np.diff(z) <= 0) or z[0] < 0:
                raise ModelError("tabulated z must be non-negative and strictly increasing")
            if np.any(f < 0) or not np.all(np.isfinite(f)):
                raise ModelError("pdf must be non-negative and finite")
            total = float(np.trapezoid(f, z))
            if abs(total - 1.0) > 1e-9:
                raise ModelError(f"tabulated pdf integrates to {total!r}, not 1")

    def quantile(self, u):
        """Inverse CDF at probabilities ``u`` in (0, 1)."""
        u = np.asarray(u, float)
        if self.kind == "rayleigh-power":
            return -self.mean * np.log1p(-u)
        if self.kind == "point-mass":
            return np.full_like(u, self.location)
        return self._tab_quantile(u)

    def _tab_quantile(self, u):
        z = np.asarray(self.z)
        f = np.asarray(self.pdf)
        dz = np.diff(z)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (f[:-1] + f[1:]) * dz)])
        if np.any(u > cdf[-1]) or np.any(u < 0):
            raise ModelError("quantile outside the tabulated support")
        k = np.clip(np.searchsorted(cdf, u, side="right") - 1, 0, z.size - 2)
        # pdf is linear on each segment, so the CDF is quadratic: solve for the offset
        f0 = f[k]
        slope = (f[k + 1] - f0) / dz[k]
        rem = u - cdf[k]
        with np.errstate(invalid="ignore", divide="ignore"):
            disc = np.sqrt(np.maximum(f0 * f0 + 2.0 * slope * rem, 0.0))
            t_quad = 2.0 * rem / (f0 + disc)
        t = np.where(f0 + disc > 0, t_quad, 0.0)
        return np.minimum(z[k] + t, z[k + 1])

    def sample(self, rng: np.random.Generator, n: int):
        u = rng.random(n)
        if self.kind == "rayleigh-power":
            # inverse-CDF transform; 1 - u lies in (0, 1] so the log is finite
            return -self.mean * np.log1p(-u)
        return self.quantile(u)

    def to_dict(self) -> dict:
        if self.kind == "rayleigh-power":
            return {"kind": self.kind, "mean": self.mean}
        if self.kind == "point-mass":
            return {"kind": self.kind, "location": self.location}
        return {"kind": self.kind, "z": list(self.z), "pdf": list(self.pdf)}

    @classmethod
    def from_dict(cls, data: dict) -> "FadingModel":
        allowed = {"kind", "mean", "location", "z", "pdf"}
        extra = set(data) - allowed
        if extra:
            raise UsageError(f"unknown fading field(s): {sorted(extra)}")
        return cls(**data)


@dataclass(frozen=True)
class QuantizedChannel:
    states: np.ndarray
    z_th: float = 0.0

    @property
    def phi(self) -> int:
        return int(self.states.size)

    @property
    def weight(self) -> float:
        return 1.0 / self.phi

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.phi, self.weight)

    @property
    def active(self) -> np.ndarray:
        return self.states >= self.z_th


def z_threshold(d_bits: float, m_max: float, p_max: float, sigma2: float) -> float:
    """Gain below which even (m_max, p_max) cannot reach capacity above the rate."""
    return sigma2 * math.expm1(d_bits / m_max * LN2) / p_max


def quantize(model: FadingModel, phi: int, z_th: float = 0.0) -> QuantizedChannel:
    """Equal-mass states at the (k - 1/2)/phi quantiles, k = 1..phi."""
    if not isinstance(phi, (int, np.integer)) or phi < 1:
        raise UsageError(f"phi must be a positive integer, got {phi!r}")
    u = (np.arange(1, phi + 1) - 0.5) / phi
    return QuantizedChannel(states=np.asarray(model.quantile(u), float), z_th=float(z_th))


def _mean(values) -> float:
    # fsum keeps the 1/phi weights summing to one without drift
    return math.fsum(np.asarray(values, float).tolist()) / len(values)


def _eps_policy(states, m, p, d_bits, sigma2):
    m = np.asarray(m, float)
    p = np.asarray(p, float)
    out = np.ones(states.size)
    ok = (m > 0) & (p > 0) & (states > 0)
    if np.any(ok):
        out[ok] = error_probability_array(m[ok], states[ok] * p[ok] / sigma2, d_bits)
    return out


def expected_error_csi(channel: QuantizedChannel, m, p, d_bits: float, sigma2: float) -> float:
    """Weighted error of a per-state policy; dropped states count as lost packets."""
    m = np.broadcast_to(np.asarray(m, float), np.shape(m))
    p = np.broadcast_to(np.asarray(p, float), np.shape(p))
    if m.shape != (channel.phi,) or p.shape != (channel.phi,):
        raise UsageError(f"policy must have one (m, p) per state ({channel.phi})")
    eps = _eps_policy(channel.states, m, p, d_bits, sigma2)
    eps[~channel.active] = 1.0
    return _mean(eps)


def expected_error_avg(model: FadingModel, m: float, p: float, d_bits: float, sigma2: float,
                       quad_points: int = 1024) -> float:
    """Midpoint rule on the probability axis for a fixed (m, p).

    No drop rule: a fixed policy is always transmitted and simply fails with
    the model error at low gain.
    """
    if quad_points < 16:
        raise UsageError("quad_points must be at least 16")
    u = (np.arange(1, quad_points + 1) - 0.5) / quad_points
    z = model.quantile(u)
    return _mean(error_probability_array(m, z * p / sigma2, d_bits))


def monte_carlo_error(model: FadingModel, m: float, p: float, d_bits: float, sigma2: float,
                      n_samples: int, seed: int = 0, chunk: int = 1 << 20) -> float:
    """Sample mean of the error over i.i.d. gain draws.

    Draws come from numpy's MT19937 (Mersenne Twister) seeded with ``seed``,
    uniform doubles transformed by the inverse CDF.
    """
    if n_samples < 1:
        raise UsageError("n_samples must be >= 1")
    rng = np.random.Generator(np.random.MT19937(seed))
    total = 0.0
    left = n_samples
    while left > 0:
        k = min(chunk, left)
        z = model.sample(rng, k)
        total += math.fsum(error_probability_array(m, z * p / sigma2, d_bits).tolist())
        left -= k
    return total / n_samples


# --------------------------------------------------------------------------
# perfect CSI: per-state allocation
# --------------------------------------------------------------------------

@dataclass
class PerStatePolicy:
    m: np.ndarray
    p: np.ndarray
    objective: float
    stats: SolveStats
    info: dict = field(default_factory=dict)


def _state_errors_ab(a, b, g, d_bits):
    """Per-state eps, gradient and 2x2 Hessian blocks in (a, b), vectorized."""
    m = 1.0 / a
    with np.errstate(invalid="ignore", divide="ignore"):
        # a <= 0 yields NaN, which the line search treats as leaving the domain
        w, wm, wg, wmm, wgg, wmg = w_partials_array(m, g * b * b, d_bits)
    dgam = 2.0 * g * b
    wa = -wm * m * m
    wb = wg * dgam
    waa = wmm * m**4 + 2.0 * wm * m**3
    wbb = wgg * dgam * dgam + 2.0 * g * wg
    wab = -wmg * m * m * dgam
    phi = np.exp(-0.5 * w * w) / math.sqrt(2.0 * math.pi)
    eps = 0.5 * erfc(w / SQRT2)
    return eps, -phi * wa, -phi * wb, phi * (w * wa * wa - waa), phi * (w * wa * wb - wab), phi * (w * wb * wb - wbb)


def solve_per_state(channel: QuantizedChannel, d_bits: float, sigma2: float, m_bar: float,
                    e_bar: float, eps_max: float | None = None, gamma_th: float | None = None) -> PerStatePolicy:
    """Minimize the expected error over per-state (m, p) with average budgets.

    Budgets: mean blocklength <= m_bar and mean energy m p <= e_bar over the
    equally likely states.  States below ``z_th`` get m = p = 0 and count as
    lost.  Active states keep at least one channel use and, when given, SNR >=
    gamma_th and error <= eps_max.
    """
    start = time.perf_counter()
    if not (m_bar > 0 and e_bar > 0 and sigma2 > 0 and d_bits > 0):
        raise UsageError("budgets, payload and noise power must be positive")
    phi = channel.phi
    act = np.flatnonzero(channel.active)
    m_out = np.zeros(phi)
    p_out = np.zeros(phi)
    if act.size == 0:
        return PerStatePolicy(m_out, p_out, 1.0, SolveStats(), {"active": 0})
    k = act.size
    g = channel.states[act] / sigma2
    p_floor = np.zeros(k) if gamma_th is None else gamma_th / g
    if float(np.sum(p_floor)) > phi * e_bar or k > phi * m_bar:
        raise InfeasibleError("budgets cannot cover the active states")

    def objective(x):
        a, b = x[:k], x[k:]
        eps, ga, gb, haa, hab, hbb = _state_errors_ab(a, b, g, d_bits)
        grad = np.concatenate([ga, gb]) / phi
        hess = np.zeros((2 * k, 2 * k))
        i = np.arange(k)
        hess[i, i] = haa / phi
        hess[i, i + k] = hess[i + k, i] = hab / phi
        hess[i + k, i + k] = hbb / phi
        return math.fsum(eps.tolist()) / phi, grad, hess

    budget = SimpleNamespace(n_users=k, m_total=phi * m_bar, e_total=phi * e_bar)
    constraints = list(_budget_constraints_ab(budget))
    if eps_max is not None:
        for j in range(k):
            def cap(x, j=j):
                eps, ga, gb, haa, hab, hbb = _state_errors_ab(x[[j]], x[[k + j]], g[[j]], d_bits)
                gr = np.zeros(2 * k)
                gr[j], gr[k + j] = ga[0] / eps_max, gb[0] / eps_max
                h = np.zeros((2 * k, 2 * k))
                h[j, j], h[j, k + j], h[k + j, k + j] = haa[0], hab[0], hbb[0]
                h[k + j, j] = hab[0]
                return eps[0] / eps_max - 1.0, gr, h / eps_max
            constraints.append(cap)

    # uniform hint, raised to the SNR floor and shrunk in m until both budgets are strict
    p0 = np.maximum(np.full(k, e_bar / m_bar), p_floor * 1.001)
    m0 = np.full(k, 0.99 * min(phi * m_bar / k, phi * e_bar / float(p0.sum())))
    x0 = np.concatenate([1.0 / m0, np.sqrt(p0)])
    # a > 0 is enforced by the error model's domain; a log barrier on it would
    # push every state toward short blocklengths
    lower = np.concatenate([np.full(k, -np.inf), np.sqrt(p_floor)])
    upper = np.concatenate([np.ones(k), np.full(k, np.inf)])
    x, stats, passes = scaled_minimize(2 * k, objective, constraints, lower, x0, upper=upper)
    m_out[act] = 1.0 / x[:k]
    p_out[act] = x[k:] ** 2
    stats.wall_time = time.perf_counter() - start
    return PerStatePolicy(
        m_out, p_out, expected_error_csi(channel, m_out, p_out, d_bits, sigma2), stats,
        {"active": int(k), "passes": passes},
    )


# --------------------------------------------------------------------------
# average CSI: one (m, p) for all realizations
# --------------------------------------------------------------------------

@dataclass
class AvgCsiResult:
    m: float
    p: float
    objective: float
    rounds: int
    history: list = field(default_factory=list)


def _line_min(f, lo, hi, tol):
    if hi - lo <= tol:
        x = 0.5 * (lo + hi)
        return x, f(x)
    a, b = _golden(f, lo, hi, tol)
    cands = [lo, 0.5 * (a + b), hi]
    vals = [f(c) for c in cands]
    j = int(np.argmin(vals))
    return cands[j], vals[j]


def solve_avg_csi(model: FadingModel, d_bits: float, sigma2: float, m_bounds, p_bounds,
                  e_bar: float, quad_points: int = 1024, tol: float = 1e-9,
                  max_rounds: int = 100) -> AvgCsiResult:
    """Coordinate descent for the best fixed (m, p) under m p <= e_bar.

    Coordinates are the blocklength and the energy e = m p, each minimized by
    golden section.  In (m, p) the budget couples the two coordinates and the
    search would stop at the first boundary point it reached.
    """
    m_lo, m_hi = map(float, m_bounds)
    p_lo, p_hi = map(float, p_bounds)
    if not (0 < m_lo <= m_hi and 0 < p_lo <= p_hi and e_bar > 0):
        raise InfeasibleError("bounds must be positive and ordered")
    if m_lo * p_lo > e_bar:
        raise InfeasibleError("even the smallest (m, p) exceeds the energy budget",
                              residual=m_lo * p_lo - e_bar)

    def obj(m, e):
        return expected_error_avg(model, m, e / m, d_bits, sigma2, quad_points)

    m = m_lo
    e = min(e_bar, p_hi * m)
    cur = obj(m, e)
    history = [cur]
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        lo, hi = max(m_lo, e / p_hi), min(m_hi, e / p_lo)
        m, cur_m = _line_min(lambda mm: obj(mm, e), lo, hi, 1e-10 * hi)
        lo, hi = p_lo * m, min(e_bar, p_hi * m)
        e, new = _line_min(lambda ee: obj(m, ee), lo, hi, 1e-10 * hi)
        history.append(new)
        if cur - new <= tol * max(new, 1e-300):
            cur = min(cur, new)
            break
        cur = new
    return AvgCsiResult(m=m, p=e / m, objective=obj(m, e), rounds=rounds, history=history)
