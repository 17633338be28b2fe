import itertools
import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy.optimize import brentq

from fblopt.allocator import (
    AllocationProblem,
    AllocationResult,
    curvature_margins,
    enumeration_count,
    error_ab,
    power_level,
    round_solution,
    solve_alternating,
    solve_integer,
    solve_joint,
    validate,
)
from fblopt.errors import InfeasibleError, ResourceError, UsageError
from fblopt.fbl import LinkPoint, error_probability, error_probability_array, q_func
from fblopt.region import convexity_condition
from fblopt.solver import SolveStats


def problem(n=2, d=480.0, g=1.0, M=800.0, E=2400.0, **kw):
    d = d if isinstance(d, tuple) else (d,) * n
    g = g if isinstance(g, tuple) else (g,) * n
    return AllocationProblem(d_bits=d, gain=g, m_total=M, e_total=E, **kw)


def check_invariants(pr, res):
    m, p = res.m, res.p
    assert m.sum() <= pr.m_total * (1 + 1e-9)
    assert (m * p).sum() <= pr.e_total * (1 + 1e-9)
    assert np.all(res.eps <= pr.eps_max * (1 + 1e-9))
    assert np.all(np.asarray(pr.gain) * p >= pr.gamma_th * (1 - 1e-9))
    assert res.objective == max(res.eps)


# ------------------------------------------------------------------ problem

def test_problem_validation():
    with pytest.raises(UsageError):
        AllocationProblem(d_bits=(), gain=(), m_total=800, e_total=2400)
    with pytest.raises(UsageError):
        problem(d=(480.0, -1.0))
    with pytest.raises(UsageError):
        problem(M=0.0)
    with pytest.raises(UsageError):
        problem(eps_max=0.5)
    with pytest.raises(UsageError):
        AllocationProblem(d_bits=(480.0,), gain=(1.0, 1.0), m_total=800, e_total=2400)


def test_problem_dict_roundtrip():
    pr = problem(d=(400.0, 500.0), g=(1.0, 2.0), eps_max=0.05)
    assert AllocationProblem.from_dict(pr.to_dict()) == pr


# ----------------------------------------------------------------- validate

def test_validate_reference_setup_in_region():
    verdicts = validate(problem(n=5))
    assert len(verdicts) == 5 and all(v.in_region for v in verdicts)


def test_validate_low_rate_flagged():
    # r = 0.01 for every user even with all channel uses
    verdicts = validate(problem(n=2, d=8.0))
    assert all(not v.cond_rate_ok and not v.in_region for v in verdicts)


def test_validate_flags_low_snr_threshold():
    assert not any(v.in_region for v in validate(problem(gamma_th=0.5)))


def test_validate_rejects_non_problem():
    with pytest.raises(UsageError):
        validate({"n_users": 0})


# --------------------------------------------------------------- substitution

@given(st.floats(10.0, 5000.0), st.floats(0.01, 50.0))
def test_substitution_roundtrip(m, p):
    a, b = 1.0 / m, math.sqrt(p)
    assert 1.0 / a == pytest.approx(m, rel=4e-16)
    assert b * b == pytest.approx(p, rel=4e-16)
    # both coordinate systems evaluate the same closed form on the same (m, SNR)
    eps_ab = error_ab(a, b, 2.0, 480.0)[0]
    from fblopt.allocator import _eps
    assert eps_ab == _eps(1.0 / a, 2.0 * b * b, 480.0)


def _relative_fd(a, b, g, d):
    # central differences with steps relative to each coordinate
    f = lambda aa, bb: error_ab(aa, bb, g, d)[0]
    ha, hb = 1e-6 * a, 1e-6 * b
    return np.array([(f(a + ha, b) - f(a - ha, b)) / (2 * ha), (f(a, b + hb) - f(a, b - hb)) / (2 * hb)])


def test_ab_gradients_500_points():
    rng = np.random.default_rng(11)
    done = 0
    while done < 500:
        m = math.exp(rng.uniform(math.log(100), math.log(2000)))
        gamma = math.exp(rng.uniform(0, math.log(30)))
        d = rng.uniform(50, 1500)
        pt = LinkPoint.from_snr(m, gamma, d)
        eps = error_probability(pt)
        if not convexity_condition(pt).in_region or eps < 1e-250:
            continue
        done += 1
        _, grad, hess = error_ab(1 / m, math.sqrt(gamma), 1.0, d)
        fd = _relative_fd(1 / m, math.sqrt(gamma), 1.0, d)
        np.testing.assert_allclose(grad, fd, rtol=1e-5)
        # curvature along each coordinate is non-negative on the region
        assert hess[0, 0] >= 0 and hess[1, 1] >= 0


def test_ab_hessian_indefinite_near_unit_snr():
    # in-region point whose (a, b) Hessian has a negative determinant; 60-digit
    # finite differences of the closed form give det = -1540.6
    m, gamma, d = 271.05105146270813, 1.2548297119452767, 262.5958088751575
    assert convexity_condition(LinkPoint.from_snr(m, gamma, d)).in_region
    _, _, hess = error_ab(1 / m, math.sqrt(gamma), 1.0, d)
    assert np.linalg.det(hess) == pytest.approx(-1540.6158, rel=1e-3)
    assert hess[0, 0] > 0 and hess[1, 1] > 0


@given(st.floats(50.0, 5000.0), st.floats(1.0, 100.0), st.floats(20.0, 2000.0))
def test_curvature_margins_nonnegative(m, gamma, d):
    assume(error_probability(LinkPoint.from_snr(m, gamma, d)) <= 0.1)
    x2, x3 = curvature_margins(m, gamma, d)
    assert x2 >= 0 and x3 >= 0


# -------------------------------------------------------------------- joint

def test_joint_single_user_exhausts_budgets():
    pr = problem(n=1)
    res = solve_joint(pr)
    assert res.m[0] == pytest.approx(800.0, rel=1e-6)
    assert res.p[0] == pytest.approx(3.0, rel=1e-6)
    assert res.binding == {"blocklength": True, "energy": True}
    check_invariants(pr, res)


def test_joint_single_user_matches_boundary_grid():
    # eps falls in m and p, so the optimum lies on p = E/m; scan m there
    pr = problem(n=1, M=800.0, E=2400.0)
    ms = np.linspace(300, 800, 5001)
    grid = error_probability_array(ms, 2400.0 / ms, 480.0)
    assert ms[np.argmin(grid)] == 800.0
    assert solve_joint(pr).objective == pytest.approx(grid.min(), rel=1e-6)


def test_joint_identical_users_symmetric():
    pr = problem(n=2)
    res = solve_joint(pr)
    np.testing.assert_allclose(res.m, [400.0, 400.0], rtol=1e-3)
    np.testing.assert_allclose(res.p, [3.0, 3.0], rtol=1e-3)
    check_invariants(pr, res)


def test_joint_infeasible_energy():
    # one channel use short of the SNR floor at every blocklength near the error cap
    with pytest.raises(InfeasibleError):
        solve_joint(problem(n=1, E=100.0))


def grid_oracle(pr, n=200, passes=2, window=5):
    """min over (m1, e1) with both budgets binding, dense grid plus zoom passes."""
    M, E = pr.m_total, pr.e_total
    g, d = pr.gain, pr.d_bits
    lo_m, hi_m, lo_e, hi_e = 1.0, M - 1.0, 1e-9, E - 1e-9
    for _ in range(passes + 1):
        m1 = np.linspace(lo_m, hi_m, n)[:, None]
        e1 = np.linspace(lo_e, hi_e, n)[None, :]
        f = np.maximum(error_probability_array(m1, g[0] * e1 / m1, d[0]),
                       error_probability_array(M - m1, g[1] * (E - e1) / (M - m1), d[1]))
        i, j = np.unravel_index(np.argmin(f), f.shape)
        best = f[i, j]
        dm, de = (hi_m - lo_m) / (n - 1), (hi_e - lo_e) / (n - 1)
        cm, ce = m1[i, 0], e1[0, j]
        lo_m, hi_m = max(1.0, cm - window * dm), min(M - 1.0, cm + window * dm)
        lo_e, hi_e = max(1e-9, ce - window * de), min(E - 1e-9, ce + window * de)
    return best


def split_oracle(pr, n=200, passes=3):
    """1-D grid over m1; for each, the energy split equalizing both errors."""
    M, E = pr.m_total, pr.e_total
    g, d = pr.gain, pr.d_bits

    def value(m1):
        f = lambda e1: error_probability(LinkPoint(m1, e1 / m1, g[0], d[0])) - \
            error_probability(LinkPoint(M - m1, (E - e1) / (M - m1), g[1], d[1]))
        e1 = brentq(f, 1e-9, E - 1e-9, xtol=1e-13)
        return error_probability(LinkPoint(m1, e1 / m1, g[0], d[0]))

    lo, hi = 1.0, M - 1.0
    for _ in range(passes + 1):
        ms = np.linspace(lo, hi, n)
        vals = [value(m) for m in ms]
        k = int(np.argmin(vals))
        step = (hi - lo) / (n - 1)
        lo, hi = max(1.0, ms[k] - 2 * step), min(M - 1.0, ms[k] + 2 * step)
    return vals[k]


@pytest.mark.parametrize("gains,d", [((1.0, 1.0), (200.0, 200.0)), ((1.0, 2.0), (200.0, 260.0))])
def test_joint_matches_grid_oracles(gains, d):
    pr = AllocationProblem(d_bits=d, gain=gains, m_total=300.0, e_total=600.0)
    res = solve_joint(pr)
    grid = grid_oracle(pr)
    assert res.objective <= grid * (1 + 1e-9)
    assert res.objective == pytest.approx(grid, rel=1e-4)
    assert res.objective == pytest.approx(split_oracle(pr), rel=1e-6)


def test_joint_reports_region_warning():
    res = solve_joint(problem(n=2, d=8.0, M=800.0, E=400.0))
    assert res.warnings


# ------------------------------------------------------------------ integer

def test_enumeration_count_cap_arithmetic():
    assert enumeration_count(10, 1) == 10
    assert enumeration_count(800, 3) == math.comb(800, 3) > 2e7
    with pytest.raises(ResourceError):
        solve_integer(problem(n=3))


def test_integer_single_user():
    pr = problem(n=1, d=8.0, M=10.0, E=30.0)
    res = solve_integer(pr)
    assert res.info["enumerated"] == 10
    assert res.m[0] == 10.0
    check_invariants(pr, res)


def _oracle_level(pr, m):
    """Best common w level at fixed blocklengths by nested bisection."""
    g, d = np.asarray(pr.gain), pr.d_bits
    w = lambda mm, gm, dd: math.sqrt(mm / (1 - 1 / (1 + gm) ** 2)) * (math.log1p(gm) - dd / mm * math.log(2))

    def energy(s):
        tot = 0.0
        for i in range(len(m)):
            lo = pr.gamma_th
            if w(m[i], lo, d[i]) < s:
                hi = lo
                while w(m[i], hi, d[i]) < s:
                    hi *= 2
                lo = brentq(lambda gm: w(m[i], gm, d[i]) - s, lo, hi, xtol=1e-14, rtol=1e-15)
            tot += m[i] * lo / g[i]
        return tot

    s_lo = min(w(m[i], pr.gamma_th, d[i]) for i in range(len(m)))
    if energy(s_lo) > pr.e_total:
        return None
    s_hi = s_lo + 1.0
    while energy(s_hi) <= pr.e_total:
        s_hi += 2 * (s_hi - s_lo)
    s = brentq(lambda s: energy(s) - pr.e_total, s_lo, s_hi, xtol=1e-13)
    return s


def brute_force(pr):
    best = None
    M = int(pr.m_total)
    for m in itertools.product(range(1, M + 1), repeat=pr.n_users):
        if sum(m) > M:
            continue
        s = _oracle_level(pr, m)
        if s is None or q_func(s) > pr.eps_max:
            continue
        if best is None or s > best[0]:
            best = (s, m)
    return best


@pytest.mark.parametrize("args", [
    dict(d=(20.0, 20.0), g=(1.0, 1.0), M=30.0, E=90.0),
    dict(d=(15.0, 25.0), g=(0.7, 2.0), M=26.0, E=70.0),
])
def test_integer_matches_brute_force(args):
    pr = problem(**args)
    s, m = brute_force(pr)
    res = solve_integer(pr)
    assert res.objective == pytest.approx(q_func(s), rel=1e-6)
    assert tuple(res.m) == tuple(float(v) for v in m)
    check_invariants(pr, res)


def test_integer_tie_breaks_lexicographically():
    pr = problem(n=2, d=20.0, M=41.0, E=120.0)
    res = solve_integer(pr)
    assert tuple(res.m) == (20.0, 21.0)


def test_integer_versus_rounded_joint():
    # E keeps the SNR within [1, 4]
    pr = problem(n=2, d=20.0, M=60.0, E=150.0)
    joint = solve_joint(pr)
    assert 1.0 <= joint.p.min() and joint.p.max() <= 4.0
    integer = solve_integer(pr)
    rounded = round_solution(pr, joint)
    assert integer.objective == pytest.approx(rounded.objective, rel=1e-3)
    assert integer.objective >= joint.objective * (1 - 1e-9)


def test_integer_infeasible():
    with pytest.raises(InfeasibleError):
        solve_integer(problem(n=2, d=20.0, M=20.0, E=10.0))


def test_power_level_equalizes_users():
    pr = problem(n=3, d=(300.0, 400.0, 500.0), g=(1.0, 2.0, 0.5), M=900.0, E=2000.0)
    s, p = power_level(pr, np.array([250.0, 300.0, 350.0]))
    m = np.array([250.0, 300.0, 350.0])
    assert (m * p).sum() == pytest.approx(2000.0, rel=1e-9)
    eps = [error_probability(LinkPoint(m[i], p[i], pr.gain[i], pr.d_bits[i])) for i in range(3)]
    np.testing.assert_allclose(eps, q_func(s), rtol=1e-8)


# -------------------------------------------------------------- alternating

def test_alternating_identical_users_matches_joint():
    pr = problem(n=2)
    alt = solve_alternating(pr)
    joint = solve_joint(pr)
    assert alt.objective == pytest.approx(joint.objective, rel=1e-6)
    assert alt.info["rounds"] >= 1
    check_invariants(pr, alt)


def test_alternating_bad_init():
    pr = problem(n=2)
    with pytest.raises(UsageError):
        solve_alternating(pr, p_init=[0.5, 3.0])
    with pytest.raises(UsageError):
        solve_alternating(pr, p_init=[3.0])


def test_alternating_gap_study():
    # gains 100 and 400 (z = 1 and 4 over a noise power of 0.01), energy scaled to match
    pr = problem(n=2, g=(100.0, 400.0), E=24.0)
    joint = solve_joint(pr)
    adversarial = solve_alternating(pr, p_init=[pr.p_min[0], 0.15])
    assert adversarial.objective - joint.objective >= -1e-9
    rng = np.random.default_rng(50)
    gaps = []
    while len(gaps) < 50:
        p0 = np.exp(rng.uniform(np.log(pr.p_min), np.log(0.24)))
        try:
            alt = solve_alternating(pr, p_init=p0)
        except UsageError:
            continue
        gaps.append(alt.objective - joint.objective)
    assert min(gaps) >= -1e-9
    assert min(gaps) <= 1e-4
    assert max(gaps) > 0


@given(st.floats(0.5, 4.0), st.floats(0.5, 4.0), st.floats(10, 40), st.floats(2.5, 8.0))
def test_dominance_property(g1, g2, d, u):
    pr = problem(n=2, d=(round(d), round(d * 1.1)), g=(g1, g2), M=50.0, E=50.0 * u)
    try:
        joint = solve_joint(pr)
    except InfeasibleError:
        assume(False)
    alt = solve_alternating(pr)
    rounded = round_solution(pr, joint)
    assert joint.objective <= alt.objective + 1e-9
    assert joint.objective <= rounded.objective * (1 + 1e-9)
    for res in (joint, alt, rounded):
        check_invariants(pr, res)


# ----------------------------------------------------------------- rounding

def _fake(m, p):
    m = np.asarray(m, float)
    p = np.asarray(p, float)
    return AllocationResult("joint", m, p, np.zeros(m.size), 0.0, {}, SolveStats())


def test_rounding_neighbourhood_example():
    pr = problem(n=2)
    res = round_solution(pr, _fake([399.6, 400.4], [3.0, 3.0]))
    # (399, 401) and (400, 401) break the budget; (400, 400) beats (399, 400)
    assert tuple(res.m) == (400.0, 400.0)
    assert res.method == "joint+round"
    check_invariants(pr, res)


def test_rounding_integer_input_unchanged():
    pr = problem(n=2)
    joint = solve_joint(pr)
    res = round_solution(pr, _fake([400.0, 400.0], joint.p))
    assert tuple(res.m) == (400.0, 400.0)
    np.testing.assert_allclose(res.p, [3.0, 3.0], rtol=1e-6)
    assert res.objective == max(res.eps)


def test_rounding_greedy_branch_matches_exhaustive():
    pr = problem(n=3, d=(20.0, 25.0, 30.0), g=(1.0, 1.5, 2.0), M=61.0, E=200.0)
    joint = solve_joint(pr)
    a = round_solution(pr, joint)
    b = round_solution(pr, joint, max_exhaustive=0)
    assert b.objective == pytest.approx(a.objective, rel=1e-3)
    check_invariants(pr, b)


def test_rounding_no_feasible_neighbour():
    pr = problem(n=2, d=20.0, M=41.0, E=120.0)
    with pytest.raises(InfeasibleError):
        round_solution(pr, _fake([2.5, 2.5], [3.0, 3.0]))


# ---------------------------------------------------------- budget monotone

def test_budget_monotone_reference_setup():
    objs = [solve_joint(problem(n=2, M=M)).objective for M in (600.0, 800.0, 1000.0)]
    assert objs[0] > objs[1] > objs[2]
