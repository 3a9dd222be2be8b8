import dataclasses

import numpy as np
import pytest

from isacsched.network import (
    ConstraintSet,
    RateRequirements,
    Timing,
    avg_rate_lower_bound_independent,
    avg_rate_lower_bound_joint,
    build_constraints_independent,
    build_constraints_joint,
    expected_m_independent,
    expected_m_joint,
    feature_time_used,
    independent_violations,
    quantize_sinr_db,
    spectral_efficiency,
)
from isacsched.model import Device, ClassStatistics, product_moments
from isacsched.sampler import ExplicitBernoulli, enumerate_bernoulli, rng_stream, state_table
from isacsched.sim import ScenarioParams, generate_scenario
from isacsched.solver import McCormickState


# ---------------------------------------------------------------------------
# link adaptation
# ---------------------------------------------------------------------------

def test_spectral_efficiency_floor_value_cap():
    assert spectral_efficiency(-400.0) == 0.05
    assert spectral_efficiency(35.0) == pytest.approx(8.720403360162033, abs=1e-12)
    assert spectral_efficiency(50.0) == 9.6
    assert spectral_efficiency(10.0) < spectral_efficiency(20.0)


def test_quantize_floor_to_grid_and_clip():
    assert quantize_sinr_db(12.3) == 10.0
    assert quantize_sinr_db(5.0) == 5.0
    assert quantize_sinr_db(-0.1) == -5.0
    assert quantize_sinr_db(37.0) == 35.0
    assert quantize_sinr_db(-8.0) == -5.0


# ---------------------------------------------------------------------------
# expected co-active counts
# ---------------------------------------------------------------------------

def test_expected_m_independent_corners():
    assert expected_m_independent(np.ones(4), 2) == 0.0
    assert expected_m_independent(np.zeros(4), 2) == 3.0


def test_expected_m_independent_example_and_enumeration():
    pi = np.array([0.2, 0.5, 0.7])
    assert expected_m_independent(pi, 0) == pytest.approx(0.8, abs=1e-15)
    _, cond = enumerate_bernoulli(pi)
    for k in range(3):
        assert expected_m_independent(pi, k) == pytest.approx(cond[k], abs=1e-12)


def test_expected_m_joint_product_reduces_to_independent():
    rng = rng_stream(3, 0)
    for _ in range(20):
        pi = rng.random(5) * 0.95
        m = product_moments(pi)
        for k in range(5):
            assert expected_m_joint(m, k) == pytest.approx(
                expected_m_independent(pi, k), abs=1e-12)


def test_expected_m_joint_comonotone_and_antithetic():
    com = np.array([[0.5, 0.5], [0.5, 0.5]])
    assert expected_m_joint(com, 0) == pytest.approx(1.0, abs=1e-15)
    anti = np.array([[0.5, 0.0], [0.0, 0.5]])
    assert expected_m_joint(anti, 0) == pytest.approx(0.0, abs=1e-15)


def test_expected_m_joint_always_sensing_rejected():
    m = np.array([[1.0, 0.5], [0.5, 0.5]])
    with pytest.raises(ValueError):
        expected_m_joint(m, 0)


def test_conditional_count_identity_explicit_distributions():
    # closed forms equal the enumeration conditionals for any joint law
    rng = rng_stream(4, 0)
    for k in (2, 3, 4, 6):
        for _ in range(10):
            dist = ExplicitBernoulli(rng.dirichlet(np.ones(2 ** k)))
            moments, cond = enumerate_bernoulli(dist)
            for kk in range(k):
                if moments[kk, kk] >= 1.0 - 1e-12:
                    continue
                assert expected_m_joint(moments, kk) == pytest.approx(
                    cond[kk], abs=1e-12)


# ---------------------------------------------------------------------------
# rate bounds
# ---------------------------------------------------------------------------

def _default_rates(k, e=2.0):
    return RateRequirements(e=np.full(k, e), r_min=np.zeros(k), gamma=0.0,
                            e_std=np.full(k, e))


def test_rate_bound_idle_and_sensing_corners():
    t = Timing()
    k = 4
    rates = _default_rates(k)
    bw = 1e7
    base = rates.e[0] * bw / t.total
    all_idle = avg_rate_lower_bound_independent(np.zeros(k), 0, t, rates, bw)
    assert all_idle == pytest.approx(base * (t.t_w / k + t.t_s / k), rel=1e-12)
    pi = np.zeros(k)
    pi[0] = 1.0
    always_on = avg_rate_lower_bound_independent(pi, 0, t, rates, bw)
    assert always_on == pytest.approx(base * t.t_w / k, rel=1e-12)


def exact_average_rate(pi, k, t, rates, bw):
    """Enumeration of the idle bandwidth share, the Jensen-free reference."""
    pi = np.asarray(pi, dtype=float)
    kk = pi.shape[0]
    tbl = state_table(kk)
    probs = np.prod(np.where(tbl > 0, pi, 1 - pi), axis=1)
    idle = 1.0 - tbl
    share = np.where(idle[:, k] > 0, idle[:, k] / np.maximum(idle.sum(axis=1), 1.0), 0.0)
    return rates.e[k] * bw / t.total * (t.t_w / kk + t.t_s * float(probs @ share))


def test_jensen_bound_never_exceeds_exact_rate():
    rng = rng_stream(5, 0)
    t = Timing()
    bw = 1e7
    for _ in range(200):
        k = int(rng.integers(2, 9))
        pi = rng.random(k)
        rates = _default_rates(k, e=0.5 + 4 * rng.random())
        kk = int(rng.integers(0, k))
        bound = avg_rate_lower_bound_independent(pi, kk, t, rates, bw)
        exact = exact_average_rate(pi, kk, t, rates, bw)
        assert bound <= exact + 1e-12 * max(1.0, exact)


def test_joint_rate_bound_matches_independent_on_products():
    rng = rng_stream(6, 0)
    t = Timing()
    bw = 1e7
    for _ in range(30):
        k = int(rng.integers(2, 6))
        pi = rng.random(k) * 0.97
        rates = _default_rates(k)
        m = product_moments(pi)
        for kk in range(k):
            assert avg_rate_lower_bound_joint(m, kk, t, rates, bw) == pytest.approx(
                avg_rate_lower_bound_independent(pi, kk, t, rates, bw), rel=1e-12)


def test_joint_rate_bound_always_sensing_gets_stall_share():
    t = Timing()
    rates = _default_rates(2)
    bw = 1e7
    m = np.array([[1.0, 0.3], [0.3, 0.3]])
    got = avg_rate_lower_bound_joint(m, 0, t, rates, bw)
    assert got == pytest.approx(rates.e[0] * bw / t.total * t.t_w / 2, rel=1e-12)


def test_feature_time_used_arithmetic():
    stats = ClassStatistics(np.zeros((2, 1)) + [[0.0], [1.0]], np.ones(1), np.ones(1))
    dev = Device(stats, p_max=1.0, p_f=1.0, payload_bits=1e6)
    rates = RateRequirements(e=np.array([0.2]), r_min=np.zeros(1), gamma=0.0,
                             e_std=np.array([0.2]))
    assert feature_time_used(np.zeros(1), [dev], rates, 1e7) == 0.0
    # 1e6 bits over 0.2 * 1e7 bit/s
    assert feature_time_used(np.ones(1), [dev], rates, 1e7) == pytest.approx(0.5, rel=1e-12)


# ---------------------------------------------------------------------------
# constraint builders
# ---------------------------------------------------------------------------

def test_full_box_energy_rows_are_the_fixed_envelopes():
    sc = generate_scenario(ScenarioParams(seed=0, num_devices=3, num_features=2))
    p_max = np.array([d.p_max for d in sc.devices])
    cs = build_constraints_independent(sc, McCormickState.full_box(p_max))
    rows = dict(zip(cs.names, cs.a))
    bts = dict(zip(cs.names, cs.b))
    cost_f = np.array([d.p_f for d in sc.devices]) * sc.timing.t_f
    # pi * P <= pi * p_max over the full box, so C3.a couples pi only
    np.testing.assert_allclose(rows["C3.a"][:3], sc.timing.t_s * p_max + cost_f, rtol=1e-12)
    np.testing.assert_allclose(rows["C3.a"][3:], 0.0, atol=0.0)
    assert bts["C3.a"] == pytest.approx(sc.energy.joules)
    # and C3.b couples P only
    np.testing.assert_allclose(rows["C3.b"][:3], cost_f, rtol=1e-12)
    np.testing.assert_allclose(rows["C3.b"][3:], sc.timing.t_s, rtol=1e-12)
    assert bts["C3.b"] == pytest.approx(sc.energy.joules)


def test_envelope_rows_tight_at_box_corners():
    sc = generate_scenario(ScenarioParams(seed=1, num_devices=2, num_features=2))
    p_max = np.array([d.p_max for d in sc.devices])
    rng = rng_stream(11, 0)
    env = McCormickState(pi_lo=np.array([0.1, 0.2]), pi_hi=np.array([0.7, 0.9]),
                         p_lo=0.1 * p_max, p_hi=0.8 * p_max, p_max=p_max)
    cs = build_constraints_independent(sc, env)
    rows = dict(zip(cs.names, cs.a))
    bts = dict(zip(cs.names, cs.b))
    cost_f = np.array([d.p_f for d in sc.devices]) * sc.timing.t_f

    def true_cost(pi, p):
        return float(np.sum(pi * (sc.timing.t_s * p + cost_f)))

    for _ in range(20):
        pi = env.pi_lo + (env.pi_hi - env.pi_lo) * rng.random(2)
        x_hi = np.concatenate([pi, env.p_hi])      # P at its upper edge
        est = float(rows["C3.a"] @ x_hi) - bts["C3.a"] + sc.energy.joules
        assert est == pytest.approx(true_cost(pi, env.p_hi), rel=1e-12)
        x_lo = np.concatenate([env.pi_hi, env.p_lo])   # pi at its upper edge
        est_b = float(rows["C3.b"] @ x_lo) - bts["C3.b"] + sc.energy.joules
        assert est_b == pytest.approx(true_cost(env.pi_hi, env.p_lo), rel=1e-12)


def test_mccormick_rows_imply_true_budget():
    # conservative envelope direction: any point passing both C3 rows
    # satisfies the exact bilinear budget inside the sub-box
    sc = generate_scenario(ScenarioParams(seed=2, num_devices=2, num_features=2,
                                          energy_fraction=0.3))
    p_max = np.array([d.p_max for d in sc.devices])
    rng = rng_stream(12, 0)
    cost_f = np.array([d.p_f for d in sc.devices]) * sc.timing.t_f
    passed = 0
    for _ in range(5):
        lo_pi, hi_pi = np.sort(rng.random((2, 2)), axis=0)
        lo_p, hi_p = np.sort(rng.random((2, 2)) * p_max, axis=0)
        env = McCormickState(pi_lo=lo_pi, pi_hi=hi_pi, p_lo=lo_p, p_hi=hi_p, p_max=p_max)
        cs = build_constraints_independent(sc, env)
        pi = lo_pi + (hi_pi - lo_pi) * rng.random((2000, 2))
        p = lo_p + (hi_p - lo_p) * rng.random((2000, 2))
        x = np.hstack([pi, p])
        viol = x @ cs.a.T - cs.b
        energy_rows = [i for i, nm in enumerate(cs.names) if nm.startswith("C3")]
        ok = np.all(viol[:, energy_rows] <= 0.0, axis=1)
        cost = np.sum(pi[ok] * (sc.timing.t_s * p[ok] + cost_f), axis=1)
        assert np.all(cost <= sc.energy.joules + 1e-9)
        passed += int(ok.sum())
    assert passed > 1000


def test_mccormick_envelopes_tighten_as_the_box_shrinks():
    # halving the box around a point can only grow the inner feasible set
    # locally: the over-estimate of the bilinear cost never increases
    sc = generate_scenario(ScenarioParams(seed=2, num_devices=2, num_features=2,
                                          energy_fraction=0.3))
    p_max = np.array([d.p_max for d in sc.devices])
    full = McCormickState.full_box(p_max)
    pi0, p0 = np.array([0.5, 0.4]), 0.5 * p_max
    small = full.shrunk_around(pi0, p0, 0.5, 0.05)
    cs_full = build_constraints_independent(sc, full)
    cs_small = build_constraints_independent(sc, small)
    x = np.concatenate([pi0, p0])
    for nm in ("C3.a", "C3.b"):
        i_f = cs_full.names.index(nm)
        i_s = cs_small.names.index(nm)
        over_full = float(cs_full.a[i_f] @ x) - cs_full.b[i_f]
        over_small = float(cs_small.a[i_s] @ x) - cs_small.b[i_s]
        assert over_small <= over_full + 1e-12


def test_independent_rate_row_is_exact_rearrangement():
    sc = generate_scenario(ScenarioParams(seed=3, num_devices=3, num_features=2, gamma=0.9))
    p_max = np.array([d.p_max for d in sc.devices])
    cs = build_constraints_independent(sc, McCormickState.full_box(p_max))
    rng = rng_stream(13, 0)
    rate_rows = {int(nm[5:-1]): i for i, nm in enumerate(cs.names) if nm.startswith("C2.b")}
    for _ in range(500):
        pi = rng.random(3)
        x = np.concatenate([pi, p_max * rng.random(3)])
        for k, i in rate_rows.items():
            row_ok = float(cs.a[i] @ x) <= cs.b[i] + 1e-12
            rate = avg_rate_lower_bound_independent(pi, k, sc.timing, sc.rates,
                                                    sc.radio.bandwidth)
            bound_ok = rate >= sc.rates.r_min[k] * (1 - 1e-12)
            assert row_ok == bound_ok


def test_infeasible_guarantee_names_device():
    sc = generate_scenario(ScenarioParams(seed=0, num_devices=3, num_features=2))
    sc = sc.with_gamma(8.0)
    p_max = np.array([d.p_max for d in sc.devices])
    with pytest.raises(ValueError, match="device"):
        build_constraints_independent(sc, McCormickState.full_box(p_max))


def test_joint_tangent_anchor_exactness():
    sc = generate_scenario(ScenarioParams(seed=4, num_devices=3, num_features=2, gamma=1.0))
    p_max = np.array([d.p_max for d in sc.devices])
    layout_k = 3
    rng = rng_stream(14, 0)
    from isacsched.network import JointLayout, _rate_slopes
    layout = JointLayout(layout_k)
    q = _rate_slopes(sc)
    for _ in range(20):
        nu = rng.random(layout_k)
        cs = build_constraints_joint(sc, McCormickState.full_box(p_max), nu)
        rows = dict(zip(cs.names, cs.a))
        bts = dict(zip(cs.names, cs.b))
        pi = rng.random(layout_k)
        m = product_moments(pi)
        for kk in range(layout_k):
            mm = m.copy()
            mm[kk, kk] = nu[kk]          # sit on the anchor
            x = layout.pack(mm, p_max * rng.random(layout_k))
            slack = bts[f"C2.b[{kk}]"] - float(rows[f"C2.b[{kk}]"] @ x)
            exact = (1.0 - nu[kk]) ** 2 - q[kk] * (
                layout_k * (1.0 - nu[kk])
                - sum(mm[i, i] - mm[kk, i] for i in range(layout_k) if i != kk))
            assert slack == pytest.approx(exact, rel=1e-10, abs=1e-12)


def test_joint_tangent_row_implies_exact_quadratic():
    sc = generate_scenario(ScenarioParams(seed=5, num_devices=3, num_features=2, gamma=1.1))
    p_max = np.array([d.p_max for d in sc.devices])
    from isacsched.network import JointLayout, _rate_slopes
    layout = JointLayout(3)
    q = _rate_slopes(sc)
    rng = rng_stream(15, 0)
    checked = 0
    for _ in range(10000):
        nu = rng.random(3)
        d = rng.random(3)
        off = np.array([rng.uniform(max(0, d[a] + d[b] - 1), min(d[a], d[b]))
                        for a, b in ((0, 1), (0, 2), (1, 2))])
        m = np.diag(d).astype(float)
        m[0, 1] = m[1, 0] = off[0]
        m[0, 2] = m[2, 0] = off[1]
        m[1, 2] = m[2, 1] = off[2]
        cs = build_constraints_joint(sc, McCormickState.full_box(p_max), nu)
        x = layout.pack(m, p_max * rng.random(3))
        rows = dict(zip(cs.names, cs.a))
        bts = dict(zip(cs.names, cs.b))
        for kk in range(3):
            if float(rows[f"C2.b[{kk}]"] @ x) <= bts[f"C2.b[{kk}]"] + 1e-12:
                checked += 1
                lhs = (1.0 - m[kk, kk]) ** 2
                rhs = q[kk] * (3 * (1.0 - m[kk, kk])
                               - sum(m[i, i] - m[kk, i] for i in range(3) if i != kk))
                assert lhs >= rhs - 1e-9
    assert checked > 100


def test_joint_frechet_rows_strict_for_interior_products():
    sc = generate_scenario(ScenarioParams(seed=6, num_devices=3, num_features=2))
    p_max = np.array([d.p_max for d in sc.devices])
    from isacsched.network import JointLayout
    layout = JointLayout(3)
    cs = build_constraints_joint(sc, McCormickState.full_box(p_max), np.full(3, 0.5))
    pi = np.array([0.3, 0.5, 0.7])
    x = layout.pack(product_moments(pi), 0.5 * p_max)
    for i, nm in enumerate(cs.names):
        if nm.startswith("C4.a"):
            assert float(cs.a[i] @ x) < cs.b[i] - 1e-6


def test_violation_report_flags_energy_overrun():
    sc = generate_scenario(ScenarioParams(seed=7, num_devices=3, num_features=2,
                                          energy_fraction=0.2))
    p_max = np.array([d.p_max for d in sc.devices])
    v = independent_violations(sc, np.ones(3), p_max)
    assert v["C3"] > 0
    v0 = independent_violations(sc, np.zeros(3), np.zeros(3))
    assert max(v0.values()) <= 1e-12


def test_constraint_set_partial_substitution():
    cs = ConstraintSet(np.array([[1.0, 2.0], [1.0, 0.0]]), np.array([4.0, 1.0]),
                       ["both", "only_x"], np.zeros(2), np.ones(2) * 3)
    sub = cs.partial([1], [1.5])
    assert sub.size == 1
    i = sub.names.index("both")
    assert sub.b[i] == pytest.approx(4.0 - 3.0)
