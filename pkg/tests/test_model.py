import numpy as np
import pytest

from isacsched.model import (
    ClassStatistics,
    CorrelationModel,
    Device,
    IndependentPolicy,
    JointPolicy,
    device_gain,
    device_gain_gradient,
    fit_cross_coefficients,
    joint_gain_exact,
    joint_gain_simplified,
    network_gain_independent,
    pairwise_gain_matrix,
    product_moments,
)
from isacsched.sampler import ExplicitBernoulli, rng_stream, state_table

from conftest import make_devices, make_stats, schedule_average


def two_class_stats(dmu=2.0, sigma2=1.0, eta2=1.0):
    return ClassStatistics(np.array([[0.0], [dmu]]), np.array([sigma2]), np.array([eta2]))


# ---------------------------------------------------------------------------
# device gain
# ---------------------------------------------------------------------------

def test_device_gain_saturates_at_high_power():
    stats = two_class_stats()
    assert abs(device_gain(stats, 1e12) - 4.0) < 1e-9


def test_device_gain_unit_power():
    # dmu^2 / (sigma2 + eta2/P) = 4 / 2
    assert device_gain(two_class_stats(), 1.0) == pytest.approx(2.0, abs=1e-12)


def test_device_gain_three_classes_noiseless():
    stats = ClassStatistics(np.array([[0.0], [1.0], [3.0]]), np.array([1.0]), np.array([0.0]))
    # pairwise squared mean gaps 1 + 9 + 4 over unit variance
    assert device_gain(stats, 0.7) == pytest.approx(14.0, abs=1e-12)
    assert device_gain(stats, 0.0) == pytest.approx(14.0, abs=1e-12)


def test_device_gain_zero_power_noisy_features_drop_out():
    stats = ClassStatistics(np.array([[0.0, 0.0], [2.0, 1.0]]),
                            np.array([1.0, 0.5]), np.array([1.0, 0.0]))
    # only the noiseless feature survives at P = 0
    assert device_gain(stats, 0.0) == pytest.approx(1.0 / 0.5, abs=1e-12)


def test_device_gain_monotone_and_midpoint_concave():
    rng = rng_stream(7, 0)
    for _ in range(20):
        stats = make_stats(rng, n=4)
        grid = np.linspace(0.0, 3.0, 100)
        vals = np.array([device_gain(stats, p) for p in grid])
        assert np.all(np.diff(vals) >= -1e-12)
        a, b = grid[::2][:50], grid[1::2][:50]
        mid = np.array([device_gain(stats, 0.5 * (x + y)) for x, y in zip(a, b)])
        lo = 0.5 * (np.array([device_gain(stats, x) for x in a])
                    + np.array([device_gain(stats, y) for y in b]))
        assert np.all(mid >= lo - 1e-12)


def test_device_gain_gradient_matches_finite_differences():
    rng = rng_stream(8, 0)
    for _ in range(25):
        stats = make_stats(rng, n=5)
        p = 0.05 + 2.0 * rng.random()
        h = 1e-6
        fd = (device_gain(stats, p + h) - device_gain(stats, p - h)) / (2 * h)
        an = device_gain_gradient(stats, p)
        assert abs(an - fd) <= 1e-5 * max(1.0, abs(fd))


def test_device_gain_rejects_negative_power():
    with pytest.raises(ValueError):
        device_gain(two_class_stats(), -0.1)


# ---------------------------------------------------------------------------
# network gain, independent
# ---------------------------------------------------------------------------

def test_network_gain_zero_and_full_schedule(rng):
    devices = make_devices(rng, 3)
    p = np.array([d.p_max for d in devices])
    zero = IndependentPolicy(np.zeros(3), p)
    assert network_gain_independent(zero, devices) == 0.0
    full = IndependentPolicy(np.ones(3), p)
    expect = sum(device_gain(d.stats, d.p_max) for d in devices)
    assert network_gain_independent(full, devices) == pytest.approx(expect, rel=1e-12)


def test_network_gain_matches_bernoulli_enumeration(rng):
    devices = make_devices(rng, 2)
    pi = rng.random(2)
    p = np.array([0.3, 0.8])
    pol = IndependentPolicy(pi, p)
    g = np.array([device_gain(d.stats, p[i]) for i, d in enumerate(devices)])
    dist = ExplicitBernoulli.from_independent(pi)
    expect = float(sum(prob * (state @ g) for state, prob in zip(state_table(2), dist.probs)))
    assert network_gain_independent(pol, devices) == pytest.approx(expect, rel=1e-12)


def test_network_gain_dimension_mismatch(rng):
    devices = make_devices(rng, 3)
    with pytest.raises(ValueError):
        network_gain_independent(IndependentPolicy(np.ones(2), np.ones(2)), devices)


# ---------------------------------------------------------------------------
# joint gain, exact
# ---------------------------------------------------------------------------

def test_joint_gain_identity_rho_reduces_to_independent(rng):
    for k in (1, 2, 4):
        devices = make_devices(rng, k)
        pi = rng.random(k)
        p = np.array([d.p_max for d in devices]) * (0.2 + 0.8 * rng.random(k))
        rho = np.eye(k * devices[0].stats.num_features)
        joint = JointPolicy(product_moments(pi), p)
        lhs = joint_gain_exact(joint, devices, rho)
        rhs = network_gain_independent(IndependentPolicy(pi, p), devices)
        assert lhs == pytest.approx(rhs, rel=1e-10)


def test_joint_gain_single_device(rng):
    devices = make_devices(rng, 1)
    p = np.array([0.5])
    pol = JointPolicy(np.array([[0.7]]), p)
    rho = np.eye(devices[0].stats.num_features)
    expect = 0.7 * device_gain(devices[0].stats, 0.5)
    assert joint_gain_exact(pol, devices, rho) == pytest.approx(expect, rel=1e-12)


def test_joint_gain_matches_explicit_two_device_enumeration():
    rng = rng_stream(21, 0)
    for _ in range(5):
        devices = make_devices(rng, 2, n=1)
        rho = np.array([[1.0, 0.5], [0.5, 1.0]])
        p = np.array([0.4, 0.9])
        dist = ExplicitBernoulli(rng.dirichlet(np.ones(4)))
        pol = JointPolicy(dist.moments(), p)
        oracle = schedule_average(devices, rho, p, dist.probs)
        assert joint_gain_exact(pol, devices, rho) == pytest.approx(oracle, rel=1e-12)


def test_joint_gain_enumeration_property(rng):
    # moment expansion equals the schedule average for every explicit law
    for k in (2, 3, 4):
        for _ in range(5):
            devices = make_devices(rng, k, n=2)
            dim = 2 * k
            a = rng.normal(size=(dim, dim + 3))
            s = a @ a.T + 0.5 * np.eye(dim)
            d = np.sqrt(np.diag(s))
            rho = s / np.outer(d, d)
            p = np.array([dev.p_max for dev in devices]) * (0.3 + 0.7 * rng.random(k))
            dist = ExplicitBernoulli(rng.dirichlet(np.ones(2 ** k)))
            pol = JointPolicy(dist.moments(), p)
            oracle = schedule_average(devices, rho, p, dist.probs)
            got = joint_gain_exact(pol, devices, rho)
            assert got == pytest.approx(oracle, rel=1e-9)


def test_joint_gain_rejects_singular_rho(rng):
    devices = make_devices(rng, 2, n=1)
    rho = np.array([[1.0, 1.0], [1.0, 1.0]])
    pol = JointPolicy(product_moments(np.array([0.5, 0.5])), np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        joint_gain_exact(pol, devices, rho)


# ---------------------------------------------------------------------------
# simplified joint gain and the cross-weight fit
# ---------------------------------------------------------------------------

def test_simplified_zero_weights_reduce_to_diagonal(rng):
    devices = make_devices(rng, 3)
    pi = rng.random(3)
    p = np.full(3, 0.4)
    pol = JointPolicy(product_moments(pi), p)
    expect = sum(pi[i] * device_gain(d.stats, 0.4) for i, d in enumerate(devices))
    assert joint_gain_simplified(pol, devices, np.zeros((3, 3))) == pytest.approx(expect, rel=1e-12)


def test_simplified_direct_two_device_value(rng):
    devices = make_devices(rng, 2)
    pol = JointPolicy(np.ones((2, 2)), np.array([d.p_max for d in devices]))
    c = np.array([[0.0, 0.5], [0.5, 0.0]])
    g = [device_gain(d.stats, d.p_max) for d in devices]
    assert joint_gain_simplified(pol, devices, c) == pytest.approx(1.5 * (g[0] + g[1]), rel=1e-12)


def test_fit_identity_rho_gives_zero_weights(rng):
    devices = make_devices(rng, 3, n=2)
    c = fit_cross_coefficients(devices, np.eye(6))
    assert np.allclose(c, 0.0, atol=1e-12)


def test_fit_matches_exact_gain_at_probe_point():
    # interior fit: the surrogate reproduces the exact pair gain exactly
    rng = rng_stream(77, 0)
    n = 2
    means = rng.normal(size=(2, 2, n))
    devices = [Device(ClassStatistics(means[i], np.full(n, 1.0), np.full(n, 0.5)),
                      p_max=1.0, p_f=1.0, payload_bits=64.0) for i in range(2)]
    rho = np.eye(2 * n)
    for f in range(n):
        rho[f, n + f] = rho[n + f, f] = 0.55
    c = fit_cross_coefficients(devices, rho)
    assert 0.02 < c[0, 1] < 0.98
    probe = JointPolicy(np.ones((2, 2)), np.ones(2))
    assert joint_gain_simplified(probe, devices, c) == pytest.approx(
        joint_gain_exact(probe, devices, rho), rel=1e-12)


def test_fit_clamps_redundant_pair_to_zero():
    # near-duplicate features: the exact cross term is negative, weight floors at 0
    rng = rng_stream(77, 1)
    n = 2
    stats = ClassStatistics(rng.normal(size=(2, n)), np.full(n, 1.0), np.full(n, 0.5))
    devices = [Device(stats, 1.0, 1.0, 64.0), Device(stats, 1.0, 1.0, 64.0)]
    rho = np.eye(2 * n)
    for f in range(n):
        rho[f, n + f] = rho[n + f, f] = 0.99
    c = fit_cross_coefficients(devices, rho)
    assert c[0, 1] == 0.0


# ---------------------------------------------------------------------------
# type invariants
# ---------------------------------------------------------------------------

def test_class_statistics_rejects_degenerate_feature():
    with pytest.raises(ValueError):
        ClassStatistics(np.zeros((2, 1)), np.array([0.0]), np.array([0.0]))


def test_policy_vector_validation():
    with pytest.raises(ValueError):
        IndependentPolicy(np.array([0.5, 1.2]), np.array([0.1, 0.1]))
    with pytest.raises(ValueError):
        IndependentPolicy(np.array([0.5]), np.array([0.1, 0.1]))


def test_joint_policy_enforces_frechet_bounds():
    bad = np.array([[0.5, 0.6], [0.6, 0.5]])    # pair prob above both marginals
    with pytest.raises(ValueError):
        JointPolicy(bad, np.array([0.1, 0.1]))
    low = np.array([[0.9, 0.2], [0.2, 0.9]])    # below the overlap floor 0.8
    with pytest.raises(ValueError):
        JointPolicy(low, np.array([0.1, 0.1]))


def test_joint_policy_accepts_product_moments(rng):
    pi = rng.random(4)
    pol = JointPolicy(product_moments(pi), np.full(4, 0.2))
    assert np.allclose(pol.pi, pi)


def test_correlation_model_validation():
    with pytest.raises(ValueError):
        CorrelationModel(rho=np.array([[1.0, 0.2], [0.3, 1.0]]))
    with pytest.raises(ValueError):
        CorrelationModel(rho=np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(ValueError):
        CorrelationModel(c=np.array([[0.1, 0.2], [0.2, 0.0]]))
    ok = CorrelationModel(rho=np.eye(3), c=np.zeros((2, 2)))
    assert ok.rho.shape == (3, 3)


def test_pairwise_gain_matrix_quadratic_form(rng):
    # b' W b equals the exact gain of the deterministic schedule b
    devices = make_devices(rng, 3, n=2)
    dim = 6
    a = rng.normal(size=(dim, dim + 2))
    s = a @ a.T + 0.5 * np.eye(dim)
    d = np.sqrt(np.diag(s))
    rho = s / np.outer(d, d)
    p = np.full(3, 0.6)
    w = pairwise_gain_matrix(devices, rho, p)
    for mask in range(8):
        b = np.array([(mask >> i) & 1 for i in range(3)], dtype=float)
        probs = np.zeros(8)
        idx = int(np.flatnonzero((state_table(3) == b).all(axis=1))[0])
        probs[idx] = 1.0
        oracle = schedule_average(devices, rho, p, probs)
        assert float(b @ w @ b) == pytest.approx(oracle, rel=1e-10, abs=1e-12)
