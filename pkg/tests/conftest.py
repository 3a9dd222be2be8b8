import numpy as np
import pytest

from isacsched.model import ClassStatistics, Device
from isacsched.sampler import rng_stream, state_table


def make_stats(rng, n=3, l=2, eta_floor=0.2):
    means = rng.normal(size=(l, n))
    sigma2 = 0.5 + rng.random(n)
    eta2 = eta_floor + rng.random(n)
    return ClassStatistics(means, sigma2, eta2)


def make_devices(rng, k, n=3, l=2):
    return [Device(make_stats(rng, n, l), p_max=0.2 + 0.8 * rng.random(),
                   p_f=0.2 + 0.8 * rng.random(), payload_bits=32.0 * n)
            for _ in range(k)]


def random_correlation(rng, dim, strength=0.3):
    """Well-conditioned random correlation with off-diagonals near strength."""
    a = rng.normal(size=(dim, dim + 4))
    s = a @ a.T
    d = np.sqrt(np.diag(s))
    corr = s / np.outer(d, d)
    out = (1.0 - strength) * np.eye(dim) + strength * corr
    d2 = np.sqrt(np.diag(out))
    return out / np.outer(d2, d2)


def schedule_average(devices, rho, p_s, probs):
    """Enumeration oracle: exact gain averaged over all schedules.

    Per schedule the class-mean differences of idle devices are zeroed and
    the full-network quadratic form evaluated, so it is independent of the
    moment-expansion codepath it checks.
    """
    k = len(devices)
    n = devices[0].stats.num_features
    l = devices[0].stats.num_classes
    p_s = np.asarray(p_s, dtype=float)
    var = np.concatenate([
        d.stats.sigma2 + np.where(p_s[i] > 0, d.stats.eta2 / max(p_s[i], 1e-300),
                                  np.where(d.stats.eta2 > 0, np.inf, 0.0))
        for i, d in enumerate(devices)])
    inv_sd = np.where(np.isinf(var), 0.0, 1.0 / np.sqrt(var))
    gamma_inv = np.linalg.inv(np.asarray(rho, dtype=float))
    q = gamma_inv * np.outer(inv_sd, inv_sd)
    tbl = state_table(k)
    total = 0.0
    for state, p in zip(tbl, np.asarray(probs, dtype=float)):
        if p == 0:
            continue
        mask = np.repeat(state, n)
        gain = 0.0
        for a in range(l):
            for b in range(a + 1, l):
                dmu = np.concatenate([d.stats.means[a] - d.stats.means[b]
                                      for d in devices]) * mask
                gain += dmu @ q @ dmu
        total += p * gain
    return total


@pytest.fixture
def rng():
    return rng_stream(1234, 0)
