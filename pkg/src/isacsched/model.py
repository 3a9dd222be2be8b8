"""Gaussian feature model and discriminant gains.

Each device observes a vector of features whose class-conditional law is
Gaussian.  Sensing at power P adds noise variance eta2/P on top of the
residual variance sigma2, so the per-feature variance seen by the fusion
center is sigma2 + eta2/P.  The discriminant gain of a device is the
symmetric KL divergence between the class conditionals, summed over all
class pairs; the network gain aggregates device gains under a scheduling
policy, either with independent scheduling probabilities or with a full
second-moment matrix of the joint schedule.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

log = logging.getLogger(__name__)

__all__ = [
    "ClassStatistics",
    "Device",
    "IndependentPolicy",
    "JointPolicy",
    "CorrelationModel",
    "device_gain",
    "device_gain_gradient",
    "network_gain_independent",
    "pairwise_gain_matrix",
    "joint_gain_exact",
    "joint_gain_simplified",
    "fit_cross_coefficients",
    "product_moments",
]

# rho with reciprocal condition number below this is rejected as singular
RHO_RCOND_MIN = 1e-10


def _frozen_array(x, dtype=float):
    a = np.array(x, dtype=dtype)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassStatistics:
    """Class-conditional Gaussian statistics of one device's features.

    means has shape (L, N): one row of N feature means per class.
    sigma2 and eta2 have shape (N,): residual variance and sensing-noise
    variance per feature.  sigma2[n] and eta2[n] may not both be zero,
    otherwise the feature variance would vanish at positive sensing power.
    """

    means: np.ndarray
    sigma2: np.ndarray
    eta2: np.ndarray

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        sigma2 = np.asarray(self.sigma2, dtype=float).ravel()
        eta2 = np.asarray(self.eta2, dtype=float).ravel()
        if means.ndim != 2 or means.shape[0] < 2:
            raise ValueError("means must be (L, N) with at least two classes")
        n = means.shape[1]
        if sigma2.shape != (n,) or eta2.shape != (n,):
            raise ValueError("sigma2 and eta2 must have one entry per feature")
        if np.any(sigma2 < 0) or np.any(eta2 < 0):
            raise ValueError("variances must be nonnegative")
        if np.any((sigma2 == 0) & (eta2 == 0)):
            raise ValueError("sigma2 and eta2 may not both vanish for a feature")
        object.__setattr__(self, "means", _frozen_array(means))
        object.__setattr__(self, "sigma2", _frozen_array(sigma2))
        object.__setattr__(self, "eta2", _frozen_array(eta2))
        # sum over unordered class pairs of squared mean differences, per feature
        l = means.shape[0]
        acc = np.zeros(n)
        for i in range(l):
            for j in range(i + 1, l):
                acc += (means[i] - means[j]) ** 2
        object.__setattr__(self, "_pair_sq", _frozen_array(acc))

    @property
    def num_classes(self) -> int:
        return self.means.shape[0]

    @property
    def num_features(self) -> int:
        return self.means.shape[1]

    @property
    def pair_sq(self) -> np.ndarray:
        """Per-feature sum of squared class-mean differences over class pairs."""
        return self._pair_sq


@dataclass(frozen=True)
class Device:
    """A sensing device: feature statistics plus its power limits.

    p_max bounds the sensing power, p_f is the power drawn while the
    extracted features are uploaded, payload_bits is the feature payload
    per cycle used by the feature-stage time budget.
    """

    stats: ClassStatistics
    p_max: float
    p_f: float
    payload_bits: float
    position: Optional[tuple] = None

    def __post_init__(self):
        if self.p_max < 0 or self.p_f < 0:
            raise ValueError("powers must be nonnegative")
        if self.payload_bits < 0:
            raise ValueError("payload_bits must be nonnegative")


def _check_policy_vectors(pi, p_s, atol=1e-9):
    pi = np.asarray(pi, dtype=float).ravel()
    p_s = np.asarray(p_s, dtype=float).ravel()
    if pi.shape != p_s.shape:
        raise ValueError("pi and p_s must have the same length")
    if np.any(pi < -atol) or np.any(pi > 1 + atol):
        raise ValueError("scheduling probabilities must lie in [0, 1]")
    if np.any(p_s < -atol):
        raise ValueError("sensing powers must be nonnegative")
    return np.clip(pi, 0.0, 1.0), np.maximum(p_s, 0.0)


@dataclass(frozen=True)
class IndependentPolicy:
    """Sensing policy with independent per-device scheduling probabilities."""

    pi: np.ndarray
    p_s: np.ndarray

    def __post_init__(self):
        pi, p_s = _check_policy_vectors(self.pi, self.p_s)
        object.__setattr__(self, "pi", _frozen_array(pi))
        object.__setattr__(self, "p_s", _frozen_array(p_s))

    @property
    def num_devices(self) -> int:
        return self.pi.shape[0]


@dataclass(frozen=True)
class JointPolicy:
    """Sensing policy described by the second-moment matrix of the schedule.

    moments[k, k] is the probability that device k senses in a cycle and
    moments[k, k'] the probability that k and k' sense together.  The
    matrix must be symmetric, obey the pairwise Frechet bounds, and
    moments - diag*diag' must be positive semidefinite (it is a covariance).
    """

    moments: np.ndarray
    p_s: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.moments, dtype=float)
        p_s = np.asarray(self.p_s, dtype=float).ravel()
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("moments must be square")
        if m.shape[0] != p_s.shape[0]:
            raise ValueError("p_s length must match moments")
        problems = joint_moment_violations(m)
        if problems:
            raise ValueError("invalid moment matrix: " + "; ".join(problems))
        if np.any(p_s < -1e-9):
            raise ValueError("sensing powers must be nonnegative")
        m = 0.5 * (m + m.T)
        object.__setattr__(self, "moments", _frozen_array(np.clip(m, 0.0, 1.0)))
        object.__setattr__(self, "p_s", _frozen_array(np.maximum(p_s, 0.0)))

    @property
    def num_devices(self) -> int:
        return self.p_s.shape[0]

    @property
    def pi(self) -> np.ndarray:
        """Marginal sensing probabilities (the diagonal)."""
        return np.diag(self.moments).copy()


def joint_moment_violations(m, atol=1e-8) -> list:
    """Names of violated validity conditions of a schedule moment matrix."""
    m = np.asarray(m, dtype=float)
    out = []
    if not np.allclose(m, m.T, atol=1e-9):
        out.append("symmetry")
    d = np.diag(m)
    if np.any(d < -atol) or np.any(d > 1 + atol):
        out.append("diagonal range")
    k = m.shape[0]
    iu = np.triu_indices(k, 1)
    off = m[iu]
    hi = np.minimum(d[iu[0]], d[iu[1]])
    lo = np.maximum(0.0, d[iu[0]] + d[iu[1]] - 1.0)
    if np.any(off > hi + atol) or np.any(off < lo - atol):
        out.append("Frechet bounds")
    cov = m - np.outer(d, d)
    if k and np.linalg.eigvalsh(0.5 * (cov + cov.T))[0] < -atol:
        out.append("covariance not PSD")
    return out


@dataclass(frozen=True)
class CorrelationModel:
    """Cross-device feature correlation and its rank-one surrogate weights.

    rho is the (K*N, K*N) feature correlation matrix ordered device-major,
    c the symmetric zero-diagonal matrix of fitted cross-gain weights.
    Either may be absent.
    """

    rho: Optional[np.ndarray] = None
    c: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.rho is not None:
            r = np.asarray(self.rho, dtype=float)
            if r.ndim != 2 or r.shape[0] != r.shape[1]:
                raise ValueError("rho must be square")
            if not np.allclose(r, r.T, atol=1e-9):
                raise ValueError("rho must be symmetric")
            if not np.allclose(np.diag(r), 1.0, atol=1e-9):
                raise ValueError("rho must have unit diagonal")
            if _rcond(r) <= RHO_RCOND_MIN:
                raise ValueError("rho is singular or near singular")
            object.__setattr__(self, "rho", _frozen_array(r))
        if self.c is not None:
            c = np.asarray(self.c, dtype=float)
            if c.ndim != 2 or c.shape[0] != c.shape[1]:
                raise ValueError("c must be square")
            if not np.allclose(c, c.T, atol=1e-9):
                raise ValueError("c must be symmetric")
            if np.any(np.abs(np.diag(c)) > 1e-12):
                raise ValueError("c must have zero diagonal")
            if np.any(c < -1e-12) or np.any(c > 1 + 1e-12):
                raise ValueError("c entries must lie in [0, 1]")
            object.__setattr__(self, "c", _frozen_array(c))


def _rcond(a) -> float:
    s = np.linalg.svd(a, compute_uv=False)
    if s[0] == 0:
        return 0.0
    return float(s[-1] / s[0])


# ---------------------------------------------------------------------------
# gains
# ---------------------------------------------------------------------------

def device_gain(stats: ClassStatistics, p_s: float) -> float:
    """Discriminant gain of one device sensing at power p_s.

    Sum over class pairs and features of (mean difference)^2 over the
    feature variance sigma2 + eta2/p_s.  p_s = 0 is the no-sensing limit:
    features with eta2 > 0 contribute nothing, noiseless features
    (eta2 = 0) keep their full contribution.
    """
    if p_s < 0:
        raise ValueError("sensing power must be nonnegative")
    a = stats.pair_sq
    if p_s == 0:
        clean = stats.eta2 == 0
        if not np.any(clean):
            return 0.0
        return float(np.sum(a[clean] / stats.sigma2[clean]))
    return float(np.sum(a / (stats.sigma2 + stats.eta2 / p_s)))


def device_gain_gradient(stats: ClassStatistics, p_s: float) -> float:
    """Derivative of device_gain with respect to the sensing power."""
    if p_s < 0:
        raise ValueError("sensing power must be nonnegative")
    a, s, e = stats.pair_sq, stats.sigma2, stats.eta2
    noisy = e > 0
    denom = s[noisy] * p_s + e[noisy]
    return float(np.sum(a[noisy] * e[noisy] / denom**2))


def network_gain_independent(policy: IndependentPolicy, devices) -> float:
    """Expected network gain under independent scheduling: sum pi_k G_k."""
    if policy.num_devices != len(devices):
        raise ValueError("policy and device list disagree on K")
    total = 0.0
    for k, dev in enumerate(devices):
        if policy.pi[k] > 0:
            total += policy.pi[k] * device_gain(dev.stats, policy.p_s[k])
    return total


def product_moments(pi) -> np.ndarray:
    """Moment matrix of an independent schedule: outer product, diag = pi."""
    pi = np.asarray(pi, dtype=float)
    m = np.outer(pi, pi)
    np.fill_diagonal(m, pi)
    return m


def _stack_devices(devices, p_s):
    """Per-feature arrays across the network, device-major ordering."""
    n = devices[0].stats.num_features
    l = devices[0].stats.num_classes
    for dev in devices:
        if dev.stats.num_features != n or dev.stats.num_classes != l:
            raise ValueError("devices must share feature and class counts")
    p_s = np.asarray(p_s, dtype=float).ravel()
    if p_s.shape[0] != len(devices):
        raise ValueError("one sensing power per device required")
    sigma2 = np.concatenate([d.stats.sigma2 for d in devices])
    eta2 = np.concatenate([d.stats.eta2 for d in devices])
    p_rep = np.repeat(p_s, n)
    with np.errstate(divide="ignore"):
        var = sigma2 + np.where(p_rep > 0, eta2 / np.where(p_rep > 0, p_rep, 1.0), np.where(eta2 > 0, np.inf, 0.0))
    if np.any(var <= 0):
        raise ValueError("feature variance must be positive")
    inv_d = np.where(np.isinf(var), 0.0, 1.0 / np.sqrt(var))
    return n, l, inv_d


def pairwise_gain_matrix(devices, rho, p_s) -> np.ndarray:
    """Device-level aggregation of the exact gain quadratic form.

    Returns W of shape (K, K) with W[k, k'] the sum over feature pairs
    (i in device k, j in device k') and over class pairs of
    dmu_i dmu_j rho_inv[i, j] / (D_i D_j), where D is the per-feature
    standard deviation at the given sensing powers.  The exact network
    gain of a schedule b is then b' W b, and its expectation under a
    moment matrix is the entrywise product sum with W.
    """
    n, l, inv_d = _stack_devices(devices, p_s)
    rho = np.asarray(rho, dtype=float)
    kn = len(devices) * n
    if rho.shape != (kn, kn):
        raise ValueError("rho must be (K*N, K*N)")
    if _rcond(rho) <= RHO_RCOND_MIN:
        raise ValueError("rho is singular or near singular")
    rho_inv = np.linalg.inv(rho)
    q = rho_inv * np.outer(inv_d, inv_d)
    k = len(devices)
    w = np.zeros((k, k))
    for a in range(l):
        for b in range(a + 1, l):
            dmu = np.concatenate([d.stats.means[a] - d.stats.means[b] for d in devices])
            m = q * np.outer(dmu, dmu)
            w += m.reshape(k, n, k, n).sum(axis=(1, 3))
    return w


def joint_gain_exact(policy: JointPolicy, devices, rho) -> float:
    """Exact expected network gain under a joint schedule moment matrix.

    The masked features of the scheduled devices enter a quadratic form
    with the full inverse correlation; taking the expectation over the
    schedule leaves an entrywise product of the moment matrix with the
    device-aggregated quadratic form.
    """
    w = pairwise_gain_matrix(devices, rho, policy.p_s)
    return float(np.sum(policy.moments * w))


def joint_gain_simplified(policy: JointPolicy, devices, c) -> float:
    """Surrogate network gain: diagonal device gains plus weighted cross terms.

    sum_k m_kk G_k + sum_{k<k'} m_kk' c_kk' (G_k + G_k'), with c the
    fitted cross-gain weights.
    """
    c = np.asarray(c, dtype=float)
    k = policy.num_devices
    if c.shape != (k, k):
        raise ValueError("c must be (K, K)")
    g = np.array([device_gain(d.stats, policy.p_s[i]) for i, d in enumerate(devices)])
    m = policy.moments
    total = float(np.sum(np.diag(m) * g))
    for a in range(k):
        for b in range(a + 1, k):
            total += m[a, b] * c[a, b] * (g[a] + g[b])
    return total


def fit_cross_coefficients(devices, rho) -> np.ndarray:
    """Fit the cross-gain weights c of the surrogate joint gain.

    For each device pair the probe schedule activates exactly that pair
    with probability one at maximum sensing power.  The exact gain beyond
    the two standalone device gains is attributed to the pair and
    normalized by G_k + G_k'.  Raw weights are clamped into [0, 1];
    clamping is logged, not an error.
    """
    k = len(devices)
    p_max = np.array([d.p_max for d in devices], dtype=float)
    w = pairwise_gain_matrix(devices, rho, p_max)
    g = np.array([device_gain(d.stats, p_max[i]) for i, d in enumerate(devices)])
    c = np.zeros((k, k))
    for a in range(k):
        for b in range(a + 1, k):
            probe_gain = w[a, a] + w[b, b] + 2.0 * w[a, b]
            cross = probe_gain - g[a] - g[b]
            denom = g[a] + g[b]
            raw = cross / denom if denom > 0 else 0.0
            val = min(max(raw, 0.0), 1.0)
            if raw < 0 or raw > 1:
                log.info("cross weight (%d, %d) = %.4g clamped to %.1f", a, b, raw, val)
            c[a, b] = c[b, a] = val
    return c
