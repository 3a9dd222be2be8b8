"""Radio model, rate guarantees, and scheduling constraint builders.

A sensing cycle splits into a sensing stage (scheduled devices sense,
idle devices share the uplink), a feature stage (scheduled devices upload
their features, nobody else transmits), and a stall stage (everyone
shares the uplink equally).  Rate guarantees are enforced through a
Jensen lower bound on the cycle-average throughput; the bound is
linearized so the scheduling program stays convex.  The bilinear energy
budget is replaced by its over-estimating envelopes on a sensing-power
box, so every point feasible for the built constraints satisfies the
true budget on that box.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "SINR_GRID_DB",
    "RadioEnvironment",
    "Timing",
    "RateRequirements",
    "EnergyBudget",
    "ConstraintSet",
    "JointLayout",
    "spectral_efficiency",
    "quantize_sinr_db",
    "expected_m_independent",
    "expected_m_joint",
    "avg_rate_lower_bound_independent",
    "avg_rate_lower_bound_joint",
    "feature_time_used",
    "build_constraints_independent",
    "build_constraints_joint",
    "independent_violations",
    "joint_violations",
]

SINR_GRID_DB = np.arange(-5.0, 36.0, 5.0)   # guarantee-rate quantization grid
SE_MIN = 0.05                                # bits/s/Hz floor
SE_MAX = 9.6                                 # bits/s/Hz cap


def spectral_efficiency(sinr_db):
    """Truncated Shannon spectral efficiency in bits/s/Hz."""
    sinr = np.power(10.0, np.asarray(sinr_db, dtype=float) / 10.0)
    e = 0.75 * np.log2(1.0 + sinr)
    return np.clip(e, SE_MIN, SE_MAX)


def quantize_sinr_db(sinr_db):
    """Floor to the guarantee grid, clamped to its ends."""
    g = np.floor(np.asarray(sinr_db, dtype=float) / 5.0) * 5.0
    return np.clip(g, SINR_GRID_DB[0], SINR_GRID_DB[-1])


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RadioEnvironment:
    """Uplink radio parameters; powers in watts, bandwidth in Hz."""

    bandwidth: float = 10e6
    carrier_hz: float = 3.5e9           # informational only
    pathloss_exponent: float = 3.2
    pathloss_const_db: float = 25.0
    shadowing_std_db: float = 4.0
    noise_density_dbm_hz: float = -174.0
    noise_rise_db: float = 6.0

    def noise_floor_dbm(self) -> float:
        return self.noise_density_dbm_hz + 10.0 * np.log10(self.bandwidth) + self.noise_rise_db

    def sinr_db(self, tx_power_w, distance_m, shadowing_db=0.0):
        """Received SINR over the pathloss + fixed shadowing model."""
        tx_dbm = 10.0 * np.log10(np.asarray(tx_power_w, dtype=float) * 1e3)
        pl = self.pathloss_const_db + 10.0 * self.pathloss_exponent * np.log10(np.asarray(distance_m, dtype=float))
        return tx_dbm - pl - np.asarray(shadowing_db, dtype=float) - self.noise_floor_dbm()


@dataclass(frozen=True)
class Timing:
    """Cycle stage durations in seconds."""

    t_s: float = 2.0
    t_f: float = 0.5
    t_w: float = 4.0

    def __post_init__(self):
        if min(self.t_s, self.t_f, self.t_w) < 0 or self.t_s + self.t_f + self.t_w <= 0:
            raise ValueError("stage durations must be nonnegative with positive total")

    @property
    def total(self) -> float:
        return self.t_s + self.t_f + self.t_w


@dataclass(frozen=True)
class RateRequirements:
    """Per-device spectral efficiencies and guaranteed average rates.

    e_std is the grid-quantized efficiency the guarantee was derived from;
    it is kept so sweeps can rescale r_min for a new guarantee level.
    """

    e: np.ndarray
    r_min: np.ndarray
    gamma: float
    e_std: Optional[np.ndarray] = None

    def __post_init__(self):
        e = np.asarray(self.e, dtype=float).ravel()
        r = np.asarray(self.r_min, dtype=float).ravel()
        if e.shape != r.shape:
            raise ValueError("e and r_min must have equal length")
        if np.any(e <= 0) or np.any(r < 0) or self.gamma < 0:
            raise ValueError("efficiencies must be positive, rates and gamma nonnegative")
        object.__setattr__(self, "e", e)
        object.__setattr__(self, "r_min", r)
        if self.e_std is not None:
            object.__setattr__(self, "e_std", np.asarray(self.e_std, dtype=float).ravel())

    def with_gamma(self, gamma: float, bandwidth: float) -> "RateRequirements":
        if self.e_std is None:
            raise ValueError("e_std required to rescale the guarantee level")
        k = self.e.shape[0]
        return RateRequirements(self.e, gamma * self.e_std * bandwidth / k, gamma, self.e_std)


@dataclass(frozen=True)
class EnergyBudget:
    """Per-cycle network energy budget in joules."""

    joules: float

    def __post_init__(self):
        if self.joules < 0:
            raise ValueError("energy budget must be nonnegative")


@dataclass(frozen=True)
class JointLayout:
    """Index layout of the joint decision vector [diag, upper off-diag, P_s]."""

    num_devices: int

    @property
    def num_pairs(self) -> int:
        k = self.num_devices
        return k * (k - 1) // 2

    @property
    def size(self) -> int:
        return 2 * self.num_devices + self.num_pairs

    def pair_index(self, a: int, b: int) -> int:
        k = self.num_devices
        if a > b:
            a, b = b, a
        return self.num_devices + a * (2 * k - a - 1) // 2 + (b - a - 1)

    def power_index(self, k: int) -> int:
        return self.num_devices + self.num_pairs + k

    def pack(self, moments, p_s) -> np.ndarray:
        m = np.asarray(moments, dtype=float)
        x = np.empty(self.size)
        x[: self.num_devices] = np.diag(m)
        iu = np.triu_indices(self.num_devices, 1)
        x[self.num_devices : self.num_devices + self.num_pairs] = m[iu]
        x[self.num_devices + self.num_pairs :] = np.asarray(p_s, dtype=float)
        return x

    def unpack(self, x) -> tuple:
        k = self.num_devices
        m = np.zeros((k, k))
        np.fill_diagonal(m, x[:k])
        iu = np.triu_indices(k, 1)
        m[iu] = x[k : k + self.num_pairs]
        m = m + np.triu(m, 1).T
        return m, x[k + self.num_pairs :].copy()


@dataclass
class ConstraintSet:
    """Linear inequalities a.x <= b with a box, plus an optional PSD marker.

    The PSD marker carries the joint layout so a projection step can repair
    the schedule covariance block; it is absent for independent problems.
    """

    a: np.ndarray
    b: np.ndarray
    names: list
    lower: np.ndarray
    upper: np.ndarray
    psd_layout: Optional[JointLayout] = None

    def __post_init__(self):
        self.a = np.atleast_2d(np.asarray(self.a, dtype=float))
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.lower = np.asarray(self.lower, dtype=float).ravel()
        self.upper = np.asarray(self.upper, dtype=float).ravel()
        if self.a.shape[0] != self.b.shape[0] or len(self.names) != self.b.shape[0]:
            raise ValueError("rows, bounds and names must align")
        if self.a.shape[1] != self.lower.shape[0] or self.lower.shape != self.upper.shape:
            raise ValueError("box must match the variable count")
        if np.any(self.lower > self.upper + 1e-12):
            raise ValueError("empty box")

    @property
    def size(self) -> int:
        return self.lower.shape[0]

    def violations(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.a @ x - self.b

    def max_violation(self, x) -> float:
        v = self.violations(x)
        box = max(float(np.max(self.lower - x, initial=0.0)), float(np.max(x - self.upper, initial=0.0)))
        return max(float(np.max(v, initial=0.0)), box, 0.0)

    def feasible(self, x, tol: float = 1e-9) -> bool:
        return self.max_violation(x) <= tol

    def partial(self, fixed_idx, fixed_values) -> "ConstraintSet":
        """Substitute some coordinates, leaving a constraint set on the rest.

        Rows that lose every variable are dropped unless clearly violated,
        in which case they stay as explicit infeasibility markers.
        """
        fixed_idx = np.asarray(fixed_idx, dtype=int)
        keep = np.setdiff1d(np.arange(self.size), fixed_idx)
        b = self.b - self.a[:, fixed_idx] @ np.asarray(fixed_values, dtype=float)
        a = self.a[:, keep]
        live = np.any(a != 0, axis=1) | (b < -1e-9)
        return ConstraintSet(a[live], b[live], [n for n, m in zip(self.names, live) if m],
                             self.lower[keep], self.upper[keep], None)


# ---------------------------------------------------------------------------
# rate geometry
# ---------------------------------------------------------------------------

def expected_m_independent(pi, k: int) -> float:
    """Expected co-active uplink devices seen by an idle device k."""
    pi = np.asarray(pi, dtype=float)
    return float(pi.shape[0] - 1 - (pi.sum() - pi[k]))


def expected_m_joint(moments, k: int) -> float:
    """Co-active count for device k conditioned on k being idle.

    Undefined when the device always senses (idle probability zero).
    """
    m = np.asarray(moments, dtype=float)
    kk = m.shape[0]
    idle = 1.0 - m[k, k]
    if idle <= 0:
        raise ValueError(f"device {k} always senses; conditional count undefined")
    others = [1.0 - (m[k, k] + m[i, i] - m[k, i]) for i in range(kk) if i != k]
    return float(np.sum(others) / idle)


def avg_rate_lower_bound_independent(pi, k: int, timing: Timing, rates: RateRequirements,
                                     bandwidth: float) -> float:
    """Jensen lower bound on the cycle-average rate of device k."""
    pi = np.asarray(pi, dtype=float)
    kk = pi.shape[0]
    others = pi.sum() - pi[k]
    sensing = timing.t_s * (1.0 - pi[k]) / (kk - others)
    return rates.e[k] * bandwidth / timing.total * (timing.t_w / kk + sensing)


def avg_rate_lower_bound_joint(moments, k: int, timing: Timing, rates: RateRequirements,
                               bandwidth: float) -> float:
    """Joint-schedule analog of the Jensen rate bound.

    The idle probability cancels against the conditional count denominator,
    so a device that always senses cleanly gets the stall-share rate.
    """
    m = np.asarray(moments, dtype=float)
    kk = m.shape[0]
    idle = 1.0 - m[k, k]
    denom = kk * idle - sum(m[i, i] - m[k, i] for i in range(kk) if i != k)
    sensing = 0.0 if idle <= 0 else timing.t_s * idle * idle / denom
    return rates.e[k] * bandwidth / timing.total * (timing.t_w / kk + sensing)


def feature_time_used(pi_diag, devices, rates: RateRequirements, bandwidth: float) -> float:
    """Expected feature upload time per cycle: sum pi_k l_k / (e_k B)."""
    pi_diag = np.asarray(pi_diag, dtype=float)
    payload = np.array([d.payload_bits for d in devices], dtype=float)
    return float(np.sum(pi_diag * payload / (rates.e * bandwidth)))


def _rate_slopes(scenario) -> np.ndarray:
    """Per-device q_k = r_min T / (e B T_s) - T_w / (K T_s).

    Nonpositive q means the guarantee is met at any schedule; positive q
    trades the device's own sensing share against the others' idle load.
    """
    t = scenario.timing
    k = len(scenario.devices)
    return (scenario.rates.r_min * t.total / (scenario.rates.e * scenario.radio.bandwidth * t.t_s)
            - t.t_w / (k * t.t_s))


# ---------------------------------------------------------------------------
# constraint builders
# ---------------------------------------------------------------------------

def _energy_rows(scenario, env, cost_f, n_var, pi_idx, p_idx):
    """Over-estimating envelopes of the bilinear sensing-energy term.

    On the box [pi_lo, pi_hi] x [p_lo, p_hi] the product pi*P is bounded
    above by pi*p_hi + pi_lo*P - pi_lo*p_hi and by pi*p_lo + pi_hi*P -
    pi_hi*p_lo, so both rows imply the true budget inside the box.
    """
    t_s = scenario.timing.t_s
    e_budget = scenario.energy.joules
    rows, bs, names = [], [], []
    for p_edge, pi_anchor, tag in ((env.p_hi, env.pi_lo, "C3.a"), (env.p_lo, env.pi_hi, "C3.b")):
        a = np.zeros(n_var)
        a[pi_idx] = t_s * p_edge + cost_f
        a[p_idx] = t_s * pi_anchor
        rows.append(a)
        bs.append(e_budget + t_s * float(np.sum(pi_anchor * p_edge)))
        names.append(tag)
    return rows, bs, names


def build_constraints_independent(scenario, envelopes) -> ConstraintSet:
    """Constraints of the independent scheduling program on x = [pi, P_s].

    Feature-stage time budget, the linearized rate guarantee per device,
    the two energy envelope rows, and the box.  Raises when a rate
    guarantee cannot be met for any schedule, naming the device.
    """
    devices = scenario.devices
    k = len(devices)
    q = _rate_slopes(scenario)
    hopeless = q > 1.0 + 1e-12
    if np.any(hopeless):
        bad = int(np.argmax(q))
        raise ValueError(f"rate guarantee of device {bad} is infeasible for every schedule (C2.b)")
    n_var = 2 * k
    pi_idx = np.arange(k)
    p_idx = np.arange(k, 2 * k)
    rows, bs, names = [], [], []

    payload = np.array([d.payload_bits for d in devices], dtype=float)
    a = np.zeros(n_var)
    a[pi_idx] = payload / (scenario.rates.e * scenario.radio.bandwidth)
    rows.append(a)
    bs.append(scenario.timing.t_f)
    names.append("C2.a")

    # pi_k - 1 + q_k (K - sum_{i != k} pi_i) <= 0
    for kk in range(k):
        a = np.zeros(n_var)
        a[pi_idx] = -q[kk]
        a[kk] = 1.0
        rows.append(a)
        bs.append(1.0 - q[kk] * k)
        names.append(f"C2.b[{kk}]")

    cost_f = np.array([d.p_f for d in devices]) * scenario.timing.t_f
    erows, ebs, enames = _energy_rows(scenario, envelopes, cost_f, n_var, pi_idx, p_idx)
    rows += erows
    bs += ebs
    names += enames

    p_max = np.array([d.p_max for d in devices], dtype=float)
    lower = np.concatenate([envelopes.pi_lo, envelopes.p_lo])
    upper = np.concatenate([envelopes.pi_hi, np.minimum(envelopes.p_hi, p_max)])
    return ConstraintSet(np.array(rows), np.array(bs), names, lower, upper)


def build_constraints_joint(scenario, envelopes, nu) -> ConstraintSet:
    """Constraints of the joint scheduling program on x = [diag, offdiag, P_s].

    The rate guarantee uses the quadratic idle-share form linearized at the
    anchor nu (the tangent under-estimates the quadratic, so satisfying the
    linear row implies the exact bound).  Frechet rows couple each pair's
    joint moment to its marginals; the covariance PSD condition is attached
    as a marker for projection-time repair.
    """
    devices = scenario.devices
    k = len(devices)
    layout = JointLayout(k)
    nu = np.asarray(nu, dtype=float).ravel()
    if nu.shape[0] != k:
        raise ValueError("one anchor per device required")
    q = _rate_slopes(scenario)
    n_var = layout.size
    rows, bs, names = [], [], []

    payload = np.array([d.payload_bits for d in devices], dtype=float)
    a = np.zeros(n_var)
    a[:k] = payload / (scenario.rates.e * scenario.radio.bandwidth)
    rows.append(a)
    bs.append(scenario.timing.t_f)
    names.append("C2.a")

    # tangent of (1 - m_kk)^2 at nu_k versus q_k (K (1 - m_kk) - sum (m_ii - m_ki))
    for kk in range(k):
        a = np.zeros(n_var)
        a[kk] += 2.0 * (1.0 - nu[kk]) - q[kk] * k
        for i in range(k):
            if i == kk:
                continue
            a[i] += -q[kk]
            a[layout.pair_index(kk, i)] += q[kk]
        rows.append(a)
        bs.append((1.0 - nu[kk] ** 2) - q[kk] * k)
        names.append(f"C2.b[{kk}]")

    cost_f = np.array([d.p_f for d in devices]) * scenario.timing.t_f
    erows, ebs, enames = _energy_rows(scenario, envelopes, cost_f, n_var,
                                      np.arange(k), np.arange(k + layout.num_pairs, n_var))
    rows += erows
    bs += ebs
    names += enames

    # Frechet: m_ab <= m_aa, m_ab <= m_bb, m_aa + m_bb - m_ab <= 1
    for a_i in range(k):
        for b_i in range(a_i + 1, k):
            pidx = layout.pair_index(a_i, b_i)
            for diag, tag in ((a_i, f"C4.a.hi[{a_i},{b_i}]"), (b_i, f"C4.a.hi[{b_i},{a_i}]")):
                row = np.zeros(n_var)
                row[pidx] = 1.0
                row[diag] = -1.0
                rows.append(row)
                bs.append(0.0)
                names.append(tag)
            row = np.zeros(n_var)
            row[a_i] = 1.0
            row[b_i] = 1.0
            row[pidx] = -1.0
            rows.append(row)
            bs.append(1.0)
            names.append(f"C4.a.lo[{a_i},{b_i}]")

    p_max = np.array([d.p_max for d in devices], dtype=float)
    lower = np.concatenate([envelopes.pi_lo, np.zeros(layout.num_pairs), envelopes.p_lo])
    upper = np.concatenate([envelopes.pi_hi, np.ones(layout.num_pairs),
                            np.minimum(envelopes.p_hi, p_max)])
    return ConstraintSet(np.array(rows), np.array(bs), names, lower, upper, psd_layout=layout)


# ---------------------------------------------------------------------------
# exact-form feasibility checks (unrelaxed constraints)
# ---------------------------------------------------------------------------

def independent_violations(scenario, pi, p_s) -> dict:
    """Signed violations of the exact constraints; positive means violated."""
    pi = np.asarray(pi, dtype=float)
    p_s = np.asarray(p_s, dtype=float)
    devices = scenario.devices
    k = len(devices)
    t = scenario.timing
    out = {}
    p_max = np.array([d.p_max for d in devices])
    out["C1.pi"] = float(max(np.max(pi - 1.0, initial=0.0), np.max(-pi, initial=0.0)))
    out["C1.power"] = float(max(np.max(p_s - p_max, initial=0.0), np.max(-p_s, initial=0.0)))
    out["C2.a"] = feature_time_used(pi, devices, scenario.rates, scenario.radio.bandwidth) - t.t_f
    for kk in range(k):
        r = avg_rate_lower_bound_independent(pi, kk, t, scenario.rates, scenario.radio.bandwidth)
        out[f"C2.b[{kk}]"] = float(scenario.rates.r_min[kk] - r)
    cost = np.array([d.p_f for d in devices]) * t.t_f + p_s * t.t_s
    out["C3"] = float(np.sum(cost * pi) - scenario.energy.joules)
    return out


def joint_violations(scenario, moments, p_s) -> dict:
    """Signed violations of the exact joint constraints; positive is violated."""
    m = np.asarray(moments, dtype=float)
    p_s = np.asarray(p_s, dtype=float)
    devices = scenario.devices
    k = len(devices)
    t = scenario.timing
    out = {}
    p_max = np.array([d.p_max for d in devices])
    diag = np.diag(m)
    out["C1.pi"] = float(max(np.max(diag - 1.0, initial=0.0), np.max(-diag, initial=0.0)))
    out["C1.power"] = float(max(np.max(p_s - p_max, initial=0.0), np.max(-p_s, initial=0.0)))
    out["C2.a"] = feature_time_used(diag, devices, scenario.rates, scenario.radio.bandwidth) - t.t_f
    for kk in range(k):
        r = avg_rate_lower_bound_joint(m, kk, t, scenario.rates, scenario.radio.bandwidth)
        out[f"C2.b[{kk}]"] = float(scenario.rates.r_min[kk] - r)
    cost = np.array([d.p_f for d in devices]) * t.t_f + p_s * t.t_s
    out["C3"] = float(np.sum(cost * diag) - scenario.energy.joules)
    for name in joint_moment_violation_values(m):
        out[name[0]] = name[1]
    return out


def joint_moment_violation_values(m) -> list:
    m = np.asarray(m, dtype=float)
    k = m.shape[0]
    d = np.diag(m)
    out = []
    iu = np.triu_indices(k, 1)
    if iu[0].size:
        hi = float(np.max(m[iu] - np.minimum(d[iu[0]], d[iu[1]])))
        lo = float(np.max(np.maximum(0.0, d[iu[0]] + d[iu[1]] - 1.0) - m[iu]))
        out.append(("C4.a", max(hi, lo)))
    cov = m - np.outer(d, d)
    out.append(("C4.b", float(-np.linalg.eigvalsh(0.5 * (cov + cov.T))[0])))
    return out
