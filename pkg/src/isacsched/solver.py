"""Schedule optimization: fractional programming over relaxed constraints.

The scheduling program maximizes the network discriminant gain, linear in
the scheduling variables and a sum of affine-over-affine ratios in the
sensing powers.  It is attacked by block alternation: a linear step in
the schedule, a sum-of-ratios step in the powers solved through a
parametric fixed point, both over constraints built on a shrinking
envelope box.  A candidate pool (baselines, previous incumbents) is kept
so the reported policy never falls below any known feasible point, and
every report is checked against the exact, unrelaxed constraints.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .model import (
    IndependentPolicy,
    JointPolicy,
    device_gain,
    device_gain_gradient,
    network_gain_independent,
    joint_gain_simplified,
    product_moments,
)
from .network import (
    ConstraintSet,
    JointLayout,
    _rate_slopes,
    build_constraints_independent,
    build_constraints_joint,
    independent_violations,
    joint_violations,
)

__all__ = [
    "SolverConfig",
    "McCormickState",
    "RatioProgram",
    "SolverReport",
    "project_constraints",
    "inner_convex_solve",
    "find_feasible_point",
    "jong_solve",
    "JongResult",
    "solve_independent",
    "solve_joint",
    "policy_fair",
    "policy_importance",
    "policy_all_on",
    "policy_grid_search",
]


# ---------------------------------------------------------------------------
# configuration and report types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SolverConfig:
    """All numeric tolerances and iteration caps in one place."""

    outer_tol: float = 1e-6          # relative objective change across outer rounds
    outer_max_iter: int = 50
    jong_tol: float = 1e-8           # fixed-point residual on (beta, u)
    jong_max_iter: int = 120
    kkt_tol: float = 1e-8            # projected-gradient fixed-point residual
    inner_max_iter: int = 4000
    dykstra_tol: float = 1e-13
    dykstra_max_cycles: int = 10000
    feas_tol: float = 1e-7           # accepted exact-constraint violation
    restore_tol: float = 1e-7        # bilinear budget violation triggering restoration
    box_shrink: float = 0.5
    box_floor: float = 0.05          # envelope width floor, fraction of global range
    psd_floor: float = 0.0           # eigenvalue floor of the schedule covariance


@dataclass
class McCormickState:
    """Envelope sub-box for the bilinear energy term, with its history."""

    pi_lo: np.ndarray
    pi_hi: np.ndarray
    p_lo: np.ndarray
    p_hi: np.ndarray
    p_max: np.ndarray
    history: list = field(default_factory=list)

    @classmethod
    def full_box(cls, p_max) -> "McCormickState":
        p_max = np.asarray(p_max, dtype=float)
        k = p_max.shape[0]
        return cls(np.zeros(k), np.ones(k), np.zeros(k), p_max.copy(), p_max)

    def shrunk_around(self, pi, p_s, factor: float, floor: float) -> "McCormickState":
        """Halve the box around an incumbent, never below the floor width.

        The incumbent always ends up inside the new box, so recentering
        cannot cut it off.
        """
        def clamp(center, lo_old, hi_old, width_old, rng):
            w = np.minimum(np.maximum(factor * width_old, floor * rng), width_old)
            lo = np.clip(center - 0.5 * w, lo_old, hi_old - w)
            lo = np.maximum(lo, lo_old)
            hi = np.minimum(lo + w, hi_old)
            lo = np.minimum(lo, np.asarray(center, dtype=float))
            hi = np.maximum(hi, np.asarray(center, dtype=float))
            return lo, hi

        pi = np.asarray(pi, dtype=float)
        p_s = np.asarray(p_s, dtype=float)
        rng_p = np.maximum(self.p_max, 1e-12)
        pi_lo, pi_hi = clamp(pi, self.pi_lo, self.pi_hi, self.pi_hi - self.pi_lo, 1.0)
        p_lo, p_hi = clamp(p_s, self.p_lo, self.p_hi, self.p_hi - self.p_lo, rng_p)
        hist = self.history + [(self.pi_lo.copy(), self.pi_hi.copy(), self.p_lo.copy(), self.p_hi.copy())]
        return McCormickState(pi_lo, pi_hi, p_lo, p_hi, self.p_max, hist)


@dataclass
class RatioProgram:
    """Sum of affine-over-affine ratios plus an affine offset, to maximize.

    Objective: offset + sum_i (num_coef_i . x + num_const_i)
                              / (den_coef_i . x + den_const_i)
    Denominators must stay positive over the whole constraint box.
    """

    num_coef: np.ndarray
    num_const: np.ndarray
    den_coef: np.ndarray
    den_const: np.ndarray
    constraints: ConstraintSet
    offset: float = 0.0

    def __post_init__(self):
        self.num_coef = np.atleast_2d(np.asarray(self.num_coef, dtype=float))
        self.den_coef = np.atleast_2d(np.asarray(self.den_coef, dtype=float))
        self.num_const = np.asarray(self.num_const, dtype=float).ravel()
        self.den_const = np.asarray(self.den_const, dtype=float).ravel()
        lo, hi = self.constraints.lower, self.constraints.upper
        den_min = self.den_const + np.sum(np.minimum(self.den_coef * lo, self.den_coef * hi), axis=1)
        if np.any(den_min <= 0):
            raise ValueError("ratio denominators must be positive over the box")

    @property
    def num_terms(self) -> int:
        return self.num_const.shape[0]

    def numerators(self, x) -> np.ndarray:
        return self.num_coef @ x + self.num_const

    def denominators(self, x) -> np.ndarray:
        return self.den_coef @ x + self.den_const

    def value(self, x) -> float:
        if self.num_terms == 0:
            return self.offset
        return self.offset + float(np.sum(self.numerators(x) / self.denominators(x)))


@dataclass
class SolverReport:
    """Outcome of a policy computation.

    status is "ok", "infeasible" or "no_converge"; max_violation is the
    worst exact-constraint violation of the returned policy; violated
    names the offending constraints when infeasible.
    """

    policy: object
    objective: float
    status: str
    iterations: int = 0
    max_violation: float = 0.0
    violated: list = field(default_factory=list)
    residuals: dict = field(default_factory=dict)
    wall_time: float = 0.0
    objective_trace: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# projection onto the constraint set
# ---------------------------------------------------------------------------

def _psd_repair(x, layout: JointLayout, floor: float) -> np.ndarray:
    """Clip the schedule covariance spectrum, keeping the marginals fixed."""
    m, p = layout.unpack(np.asarray(x, dtype=float))
    d = np.diag(m).copy()
    cov = m - np.outer(d, d)
    cov = 0.5 * (cov + cov.T)
    evals, evecs = np.linalg.eigh(cov)
    if evals[0] >= floor:
        return np.asarray(x, dtype=float)
    cov = (evecs * np.maximum(evals, floor)) @ evecs.T
    m2 = cov + np.outer(d, d)
    np.fill_diagonal(m2, d)
    return layout.pack(m2, p)


def _project_halfspace_box(y, a, b, lo, hi):
    """Exact projection onto one halfspace intersected with a box.

    The projection is clip(y - t a) with t >= 0 the root of the
    piecewise-linear decreasing map t -> a . clip(y - t a) - b, found by
    bisection to machine precision.
    """
    x = np.clip(y, lo, hi)
    if float(a @ x) <= b + 1e-15:
        return x, True
    neg = a < 0
    corner = np.where(neg, hi, lo)
    best = float(a @ corner)
    if best > b + 1e-12:
        # even the most favorable corner violates the row: empty set
        return np.clip(corner, lo, hi), False
    t_lo, t_hi = 0.0, 1.0
    for _ in range(80):
        if float(a @ np.clip(y - t_hi * a, lo, hi)) <= b:
            break
        t_lo = t_hi
        t_hi *= 2.0
    for _ in range(100):
        t_mid = 0.5 * (t_lo + t_hi)
        if float(a @ np.clip(y - t_mid * a, lo, hi)) > b:
            t_lo = t_mid
        else:
            t_hi = t_mid
        if t_hi - t_lo <= 1e-16 * max(1.0, t_hi):
            break
    return np.clip(y - t_hi * a, lo, hi), True


def project_constraints(cs: ConstraintSet, x0, cfg: SolverConfig = None, psd_floor: float = None):
    """Project a point onto {linear rows} ∩ {box} (∩ covariance repair).

    Dykstra-style alternating projections: each halfspace, the optional
    covariance repair, and the box are visited in turn, each keeping its
    own correction term.  The box comes last so the returned point always
    respects the bounds exactly.  Returns (point, converged).
    """
    cfg = cfg or SolverConfig()
    if psd_floor is None:
        psd_floor = cfg.psd_floor
    x0 = np.asarray(x0, dtype=float)
    a, b = cs.a, cs.b
    m = a.shape[0]
    if cs.max_violation(x0) <= 1e-15:
        return x0.copy(), True
    row_n2 = np.einsum("ij,ij->i", a, a) if m else np.zeros(0)
    if m and np.any((row_n2 == 0) & (b < 0)):
        # an all-zero row with negative bound marks an empty set
        return np.clip(x0, cs.lower, cs.upper), False
    keep = row_n2 > 0
    a, b, row_n2 = a[keep], b[keep], row_n2[keep]
    m = a.shape[0]
    use_psd = cs.psd_layout is not None
    if not use_psd and m <= 1:
        if m == 0:
            return np.clip(x0, cs.lower, cs.upper), True
        return _project_halfspace_box(x0, a[0], b[0], cs.lower, cs.upper)
    q_hs = np.zeros((m, x0.shape[0]))
    q_box = np.zeros_like(x0)
    q_psd = np.zeros_like(x0)
    x = x0.copy()
    for cycle in range(cfg.dykstra_max_cycles):
        x_start = x
        for i in range(m):
            v = x + q_hs[i]
            s = float(a[i] @ v) - b[i]
            y = v - (max(s, 0.0) / row_n2[i]) * a[i] if s > 0.0 else v
            q_hs[i] = v - y
            x = y
        if use_psd:
            v = x + q_psd
            y = _psd_repair(v, cs.psd_layout, psd_floor)
            q_psd = v - y
            x = y
        v = x + q_box
        y = np.clip(v, cs.lower, cs.upper)
        q_box = v - y
        x = y
        delta = float(np.max(np.abs(x - x_start)))
        scale = max(1.0, float(np.max(np.abs(x))))
        if delta < cfg.dykstra_tol * scale and cs.max_violation(x) < 1e-10:
            return x, True
    return x, False


# ---------------------------------------------------------------------------
# projected-gradient inner solver
# ---------------------------------------------------------------------------

def inner_convex_solve(objective: Callable, gradient: Callable, cs: ConstraintSet,
                       x0, cfg: SolverConfig = None) -> tuple:
    """Maximize a smooth concave objective over a ConstraintSet.

    Projected gradient ascent with backtracking line search; all
    projections go through the Dykstra-style cycle.  Returns (x, info)
    where info reports the final fixed-point residual, iterations, and
    whether any projection cycle hit its cap.
    """
    cfg = cfg or SolverConfig()
    x, ok = project_constraints(cs, np.asarray(x0, dtype=float), cfg)
    proj_flagged = not ok

    g0 = np.asarray(gradient(x), dtype=float)
    gscale = float(np.max(np.abs(g0)))
    if gscale == 0.0 or not np.isfinite(gscale):
        gscale = 1.0
    # normalize so step sizes and tolerances are scale free

    def f(z):
        return float(objective(z)) / gscale

    def grad(z):
        return np.asarray(gradient(z), dtype=float) / gscale

    fx = f(x)
    t = 1.0
    # cap steps near the box diameter: the gradient is unit-normalized, so
    # longer steps only saturate the projection
    width = float(np.max(cs.upper - cs.lower)) if cs.size else 1.0
    t_cap = 32.0 * max(1.0, width)
    kkt = np.inf
    kkt_best = np.inf
    plateau = 0
    it = 0
    for it in range(1, cfg.inner_max_iter + 1):
        g = grad(x)
        if float(np.max(np.abs(g))) == 0.0:
            kkt = 0.0
            break
        accepted = False
        first_try = True
        for _ in range(60):
            xn, ok = project_constraints(cs, x + t * g, cfg)
            proj_flagged |= not ok
            dx = xn - x
            fn = f(xn)
            if fn >= fx + 0.1 * float(g @ dx) - 1e-15 * max(1.0, abs(fx)):
                accepted = True
                break
            first_try = False
            t *= 0.5
            if t < 1e-16:
                break
        if not accepted:
            xn, dx, fn = x, np.zeros_like(x), fx
        step_norm = float(np.max(np.abs(dx)))
        x, fx = xn, fn
        if first_try and accepted:
            t = min(t * 2.0, t_cap)
        if accepted and step_norm > 10 * cfg.kkt_tol and it % 4 != 0:
            continue
        xk, ok = project_constraints(cs, x + grad(x), cfg)
        proj_flagged |= not ok
        kkt = float(np.max(np.abs(x - xk)))
        if kkt < cfg.kkt_tol:
            break
        if not accepted:
            break
        # bail out once the residual stops improving between checks
        if kkt < 0.9 * kkt_best:
            kkt_best = kkt
            plateau = 0
        else:
            plateau += 1
            if plateau >= 5:
                break
    info = {"kkt_residual": kkt, "iterations": it, "projection_flagged": proj_flagged}
    return x, info


def find_feasible_point(cs: ConstraintSet, cfg: SolverConfig = None) -> tuple:
    """Phase-one search: minimize the common slack of all rows.

    Returns (x, names) with x a feasible point and names empty, or
    (best_attempt, violated_names) when the set is judged empty.
    """
    cfg = cfg or SolverConfig()
    n = cs.size
    x_mid = np.clip(0.5 * (cs.lower + cs.upper), cs.lower, cs.upper)
    if cs.max_violation(x_mid) <= cfg.feas_tol:
        return x_mid, []
    s0 = cs.max_violation(x_mid) + 1.0
    a_ext = np.hstack([cs.a, -np.ones((cs.a.shape[0], 1))]) if cs.a.shape[0] else np.zeros((0, n + 1))
    ext = ConstraintSet(a_ext, cs.b, list(cs.names),
                        np.append(cs.lower, 0.0), np.append(cs.upper, s0),
                        None)
    z0 = np.append(x_mid, s0)
    coef = np.zeros(n + 1)
    coef[-1] = -1.0
    z, _ = inner_convex_solve(lambda v: float(coef @ v), lambda v: coef, ext, z0, cfg)
    x = z[:-1]
    # polish: the slack variable may lag the actual violation
    x, _ = project_constraints(cs, x, cfg)
    viol = cs.max_violation(x)
    if viol <= cfg.feas_tol:
        return x, []
    rows = cs.violations(x)
    order = np.argsort(-rows)
    names = [cs.names[i] for i in order[:3] if rows[i] > cfg.feas_tol]
    if not names:
        names = ["box"]
    return x, names


# ---------------------------------------------------------------------------
# sum-of-ratios solver
# ---------------------------------------------------------------------------

@dataclass
class JongResult:
    x: np.ndarray
    value: float
    beta: np.ndarray
    u: np.ndarray
    residual: float
    iterations: int
    converged: bool


def jong_solve(rp: RatioProgram, tol: float = 1e-8, max_iter: int = 120,
               x0=None, cfg: SolverConfig = None) -> JongResult:
    """Maximize a sum of ratios through its parametric fixed point.

    The stationary point satisfies beta_i = N_i(x)/D_i(x) and
    u_i = 1/D_i(x), with x maximizing sum_i u_i (N_i - beta_i D_i) over
    the constraints.  The parameters are driven to that fixed point by
    damped full updates: a step that increases the residual is retried at
    half damping from the previous parameters.
    """
    cfg = cfg or SolverConfig()
    cs = rp.constraints
    if x0 is None:
        x0, bad = find_feasible_point(cs, cfg)
        if bad:
            raise ValueError("ratio program constraints are infeasible: " + ", ".join(bad))
    x = np.asarray(x0, dtype=float)
    x, _ = project_constraints(cs, x, cfg)
    if rp.num_terms == 0:
        return JongResult(x, rp.value(x), np.zeros(0), np.zeros(0), 0.0, 0, True)
    num = rp.numerators(x)
    den = rp.denominators(x)
    beta = num / den
    u = 1.0 / den
    prev_residual = np.inf
    residual = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        coef = (u[:, None] * (rp.num_coef - beta[:, None] * rp.den_coef)).sum(axis=0)
        const = float(np.sum(u * (rp.num_const - beta * rp.den_const)))
        x, _ = inner_convex_solve(lambda v: float(coef @ v) + const, lambda v: coef, cs, x, cfg)
        num = rp.numerators(x)
        den = rp.denominators(x)
        residual = max(float(np.max(np.abs(-num + beta * den))),
                       float(np.max(np.abs(u * den - 1.0))))
        if residual < tol:
            return JongResult(x, rp.value(x), beta, u, residual, it, True)
        if residual > prev_residual * (1 + 1e-12):
            # damp toward the previous parameters and retry
            zeta = 0.5
            improved = False
            for _ in range(12):
                beta_try = beta + zeta * (num / den - beta)
                u_try = u + zeta * (1.0 / den - u)
                r_try = max(float(np.max(np.abs(-num + beta_try * den))),
                            float(np.max(np.abs(u_try * den - 1.0))))
                if r_try <= prev_residual:
                    beta, u = beta_try, u_try
                    improved = True
                    break
                zeta *= 0.5
            if not improved:
                beta, u = num / den, 1.0 / den
        else:
            beta, u = num / den, 1.0 / den
        prev_residual = min(prev_residual, residual)
    return JongResult(x, rp.value(x), beta, u, residual, it, residual < tol)


# ---------------------------------------------------------------------------
# scenario helpers
# ---------------------------------------------------------------------------

def _device_arrays(scenario):
    devs = scenario.devices
    p_max = np.array([d.p_max for d in devs], dtype=float)
    p_f = np.array([d.p_f for d in devs], dtype=float)
    return p_max, p_f


def _gain_vector(scenario, p_s) -> np.ndarray:
    return np.array([device_gain(d.stats, float(p)) for d, p in zip(scenario.devices, p_s)])


def _gain_scale(scenario) -> float:
    p_max, _ = _device_arrays(scenario)
    total = float(np.sum(_gain_vector(scenario, p_max)))
    return total if total > 0 else 1.0


def _power_ratio_program(scenario, weights, cs_p: ConstraintSet, gscale: float) -> RatioProgram:
    """Ratios of the power block: weight_k * a_n * P_k / (sigma2_n P_k + eta2_n).

    One ratio per noisy feature of each positively weighted device;
    noiseless features contribute an affine offset.  Weights must be
    nonnegative (they are schedule probabilities, possibly cross-boosted).
    """
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < -1e-12):
        raise ValueError("ratio weights must be nonnegative")
    weights = np.maximum(weights, 0.0)
    n_var = cs_p.size
    ncoef, nconst, dcoef, dconst = [], [], [], []
    offset = 0.0
    for k, dev in enumerate(scenario.devices):
        w = weights[k] / gscale
        if w == 0.0:
            continue
        a, s2, e2 = dev.stats.pair_sq, dev.stats.sigma2, dev.stats.eta2
        clean = e2 == 0
        if np.any(clean):
            offset += w * float(np.sum(a[clean] / s2[clean]))
        for n in np.nonzero(~clean)[0]:
            if a[n] == 0.0:
                continue
            row_n = np.zeros(n_var)
            row_n[k] = w * a[n]
            row_d = np.zeros(n_var)
            row_d[k] = s2[n]
            ncoef.append(row_n)
            nconst.append(0.0)
            dcoef.append(row_d)
            dconst.append(e2[n])
    if not ncoef:
        ncoef = np.zeros((0, n_var))
        dcoef = np.zeros((0, n_var))
        nconst = np.zeros(0)
        dconst = np.zeros(0)
    return RatioProgram(np.array(ncoef), np.array(nconst), np.array(dcoef),
                        np.array(dconst), cs_p, offset)


def _restore_energy(scenario, pi, p_s, cfg: SolverConfig):
    """Scale the schedule down if the true bilinear budget is exceeded."""
    p_max, p_f = _device_arrays(scenario)
    t = scenario.timing
    cost = float(np.sum((p_s * t.t_s + p_f * t.t_f) * pi))
    budget = scenario.energy.joules
    if cost <= budget + cfg.restore_tol or cost <= 0:
        return pi
    return pi * (budget / cost)


def _exact_power_set(scenario, sched) -> Optional[ConstraintSet]:
    """Power-block constraints at a fixed schedule, without envelopes.

    With the schedule pinned the energy budget is linear in the sensing
    powers, so a single exact row plus the box suffices.  Returns None
    when the feature-sending cost alone already exceeds the budget.
    """
    p_max, p_f = _device_arrays(scenario)
    t = scenario.timing
    sched = np.asarray(sched, dtype=float)
    rhs = scenario.energy.joules - float(np.sum(sched * p_f * t.t_f))
    if rhs < -1e-12:
        return None
    a = (t.t_s * sched)[None, :]
    return ConstraintSet(a, np.array([rhs]), ["C3"],
                         np.zeros(sched.shape[0]), p_max, None)


def _scale_sweep(top: float) -> np.ndarray:
    """Uniform schedule scalings explored by the refinement step."""
    hi = min(1.0 / top, 20.0)
    return np.linspace(0.05, max(hi, 0.05), 24)


def _hopeless_rate(scenario) -> Optional[str]:
    """A guarantee no schedule can meet, or None.

    The most favorable schedule for device k keeps every other device
    permanently sensing while k idles; its rate share then still falls
    short once the guarantee slope exceeds one.
    """
    q = _rate_slopes(scenario)
    if np.any(q > 1.0 + 1e-12):
        bad = int(np.argmax(q))
        return f"C2.b[{bad}]"
    return None


def _phase1_independent(scenario, cfg: SolverConfig):
    """Search for an exactly feasible (pi, P) pair, shrinking the envelope box.

    The envelope rows restrict the true budget, so a failure on the full
    box is retried on boxes shrunk around the best attempt, where the
    envelopes hug the bilinear term more closely.
    """
    p_max, _ = _device_arrays(scenario)
    k = p_max.shape[0]
    mc = McCormickState.full_box(p_max)
    bad = ["box"]
    for _ in range(4):
        cs = build_constraints_independent(scenario, mc)
        x, bad = find_feasible_point(cs, cfg)
        pi, p_s = np.clip(x[:k], 0.0, 1.0), np.clip(x[k:], 0.0, p_max)
        if not bad:
            pi = _restore_energy(scenario, pi, p_s, cfg)
            v = independent_violations(scenario, pi, p_s)
            if max(v.values()) <= cfg.feas_tol:
                return (pi, p_s), []
            bad = [n for n, val in v.items() if val > cfg.feas_tol]
        mc = mc.shrunk_around(pi, p_s, cfg.box_shrink, cfg.box_floor)
    return None, bad


def _exact_schedule_set(scenario, p_s) -> ConstraintSet:
    """Schedule-block constraints at fixed powers, without envelopes.

    With the powers pinned the energy budget is linear in the schedule,
    so the block problem needs only the exact budget row, the feature
    upload time row, and the per-device rate rows.
    """
    p_max, p_f = _device_arrays(scenario)
    t = scenario.timing
    k = p_max.shape[0]
    payload = np.array([d.payload_bits for d in scenario.devices], dtype=float)
    tau = payload / (scenario.rates.e * scenario.radio.bandwidth)
    q = _rate_slopes(scenario)
    rows = [t.t_s * np.asarray(p_s, dtype=float) + p_f * t.t_f, tau]
    b = [scenario.energy.joules, t.t_f]
    names = ["C3", "C2.a"]
    for i in range(k):
        row = np.full(k, -q[i])
        row[i] = 1.0
        rows.append(row)
        b.append(1.0 - q[i] * k)
        names.append(f"C2.b[{i}]")
    return ConstraintSet(np.asarray(rows), np.asarray(b), names,
                         np.zeros(k), np.ones(k), None)


def _power_polish(scenario, weights, cs_p: ConstraintSet, x0, cfg, gscale):
    """Ascend the true concave power gain from a warm start.

    The parametric fixed point can settle below the subproblem optimum;
    the weighted gain is concave and separable in the powers, so a
    projected-gradient pass from that point closes the gap.
    """
    w = np.maximum(np.asarray(weights, dtype=float), 0.0) / gscale
    a = np.stack([d.stats.pair_sq for d in scenario.devices])
    s2 = np.stack([d.stats.sigma2 for d in scenario.devices])
    e2 = np.stack([d.stats.eta2 for d in scenario.devices])
    noisy = e2 > 0
    safe = np.where(noisy, 1.0, np.inf)
    clean_gain = np.where(noisy, 0.0, a / np.where(s2 > 0, s2, 1.0))

    def f(p):
        pc = np.maximum(np.asarray(p, dtype=float), 0.0)[:, None]
        den = np.where(noisy, s2 * pc + e2, safe)
        g = np.where(noisy, a * pc / den, clean_gain)
        return float(w @ g.sum(axis=1))

    def grad(p):
        pc = np.maximum(np.asarray(p, dtype=float), 0.0)[:, None]
        den = np.where(noisy, s2 * pc + e2, safe)
        dg = np.where(noisy, a * e2 / den**2, 0.0)
        return w * dg.sum(axis=1)

    x, _ = inner_convex_solve(f, grad, cs_p, x0, cfg)
    return np.clip(x, cs_p.lower, cs_p.upper)


def _solve_power_exact(scenario, sched, obj_weights, x0, cfg, gscale):
    """Best powers for a pinned schedule, or None if it cannot be afforded."""
    cs_p = _exact_power_set(scenario, sched)
    if cs_p is None:
        return None
    if float(np.max(obj_weights, initial=0.0)) <= 0.0:
        x, _ = project_constraints(cs_p, np.asarray(x0, dtype=float), cfg)
        return x
    # the weighted gain is concave in the powers, so the gradient engine
    # alone reaches the subproblem optimum
    return _power_polish(scenario, obj_weights, cs_p, x0, cfg, gscale)


def _refine_independent(scenario, incumbent, cfg, gscale, true_obj, exact_viol):
    """Escape the stalls coordinate alternation cannot cross on its own.

    Deterministic moves around the incumbent, each followed by the exact
    power subproblem: a uniform scaling of the schedule (trades schedule
    mass for power depth along the energy frontier), one-device schedule
    sweeps (a device at zero power earns zero schedule weight and vice
    versa, so alternation alone never regrows the support), and an exact
    schedule step at the refined powers.  Keeps the incumbent unless an
    exactly feasible point does better.
    """
    best = incumbent
    p_max, _ = _device_arrays(scenario)
    gmax = _gain_vector(scenario, p_max)

    def consider(pi_c):
        nonlocal best
        # full-power gain bounds the candidate, whatever the budget allows
        if float(pi_c @ gmax) <= best[2] + 1e-15:
            return False
        p_new = _solve_power_exact(scenario, pi_c, pi_c, best[1], cfg, gscale)
        if p_new is None:
            return False
        pi_t = _restore_energy(scenario, pi_c, p_new, cfg)
        worst, _ = exact_viol(pi_t, p_new)
        if worst <= cfg.feas_tol:
            obj = true_obj(pi_t, p_new)
            if obj > best[2] + 1e-15:
                best = (pi_t, p_new, obj)
                return True
        return False

    top = float(np.max(best[0]))
    if top > 0.0:
        for s in _scale_sweep(top):
            consider(np.clip(best[0] * s, 0.0, 1.0))

    k = best[0].shape[0]
    marks = np.linspace(0.0, 1.0, 9)
    for _ in range(6):
        moved = False
        for i in range(k):
            for val in marks:
                if abs(best[0][i] - val) < 1e-12:
                    continue
                pi_c = best[0].copy()
                pi_c[i] = val
                if consider(pi_c):
                    moved = True
        g = _gain_vector(scenario, best[1]) / gscale
        cs_pi = _exact_schedule_set(scenario, best[1])
        pi_lp, _ = inner_convex_solve(lambda v: float(g @ v), lambda v: g,
                                      cs_pi, best[0], cfg)
        if consider(np.clip(pi_lp, 0.0, 1.0)):
            moved = True
        if not moved:
            break
    return best


def _refine_joint(scenario, incumbent, c, cfg, gscale, true_obj, acceptable):
    """Joint-mode analogue of the schedule/power refinement.

    The whole moment matrix is scaled uniformly (shrinking keeps the
    Frechet band and the covariance cone; growth is re-snapped and
    checked), single marginals are swept over their range, and the exact
    power subproblem is re-solved at each candidate's marginals.
    """
    best = incumbent
    p_max, _ = _device_arrays(scenario)
    gmax = _gain_vector(scenario, p_max)

    def consider(m_c):
        nonlocal best
        d_c = np.diag(m_c).copy()
        w = d_c + (c * m_c).sum(axis=1)
        if float(w @ gmax) <= best[2] + 1e-15:
            return False
        p_new = _solve_power_exact(scenario, d_c, w, best[1], cfg, gscale)
        if p_new is None:
            return False
        d_t = _restore_energy(scenario, d_c, p_new, cfg)
        if np.any(d_t < d_c):
            factor = np.divide(d_t, d_c, out=np.ones_like(d_c), where=d_c > 0)
            m_t = m_c * np.sqrt(np.outer(factor, factor))
            np.fill_diagonal(m_t, d_t)
            m_t = _clean_moments(m_t)
        else:
            m_t = m_c
        v = joint_violations(scenario, m_t, p_new)
        if acceptable(v):
            obj = true_obj(m_t, p_new)
            if obj > best[2] + 1e-15:
                best = (m_t, p_new, obj)
                return True
        return False

    def with_lift(m_c):
        hit = consider(m_c)
        # the cross weights are nonnegative, so the comonotone coupling
        # (always a realizable moment matrix) dominates other off-diagonals
        como = np.minimum.outer(np.diag(m_c), np.diag(m_c))
        if not np.allclose(como, m_c):
            hit = consider(como) or hit
        return hit

    with_lift(best[0])
    top = float(np.max(np.diag(best[0])))
    if top > 0.0:
        for s in _scale_sweep(top):
            with_lift(_clean_moments(best[0] * s))

    k = best[0].shape[0]
    marks = np.linspace(0.0, 1.0, 9)
    for _ in range(6):
        moved = False
        for i in range(k):
            for val in marks:
                if abs(best[0][i, i] - val) < 1e-12:
                    continue
                m_c = best[0].copy()
                m_c[i, i] = val
                if with_lift(_clean_moments(m_c)):
                    moved = True
        if not moved:
            break
    return best


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------

def solve_independent(scenario, cfg: SolverConfig = None, warm_starts=None) -> SolverReport:
    """Maximize the independent-schedule network gain.

    Alternates a linear schedule step with a fractional power step inside
    shrinking energy envelopes, keeping the best exactly feasible point
    ever seen (baselines, warm starts included) as the incumbent.
    """
    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()
    p_max, _ = _device_arrays(scenario)
    k = p_max.shape[0]
    gscale = _gain_scale(scenario)

    def true_obj(pi, p_s):
        return network_gain_independent(IndependentPolicy(pi, p_s), scenario.devices)

    def exact_viol(pi, p_s):
        v = independent_violations(scenario, pi, p_s)
        worst = max(v.values())
        return worst, [n for n, val in v.items() if val > cfg.feas_tol]

    hopeless = _hopeless_rate(scenario)
    if hopeless is not None:
        report = SolverReport(None, 0.0, "infeasible", violated=[hopeless])
        report.wall_time = time.perf_counter() - t0
        return report

    # candidate pool: every exactly feasible point we can get cheaply
    incumbent = None
    for rep in (policy_fair(scenario, cfg), policy_importance(scenario, cfg),
                policy_all_on(scenario, cfg)):
        if rep.status == "ok":
            cand = (np.asarray(rep.policy.pi), np.asarray(rep.policy.p_s), rep.objective)
            if incumbent is None or cand[2] > incumbent[2]:
                incumbent = cand
    for pi_w, p_w in warm_starts or ():
        pi_w = np.clip(np.asarray(pi_w, dtype=float), 0.0, 1.0)
        p_w = np.clip(np.asarray(p_w, dtype=float), 0.0, p_max)
        worst_w, _ = exact_viol(pi_w, p_w)
        if worst_w <= cfg.feas_tol:
            cand = (pi_w, p_w, true_obj(pi_w, p_w))
            if incumbent is None or cand[2] > incumbent[2]:
                incumbent = cand
    zero = (np.zeros(k), np.zeros(k))
    worst0, names0 = exact_viol(*zero)
    if worst0 <= cfg.feas_tol and incumbent is None:
        incumbent = (*zero, 0.0)
    if incumbent is None:
        found, bad = _phase1_independent(scenario, cfg)
        if found is None:
            report = SolverReport(None, 0.0, "infeasible", violated=bad or names0)
            report.wall_time = time.perf_counter() - t0
            return report
        pi_f, p_f_ = found
        incumbent = (pi_f, p_f_, true_obj(pi_f, p_f_))

    mc = McCormickState.full_box(p_max)

    pi_cur, p_cur = incumbent[0].copy(), incumbent[1].copy()
    residuals = {}
    trace = [incumbent[2]]
    status = "ok"
    outer = 0
    for outer in range(1, cfg.outer_max_iter + 1):
        cs = build_constraints_independent(scenario, mc)
        pi_cur = np.clip(pi_cur, mc.pi_lo, mc.pi_hi)
        p_cur = np.clip(p_cur, mc.p_lo, np.minimum(mc.p_hi, p_max))
        # schedule step: linear in pi at fixed powers
        g = _gain_vector(scenario, p_cur) / gscale
        cs_pi = cs.partial(np.arange(k, 2 * k), p_cur)
        pi_new, info_pi = inner_convex_solve(lambda v: float(g @ v), lambda v: g, cs_pi, pi_cur, cfg)
        pi_new = np.clip(pi_new, cs_pi.lower, cs_pi.upper)
        residuals["inner_kkt"] = info_pi["kkt_residual"]
        # power step: sum of ratios at the fixed schedule
        cs_p = cs.partial(np.arange(k), pi_new)
        rp = _power_ratio_program(scenario, pi_new, cs_p, gscale)
        jr = jong_solve(rp, cfg.jong_tol, cfg.jong_max_iter, x0=p_cur, cfg=cfg)
        residuals["jong_residual"] = jr.residual
        p_new = _power_polish(scenario, pi_new, cs_p, jr.x, cfg, gscale)
        pi_try = _restore_energy(scenario, pi_new, p_new, cfg)
        worst, names = exact_viol(pi_try, p_new)
        obj_before = incumbent[2]
        if worst <= cfg.feas_tol:
            obj = true_obj(pi_try, p_new)
            if obj > incumbent[2]:
                incumbent = (pi_try, p_new, obj)
        tol_step = cfg.outer_tol * max(1.0, abs(obj_before))
        if incumbent[2] <= obj_before + tol_step:
            # alternation stalled: try the trade/kick refinement
            incumbent = _refine_independent(scenario, incumbent, cfg, gscale,
                                            true_obj, exact_viol)
        pi_cur, p_cur = incumbent[0].copy(), incumbent[1].copy()
        delta = incumbent[2] - obj_before
        residuals["outer_delta"] = delta
        trace.append(incumbent[2])
        if outer >= 2 and delta <= tol_step:
            break
        mc = mc.shrunk_around(incumbent[0], incumbent[1], cfg.box_shrink, cfg.box_floor)
    else:
        status = "no_converge"

    pi_b, p_b, obj = incumbent
    worst, names = exact_viol(pi_b, p_b)
    report = SolverReport(IndependentPolicy(pi_b, p_b), obj, status, iterations=outer,
                          max_violation=max(worst, 0.0), violated=names, residuals=residuals,
                          objective_trace=trace)
    report.wall_time = time.perf_counter() - t0
    return report


def solve_joint(scenario, c=None, cfg: SolverConfig = None, warm_starts=None) -> SolverReport:
    """Maximize the surrogate joint-schedule gain over moment matrices.

    Same alternating driver as the independent case; the schedule step
    optimizes the full moment matrix (marginals and pair moments) with
    the rate tangent re-anchored at the incumbent marginals each round,
    and the covariance repair active inside every projection.
    """
    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()
    if c is None:
        if scenario.correlation is None or scenario.correlation.c is None:
            raise ValueError("cross-gain weights c are required for the joint mode")
        c = scenario.correlation.c
    c = np.asarray(c, dtype=float)
    p_max, _ = _device_arrays(scenario)
    k = p_max.shape[0]
    layout = JointLayout(k)
    gscale = _gain_scale(scenario)

    def true_obj(m, p_s):
        return joint_gain_simplified(JointPolicy(m, p_s), scenario.devices, c)

    def exact_viol(m, p_s):
        v = joint_violations(scenario, m, p_s)
        worst = max(v.values())
        return worst, [n for n, val in v.items() if val > cfg.feas_tol]

    hopeless = _hopeless_rate(scenario)
    if hopeless is not None:
        report = SolverReport(None, 0.0, "infeasible", violated=[hopeless])
        report.wall_time = time.perf_counter() - t0
        return report

    def acceptable(v):
        # moment validity is held tighter than the physical tolerances so
        # accepted matrices always construct a valid policy
        worst_phys = max(val for nm, val in v.items() if not nm.startswith("C4"))
        worst_mom = max((val for nm, val in v.items() if nm.startswith("C4")), default=0.0)
        return worst_phys <= cfg.feas_tol and worst_mom <= 1e-9

    incumbent = None
    for rep in (policy_fair(scenario, cfg), policy_importance(scenario, cfg),
                policy_all_on(scenario, cfg)):
        if rep.status == "ok":
            m = product_moments(np.asarray(rep.policy.pi))
            p_s = np.asarray(rep.policy.p_s)
            if acceptable(joint_violations(scenario, m, p_s)):
                cand = (m, p_s, true_obj(m, p_s))
                if incumbent is None or cand[2] > incumbent[2]:
                    incumbent = cand
    for m_w, p_w in warm_starts or ():
        m_w = _clean_moments(np.asarray(m_w, dtype=float))
        p_w = np.clip(np.asarray(p_w, dtype=float), 0.0, p_max)
        if acceptable(joint_violations(scenario, m_w, p_w)):
            cand = (m_w, p_w, true_obj(m_w, p_w))
            if incumbent is None or cand[2] > incumbent[2]:
                incumbent = cand
    zerom = (np.zeros((k, k)), np.zeros(k))
    v0 = joint_violations(scenario, *zerom)
    names0 = [n for n, val in v0.items() if val > cfg.feas_tol]
    if incumbent is None and acceptable(v0):
        incumbent = (*zerom, 0.0)
    if incumbent is None:
        # a feasible independent schedule lifts to valid product moments
        found, bad = _phase1_independent(scenario, cfg)
        if found is None:
            report = SolverReport(None, 0.0, "infeasible", violated=bad or names0)
            report.wall_time = time.perf_counter() - t0
            return report
        pi_f, p_f_ = found
        m_f = product_moments(pi_f)
        incumbent = (m_f, p_f_, true_obj(m_f, p_f_))

    mc = McCormickState.full_box(p_max)

    m_cur, p_cur = incumbent[0].copy(), incumbent[1].copy()
    residuals = {}
    trace = [incumbent[2]]
    status = "ok"
    outer = 0
    iu = np.triu_indices(k, 1)
    for outer in range(1, cfg.outer_max_iter + 1):
        nu = np.clip(np.diag(incumbent[0]), 0.0, 1.0)
        cs = build_constraints_joint(scenario, mc, nu)
        p_cur = np.clip(p_cur, mc.p_lo, np.minimum(mc.p_hi, p_max))
        g = _gain_vector(scenario, p_cur) / gscale
        coef = np.zeros(layout.size)
        coef[:k] = g
        coef[k : k + layout.num_pairs] = c[iu] * (g[iu[0]] + g[iu[1]])
        cs_m = ConstraintSet(cs.a[:, : k + layout.num_pairs],
                             cs.b - cs.a[:, k + layout.num_pairs :] @ p_cur,
                             list(cs.names),
                             cs.lower[: k + layout.num_pairs],
                             cs.upper[: k + layout.num_pairs],
                             psd_layout=None)
        cs_m.psd_layout = _MomentOnlyLayout(k)
        x_m = layout.pack(m_cur, p_cur)[: k + layout.num_pairs]
        cm = coef[: k + layout.num_pairs]
        x_m, info_m = inner_convex_solve(lambda v: float(cm @ v), lambda v: cm, cs_m, x_m, cfg)
        x_m = np.clip(x_m, cs_m.lower, cs_m.upper)
        residuals["inner_kkt"] = info_m["kkt_residual"]
        m_new = _MomentOnlyLayout(k).unpack_moments(x_m)
        m_new = _clean_moments(m_new)
        diag_new = np.diag(m_new)
        weights = diag_new + (c * m_new).sum(axis=1) - np.diag(c * m_new)
        cs_p = cs.partial(np.arange(k + layout.num_pairs), layout.pack(m_new, np.zeros(k))[: k + layout.num_pairs])
        rp = _power_ratio_program(scenario, weights, cs_p, gscale)
        jr = jong_solve(rp, cfg.jong_tol, cfg.jong_max_iter, x0=p_cur, cfg=cfg)
        residuals["jong_residual"] = jr.residual
        p_new = _power_polish(scenario, weights, cs_p, jr.x, cfg, gscale)
        scale = _restore_energy(scenario, diag_new, p_new, cfg)
        if scale.shape == diag_new.shape and np.any(scale < diag_new):
            factor = np.divide(scale, diag_new, out=np.ones_like(scale), where=diag_new > 0)
            m_try = m_new * np.sqrt(np.outer(factor, factor))
            np.fill_diagonal(m_try, scale)
            m_try = _clean_moments(m_try)
        else:
            m_try = m_new
        obj_before = incumbent[2]
        if acceptable(joint_violations(scenario, m_try, p_new)):
            obj = true_obj(m_try, p_new)
            if obj > incumbent[2]:
                incumbent = (m_try, p_new, obj)
        tol_step = cfg.outer_tol * max(1.0, abs(obj_before))
        if incumbent[2] <= obj_before + tol_step:
            # alternation stalled: try the trade/kick refinement
            incumbent = _refine_joint(scenario, incumbent, c, cfg, gscale,
                                      true_obj, acceptable)
        m_cur, p_cur = incumbent[0].copy(), incumbent[1].copy()
        delta = incumbent[2] - obj_before
        residuals["outer_delta"] = delta
        trace.append(incumbent[2])
        if outer >= 2 and delta <= tol_step:
            break
        mc = mc.shrunk_around(np.diag(incumbent[0]), incumbent[1], cfg.box_shrink, cfg.box_floor)
    else:
        status = "no_converge"

    m_b, p_b, obj = incumbent
    worst, names = exact_viol(m_b, p_b)
    report = SolverReport(JointPolicy(m_b, p_b), obj, status, iterations=outer,
                          max_violation=max(worst, 0.0), violated=names, residuals=residuals,
                          objective_trace=trace)
    report.wall_time = time.perf_counter() - t0
    return report


@dataclass(frozen=True)
class _MomentOnlyLayout:
    """Layout view over [diag, offdiag] vectors without the power block."""

    num_devices: int

    @property
    def num_pairs(self) -> int:
        k = self.num_devices
        return k * (k - 1) // 2

    def unpack_moments(self, x) -> np.ndarray:
        k = self.num_devices
        m = np.zeros((k, k))
        np.fill_diagonal(m, x[:k])
        iu = np.triu_indices(k, 1)
        m[iu] = x[k:]
        return m + np.triu(m, 1).T

    def unpack(self, x):
        return self.unpack_moments(x), np.zeros(0)

    def pack(self, m, p) -> np.ndarray:
        k = self.num_devices
        iu = np.triu_indices(k, 1)
        return np.concatenate([np.diag(m), np.asarray(m)[iu]])


def _clean_moments(m) -> np.ndarray:
    """Snap a near-valid moment matrix onto the Frechet box."""
    m = 0.5 * (m + m.T)
    d = np.clip(np.diag(m), 0.0, 1.0)
    k = m.shape[0]
    out = m.copy()
    np.fill_diagonal(out, d)
    for a in range(k):
        for b in range(a + 1, k):
            lo = max(0.0, d[a] + d[b] - 1.0)
            hi = min(d[a], d[b])
            out[a, b] = out[b, a] = min(max(out[a, b], lo), hi)
    return out


# ---------------------------------------------------------------------------
# baseline policies
# ---------------------------------------------------------------------------

def _report_for(scenario, pi, p_s, cfg: SolverConfig, status_override=None) -> SolverReport:
    v = independent_violations(scenario, pi, p_s)
    worst = max(v.values())
    names = [n for n, val in v.items() if val > cfg.feas_tol]
    policy = IndependentPolicy(pi, p_s)
    obj = network_gain_independent(policy, scenario.devices)
    status = status_override or ("ok" if worst <= cfg.feas_tol else "infeasible")
    return SolverReport(policy, obj, status, max_violation=max(worst, 0.0), violated=names)


def policy_fair(scenario, cfg: SolverConfig = None) -> SolverReport:
    """Equal-treatment baseline: one common schedule share, one power fraction.

    Bisects the largest common schedule probability that stays feasible at
    zero sensing power, then the largest common fraction of each device's
    power cap at that schedule.  Endpoints are checked first so saturated
    budgets return exact ones.
    """
    cfg = cfg or SolverConfig()
    p_max, _ = _device_arrays(scenario)
    k = p_max.shape[0]

    # strict predicate so the bisection approaches the boundary from inside
    def feas(pi_c, frac):
        v = independent_violations(scenario, np.full(k, pi_c), frac * p_max)
        return max(v.values()) <= 1e-12

    if not feas(0.0, 0.0):
        rep = _report_for(scenario, np.zeros(k), np.zeros(k), cfg)
        rep.status = "infeasible"
        return rep
    pi_c = _bisect_largest(lambda v: feas(v, 0.0))
    frac = _bisect_largest(lambda v: feas(pi_c, v))
    return _report_for(scenario, np.full(k, pi_c), frac * p_max, cfg)


def _bisect_largest(pred, lo: float = 0.0, hi: float = 1.0, iters: int = 60) -> float:
    """Largest value in [lo, hi] satisfying a monotone predicate."""
    if pred(hi):
        return hi
    if not pred(lo):
        return lo
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if pred(mid):
            lo = mid
        else:
            hi = mid
    return lo


def policy_importance(scenario, cfg: SolverConfig = None) -> SolverReport:
    """Greedy baseline: schedule the most discriminative devices first.

    Devices are visited by decreasing full-power gain (ties to the lower
    index) and switched fully on at the largest power the remaining
    budget affords, skipping any device whose activation breaks a
    constraint.  With no device schedulable the result is infeasible.
    """
    cfg = cfg or SolverConfig()
    p_max, p_f = _device_arrays(scenario)
    k = p_max.shape[0]
    t = scenario.timing
    g = _gain_vector(scenario, p_max)
    order = np.argsort(-g, kind="stable")
    pi = np.zeros(k)
    p_s = np.zeros(k)
    budget = scenario.energy.joules
    for idx in order:
        spent = float(np.sum((p_s * t.t_s + p_f * t.t_f) * pi))
        room = budget - spent - p_f[idx] * t.t_f
        p_try = min(p_max[idx], room / t.t_s)
        if p_try <= 0:
            continue
        pi[idx] = 1.0
        p_s[idx] = p_try
        v = independent_violations(scenario, pi, p_s)
        if max(v.values()) > cfg.feas_tol:
            pi[idx] = 0.0
            p_s[idx] = 0.0
    if not np.any(pi > 0):
        rep = _report_for(scenario, pi, p_s, cfg)
        rep.status = "infeasible"
        rep.violated = rep.violated or ["no schedulable device"]
        return rep
    return _report_for(scenario, pi, p_s, cfg)


def policy_all_on(scenario, cfg: SolverConfig = None) -> SolverReport:
    """Reference point: every device senses every cycle at full power."""
    cfg = cfg or SolverConfig()
    p_max, _ = _device_arrays(scenario)
    return _report_for(scenario, np.ones_like(p_max), p_max, cfg)


# ---------------------------------------------------------------------------
# grid search
# ---------------------------------------------------------------------------

def policy_grid_search(scenario, points_per_axis: int = 9, mode: str = "independent",
                       c=None, cfg: SolverConfig = None, max_cells: float = 6e8) -> SolverReport:
    """Exhaustive reference over gridded policies with exact constraints.

    Scans every grid combination of schedule variables and powers, keeping
    the best point that satisfies the unrelaxed constraints.  Only meant
    as an oracle: refuses more than three devices or too many grid cells.
    """
    cfg = cfg or SolverConfig()
    k = len(scenario.devices)
    if k > 3:
        raise ValueError("grid search supports at most 3 devices")
    if mode == "independent":
        return _grid_independent(scenario, points_per_axis, cfg, max_cells)
    if mode != "joint":
        raise ValueError("mode must be 'independent' or 'joint'")
    if c is None:
        if scenario.correlation is None or scenario.correlation.c is None:
            raise ValueError("cross-gain weights c are required for the joint mode")
        c = scenario.correlation.c
    return _grid_joint(scenario, points_per_axis, np.asarray(c, dtype=float), cfg, max_cells)


def _grid_independent(scenario, n: int, cfg: SolverConfig, max_cells: float) -> SolverReport:
    p_max, p_f = _device_arrays(scenario)
    k = p_max.shape[0]
    if float(n) ** (2 * k) > max_cells:
        raise ValueError("grid too large; raise max_cells to override")
    t = scenario.timing
    rates = scenario.rates
    bw = scenario.radio.bandwidth
    payload = np.array([d.payload_bits for d in scenario.devices], dtype=float)
    pi_axis = np.linspace(0.0, 1.0, n)
    p_axes = [np.linspace(0.0, pm, n) for pm in p_max]
    gtab = np.array([[device_gain(d.stats, p) for p in p_axes[i]]
                     for i, d in enumerate(scenario.devices)])
    # schedule combinations and their rate feasibility
    mesh = np.stack(np.meshgrid(*([pi_axis] * k), indexing="ij"), axis=-1).reshape(-1, k)
    tot = mesh.sum(axis=1)
    ok = (mesh @ (payload / (rates.e * bw))) <= t.t_f + 1e-12
    for kk in range(k):
        others = tot - mesh[:, kk]
        r = rates.e[kk] * bw / t.total * (t.t_w / k + t.t_s * (1.0 - mesh[:, kk]) / (k - others))
        ok &= r >= rates.r_min[kk] - 1e-12
    mesh = mesh[ok]
    if mesh.shape[0] == 0:
        return SolverReport(None, 0.0, "infeasible", violated=["C2.b"])
    # power combinations
    pmesh_idx = np.stack(np.meshgrid(*([np.arange(n)] * k), indexing="ij"), axis=-1).reshape(-1, k)
    gsel = np.stack([gtab[i, pmesh_idx[:, i]] for i in range(k)], axis=1)          # (np, k)
    psel = np.stack([p_axes[i][pmesh_idx[:, i]] for i in range(k)], axis=1)
    costsel = psel * t.t_s + p_f * t.t_f                                            # (np, k)
    best = (-np.inf, None, None)
    chunk = max(1, int(5e6 // max(1, pmesh_idx.shape[0])))
    for s in range(0, mesh.shape[0], chunk):
        block = mesh[s : s + chunk]                                                 # (nb, k)
        obj = block @ gsel.T                                                        # (nb, np)
        energy = block @ costsel.T
        obj[energy > scenario.energy.joules + 1e-12] = -np.inf
        flat = np.argmax(obj)
        val = obj.ravel()[flat]
        if val > best[0]:
            bi, pj = np.unravel_index(flat, obj.shape)
            best = (float(val), block[bi].copy(), psel[pj].copy())
    if best[1] is None or not np.isfinite(best[0]):
        return SolverReport(None, 0.0, "infeasible", violated=["C3"])
    return _report_for(scenario, best[1], best[2], cfg)


def _grid_joint(scenario, n: int, c, cfg: SolverConfig, max_cells: float) -> SolverReport:
    p_max, p_f = _device_arrays(scenario)
    k = p_max.shape[0]
    npairs = k * (k - 1) // 2
    if float(n) ** (k + npairs) * float(n) ** k > max_cells * 10:
        raise ValueError("grid too large; raise max_cells to override")
    t = scenario.timing
    rates = scenario.rates
    bw = scenario.radio.bandwidth
    payload = np.array([d.payload_bits for d in scenario.devices], dtype=float)
    q = _rate_slopes(scenario)
    axis = np.linspace(0.0, 1.0, n)
    p_axes = [np.linspace(0.0, pm, n) for pm in p_max]
    gtab = np.array([[device_gain(d.stats, p) for p in p_axes[i]]
                     for i, d in enumerate(scenario.devices)])
    iu = np.triu_indices(k, 1)
    pmesh_idx = np.stack(np.meshgrid(*([np.arange(n)] * k), indexing="ij"), axis=-1).reshape(-1, k)
    gsel = np.stack([gtab[i, pmesh_idx[:, i]] for i in range(k)], axis=1)            # (np, k)
    psel = np.stack([p_axes[i][pmesh_idx[:, i]] for i in range(k)], axis=1)
    costsel = psel * t.t_s + p_f * t.t_f
    pair_g = gsel[:, iu[0]] + gsel[:, iu[1]]                                         # (np, npairs)
    cvec = c[iu]
    diag_mesh = np.stack(np.meshgrid(*([axis] * k), indexing="ij"), axis=-1).reshape(-1, k)
    off_mesh = np.stack(np.meshgrid(*([axis] * npairs), indexing="ij"), axis=-1).reshape(-1, npairs)
    feature_w = payload / (rates.e * bw)
    pair_cols = [[_pair_col(iu, kk, i) for i in range(k) if i != kk] for kk in range(k)]
    best = (-np.inf, None, None, None)
    for d in diag_mesh:
        if float(d @ feature_w) > t.t_f + 1e-12:
            continue
        if np.any((q > 1e-15) & (d >= 1.0)):
            continue    # a guaranteed device cannot sense every cycle
        lo = np.maximum(0.0, d[iu[0]] + d[iu[1]] - 1.0)
        hi = np.minimum(d[iu[0]], d[iu[1]])
        sel = np.all((off_mesh >= lo - 1e-12) & (off_mesh <= hi + 1e-12), axis=1)
        offs = off_mesh[sel]
        if offs.shape[0] == 0:
            continue
        # exact quadratic rate bound on the moment matrix
        ok = np.ones(offs.shape[0], dtype=bool)
        for kk in range(k):
            sum_off = offs[:, pair_cols[kk]].sum(axis=1)
            rhs = q[kk] * (k * (1.0 - d[kk]) - (d.sum() - d[kk]) + sum_off)
            ok &= (1.0 - d[kk]) ** 2 >= rhs - 1e-12
        offs = offs[ok]
        if offs.shape[0] == 0:
            continue
        cov = np.zeros((offs.shape[0], k, k))
        cov[:, iu[0], iu[1]] = offs
        cov[:, iu[1], iu[0]] = offs
        cov += np.diag(d)[None, :, :]
        cov -= np.einsum("i,j->ij", d, d)[None, :, :]
        evals = np.linalg.eigvalsh(cov)
        offs = offs[evals[:, 0] >= -1e-9]
        if offs.shape[0] == 0:
            continue
        e_used = costsel @ d                                                         # (np,)
        e_ok = e_used <= scenario.energy.joules + 1e-12
        if not np.any(e_ok):
            continue
        obj = (gsel @ d)[None, :] + (offs * cvec) @ pair_g.T                         # (noff, np)
        obj[:, ~e_ok] = -np.inf
        flat = int(np.argmax(obj))
        val = obj.ravel()[flat]
        if val > best[0]:
            oi, pj = np.unravel_index(flat, obj.shape)
            best = (float(val), d.copy(), offs[oi].copy(), psel[pj].copy())
    if best[1] is None:
        return SolverReport(None, 0.0, "infeasible", violated=["C2.b"])
    m = np.zeros((k, k))
    np.fill_diagonal(m, best[1])
    m[iu] = best[2]
    m = m + np.triu(m, 1).T
    policy = JointPolicy(m, best[3])
    v = joint_violations(scenario, m, best[3])
    worst = max(v.values())
    return SolverReport(policy, best[0], "ok" if worst <= cfg.feas_tol else "infeasible",
                        max_violation=max(worst, 0.0),
                        violated=[nm for nm, val in v.items() if val > cfg.feas_tol])


def _pair_col(iu, a, b):
    if a > b:
        a, b = b, a
    hits = np.nonzero((iu[0] == a) & (iu[1] == b))[0]
    return int(hits[0])
