"""Correlated Bernoulli schedule models and samplers.

Three ways to realize a schedule with a prescribed second-moment matrix:
an explicit distribution over the 2^K states (exact, small K), a pairwise
exponential-family (Ising) model fitted by moment matching, and a
dichotomized Gaussian calibrated per pair through the bivariate normal
rectangle probability.  The exact enumeration also serves as the oracle
for moment and conditional-count identities elsewhere in the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.stats import norm

__all__ = [
    "ExplicitBernoulli",
    "IsingModel",
    "DichotomizedGaussian",
    "state_table",
    "enumerate_bernoulli",
    "ising_fit",
    "ising_sample",
    "dg_calibrate",
    "dg_sample",
    "bvn_rectangle",
    "psd_project",
    "rng_stream",
]

ENUM_MAX_K = 12          # enumeration oracle cap
ISING_EXACT_MAX_K = 20   # exact state table cap for fitting / sampling
PARAM_CAP = 30.0         # |h|, |J| cap; exp stays finite, boundary moments saturate


def rng_stream(seed, *key) -> np.random.Generator:
    """Counter-style generator: same (seed, key) always yields the same stream."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def state_table(k: int) -> np.ndarray:
    """All 2^k binary schedules, row index read as a binary counter."""
    idx = np.arange(2**k, dtype=np.int64)
    return ((idx[:, None] >> np.arange(k)) & 1).astype(float)


# ---------------------------------------------------------------------------
# explicit distribution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExplicitBernoulli:
    """Explicit distribution over all 2^K schedules."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float).ravel()
        k = int(round(np.log2(p.shape[0])))
        if 2**k != p.shape[0]:
            raise ValueError("probs length must be a power of two")
        if np.any(p < -1e-15):
            raise ValueError("probabilities must be nonnegative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must sum to one")
        p = np.maximum(p, 0.0)
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "_k", k)

    @property
    def num_devices(self) -> int:
        return self._k

    @classmethod
    def from_independent(cls, pi) -> "ExplicitBernoulli":
        pi = np.asarray(pi, dtype=float).ravel()
        s = state_table(pi.shape[0])
        p = np.prod(np.where(s > 0, pi, 1.0 - pi), axis=1)
        return cls(p)

    @classmethod
    def random(cls, k: int, seed, concentration: float = 1.0) -> "ExplicitBernoulli":
        rng = rng_stream(seed, 0)
        return cls(rng.dirichlet(np.full(2**k, concentration)))

    def moments(self) -> np.ndarray:
        s = state_table(self._k)
        return (s * self.probs[:, None]).T @ s

    def conditional_idle_coactive(self) -> np.ndarray:
        """E[number of other idle devices | this device idle]; nan if never idle."""
        s = state_table(self._k)
        idle = 1.0 - s
        out = np.full(self._k, np.nan)
        for k in range(self._k):
            mask = idle[:, k] * self.probs
            tot = mask.sum()
            if tot > 0:
                others = idle.sum(axis=1) - idle[:, k]
                out[k] = float((mask * others).sum() / tot)
        return out

    def entropy(self) -> float:
        p = self.probs[self.probs > 0]
        return float(-(p * np.log(p)).sum())

    def sample(self, n: int, seed) -> np.ndarray:
        rng = rng_stream(seed, 1)
        cdf = np.cumsum(self.probs)
        cdf[-1] = 1.0
        idx = np.searchsorted(cdf, rng.random(n), side="right")
        return state_table(self._k)[idx]


def enumerate_bernoulli(spec) -> tuple:
    """Exact schedule moments and conditional idle co-active counts.

    spec is a marginal probability vector (independent schedule), an
    ExplicitBernoulli, or a fitted IsingModel.  Returns (moments, cond)
    with cond[k] = E[number of other idle devices | device k idle].
    Capped at K = 12 for the raw enumeration inputs.
    """
    if isinstance(spec, ExplicitBernoulli):
        dist = spec
    elif isinstance(spec, IsingModel):
        dist = ExplicitBernoulli(spec.state_probs())
    else:
        pi = np.asarray(spec, dtype=float).ravel()
        if pi.shape[0] > ENUM_MAX_K:
            raise ValueError(f"enumeration capped at K = {ENUM_MAX_K}")
        dist = ExplicitBernoulli.from_independent(pi)
    if dist.num_devices > ENUM_MAX_K:
        raise ValueError(f"enumeration capped at K = {ENUM_MAX_K}")
    return dist.moments(), dist.conditional_idle_coactive()


# ---------------------------------------------------------------------------
# Ising model
# ---------------------------------------------------------------------------

@dataclass
class IsingModel:
    """Pairwise binary exponential family: E(b) = h.b + b'Jb/2, p = e^E/Z."""

    h: np.ndarray
    j: np.ndarray
    converged: bool = True
    residual: float = 0.0
    iterations: int = 0
    _probs: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float).ravel()
        self.j = np.asarray(self.j, dtype=float)
        k = self.h.shape[0]
        if self.j.shape != (k, k):
            raise ValueError("J must be (K, K)")
        if not np.allclose(self.j, self.j.T, atol=1e-9):
            raise ValueError("J must be symmetric")
        if np.any(np.abs(np.diag(self.j)) > 1e-12):
            raise ValueError("J must have zero diagonal")

    @property
    def num_devices(self) -> int:
        return self.h.shape[0]

    def state_probs(self) -> np.ndarray:
        """Exact state probabilities; cached, K capped for the state table."""
        if self._probs is None:
            k = self.num_devices
            if k > ISING_EXACT_MAX_K:
                raise ValueError(f"exact state table capped at K = {ISING_EXACT_MAX_K}")
            s = state_table(k)
            e = s @ self.h + 0.5 * np.einsum("si,ij,sj->s", s, self.j, s)
            e -= e.max()
            p = np.exp(e)
            self._probs = p / p.sum()
        return self._probs

    def moments(self) -> np.ndarray:
        p = self.state_probs()
        s = state_table(self.num_devices)
        return (s * p[:, None]).T @ s


def ising_fit(target_moments, lr: float = 1.0, tol: float = 1e-7,
              max_iter: int = 20000) -> IsingModel:
    """Moment-match an Ising model to a target schedule moment matrix.

    Gradient-style updates: h moves with the diagonal moment error, J with
    the off-diagonal error; the step halves whenever the worst-entry error
    grows and slowly recovers otherwise.  Targets on the moment boundary
    have no finite parameters; the fit then stops at the parameter cap and
    reports converged = False with the residual it reached.
    """
    target = np.asarray(target_moments, dtype=float)
    k = target.shape[0]
    if target.shape != (k, k):
        raise ValueError("target moments must be square")
    if k > ISING_EXACT_MAX_K:
        raise ValueError(f"fit capped at K = {ISING_EXACT_MAX_K}")
    s = state_table(k)
    h = np.zeros(k)
    j = np.zeros((k, k))
    step = float(lr)
    best_err = np.inf
    best = (h.copy(), j.copy())
    err = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        e = s @ h + 0.5 * np.einsum("si,ij,sj->s", s, j, s)
        e -= e.max()
        p = np.exp(e)
        p /= p.sum()
        model = (s * p[:, None]).T @ s
        delta = target - model
        err = float(np.max(np.abs(delta)))
        if err < best_err:
            best_err = err
            best = (h.copy(), j.copy())
        if err < tol:
            break
        if err > best_err * (1 + 1e-12):
            step *= 0.5
            h, j = best[0].copy(), best[1].copy()
            if step < 1e-13:
                break
            continue
        step = min(step * 1.02, lr)
        h = np.clip(h + step * np.diag(delta), -PARAM_CAP, PARAM_CAP)
        j = np.clip(j + step * delta, -PARAM_CAP, PARAM_CAP)
        np.fill_diagonal(j, 0.0)
        j = 0.5 * (j + j.T)
    h, j = best
    model = IsingModel(h, j, converged=best_err < tol, residual=best_err, iterations=it)
    return model


def ising_sample(model: IsingModel, n: int, seed, method: str = "auto") -> np.ndarray:
    """Draw n schedules from an Ising model.

    Exact inverse-CDF sampling from the cached state table up to K = 20;
    beyond that, vectorized single-site Gibbs chains with burn-in of
    100 K sweeps and thinning of K sweeps between kept draws.
    """
    k = model.num_devices
    if method == "auto":
        method = "exact" if k <= ISING_EXACT_MAX_K else "gibbs"
    if method == "exact":
        dist = ExplicitBernoulli(model.state_probs())
        return dist.sample(n, seed)
    if method != "gibbs":
        raise ValueError("method must be 'auto', 'exact' or 'gibbs'")
    return _gibbs_sample(model, n, seed)


def _gibbs_sample(model: IsingModel, n: int, seed) -> np.ndarray:
    k = model.num_devices
    chains = min(n, 512)
    draws_per_chain = -(-n // chains)
    rng = rng_stream(seed, 2)
    b = (rng.random((chains, k)) < 0.5).astype(float)

    def sweep():
        for site in range(k):
            logit = model.h[site] + b @ model.j[site]
            p1 = 1.0 / (1.0 + np.exp(-np.clip(logit, -50, 50)))
            b[:, site] = (rng.random(chains) < p1).astype(float)

    for _ in range(100 * k):
        sweep()
    out = np.empty((draws_per_chain, chains, k))
    for d in range(draws_per_chain):
        for _ in range(k):
            sweep()
        out[d] = b
    return out.reshape(-1, k)[:n]


# ---------------------------------------------------------------------------
# dichotomized Gaussian
# ---------------------------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)
_Z_CUT = 8.5  # standard normal mass beyond this is < 1e-17


def bvn_rectangle(a: float, b: float, r: float) -> float:
    """P(Z1 <= a, Z2 <= b) for standard bivariate normals with correlation r.

    One-dimensional reduction: integrate the conditional normal CDF against
    the standard normal density with 64-node Gauss-Legendre quadrature.
    """
    if abs(r) >= 1.0 - 1e-12:
        if r > 0:
            return float(norm.cdf(min(a, b)))
        return float(max(0.0, norm.cdf(a) + norm.cdf(b) - 1.0))
    hi = min(a, _Z_CUT)
    if hi <= -_Z_CUT:
        return 0.0
    lo = -_Z_CUT
    z = 0.5 * (hi - lo) * _GL_NODES + 0.5 * (hi + lo)
    w = 0.5 * (hi - lo) * _GL_WEIGHTS
    cond = norm.cdf((b - r * z) / np.sqrt(1.0 - r * r))
    return float(np.sum(w * norm.pdf(z) * cond))


@dataclass(frozen=True)
class DichotomizedGaussian:
    """Thresholded Gaussian schedule model: b_k = 1(z_k <= tau_k)."""

    tau: np.ndarray
    sigma: np.ndarray
    adjusted: bool = False
    max_adjust: float = 0.0

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float).ravel()
        sig = np.asarray(self.sigma, dtype=float)
        if sig.shape != (tau.shape[0], tau.shape[0]):
            raise ValueError("sigma must be (K, K)")
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "sigma", sig)

    @property
    def num_devices(self) -> int:
        return self.tau.shape[0]


def dg_calibrate(target_moments, tol: float = 1e-10) -> DichotomizedGaussian:
    """Calibrate a dichotomized Gaussian to a target moment matrix.

    Thresholds come from the marginals; each latent correlation solves the
    rectangle-probability equation by bisection (the rectangle probability
    is increasing in the correlation).  If the assembled latent matrix is
    not positive semidefinite it is repaired by psd_project; a repair that
    moves any entry by more than 1e-6 is flagged on the result.
    """
    target = np.asarray(target_moments, dtype=float)
    k = target.shape[0]
    d = np.clip(np.diag(target), 0.0, 1.0)
    tau = np.where(d <= 0, -np.inf, np.where(d >= 1, np.inf, norm.ppf(np.clip(d, 1e-16, 1 - 1e-16))))
    free = (d > 1e-12) & (d < 1 - 1e-12)
    sig = np.eye(k)
    for a in range(k):
        for b in range(a + 1, k):
            if not (free[a] and free[b]):
                sig[a, b] = sig[b, a] = 0.0
                continue
            sig[a, b] = sig[b, a] = _solve_latent_corr(tau[a], tau[b], target[a, b], tol)
    evals = np.linalg.eigvalsh(sig)
    adjusted = False
    max_adjust = 0.0
    if evals[0] < 1e-8:
        fixed = psd_project(sig)
        max_adjust = float(np.max(np.abs(fixed - sig)))
        adjusted = max_adjust > 1e-6
        sig = fixed
    return DichotomizedGaussian(tau, sig, adjusted=adjusted, max_adjust=max_adjust)


def _solve_latent_corr(ta: float, tb: float, target: float, tol: float) -> float:
    # analytic endpoints first so exact comonotone / countermonotone hit +-1
    lo_val = max(0.0, norm.cdf(ta) + norm.cdf(tb) - 1.0)
    hi_val = float(norm.cdf(min(ta, tb)))
    if target <= lo_val + 1e-14:
        return -1.0
    if target >= hi_val - 1e-14:
        return 1.0
    lo, hi = -1.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        val = bvn_rectangle(ta, tb, mid)
        if abs(val - target) < tol:
            return mid
        if val < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14:
            break
    return 0.5 * (lo + hi)


def dg_sample(model: DichotomizedGaussian, n: int, seed) -> np.ndarray:
    """Draw n schedules by thresholding correlated Gaussian draws."""
    k = model.num_devices
    sig = model.sigma + 1e-8 * np.eye(k)
    chol = np.linalg.cholesky(sig)
    rng = rng_stream(seed, 3)
    z = rng.standard_normal((n, k)) @ chol.T
    return (z <= model.tau).astype(float)


def psd_project(matrix, floor: float = 1e-8, rounds: int = 5) -> np.ndarray:
    """Nearest-ish correlation repair: clip eigenvalues, restore unit diagonal.

    Alternates eigenvalue clipping at the floor with a diagonal rescale back
    to ones for a fixed number of rounds.  Positive semidefinite input with
    unit diagonal passes through unchanged.
    """
    m = 0.5 * (np.asarray(matrix, dtype=float) + np.asarray(matrix, dtype=float).T)
    for _ in range(rounds):
        evals, evecs = np.linalg.eigh(m)
        if evals[0] >= floor and np.allclose(np.diag(m), 1.0, atol=1e-12):
            break
        m = (evecs * np.maximum(evals, floor)) @ evecs.T
        d = np.sqrt(np.diag(m))
        m = m / np.outer(d, d)
        m = 0.5 * (m + m.T)
        np.fill_diagonal(m, 1.0)
    return m
