"""Finite-sample error bounds on the rejection probability and the weighted
noncentral-chi-square machinery for asymptotic power.

The bound combines a dimension-dependent Berry-Esseen-type term,
400 q^{7/4} m3 / sqrt(n), with the smaller of two covariance-estimation terms
built from r(t) = sqrt(6 l t / n) and rt(s) = C q^2 [r(s) + r(s)^2] evaluated
at the shifted tail argument s = t - 2 log q. It holds with probability at
least 1 - 4 exp(-t) and is reported even when vacuous (> 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .linprob import RngState, SymMatrix, derive_seed, empirical_quantile, standard_normal_matrix
from .stats import Dataset, ModelSpec, quantile_indicators, residuals, sigma_hat, sigma_hat_q


@dataclass(frozen=True)
class BoundInputs:
    """Ingredients of the rejection-probability error bound.

    ``ell`` dominates the relevant second moments of the moment contributions,
    ``m3`` their standardized third absolute moments, and ``c_sigma`` the
    entries of the inverse covariance; ``t`` is the tail parameter.
    """

    q: int
    n: int
    ell: float
    m3: float
    c_sigma: float
    t: float

    def __post_init__(self):
        if self.q < 1 or self.n < 1:
            raise ValueError("q and n must be positive integers")
        for name in ("ell", "m3", "c_sigma", "t"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class BoundResult:
    """Evaluated bound with its feasibility flags.

    ``condition_ok`` is the stated admissibility condition
    max(q * rt(t), r(t)) < 1; ``shift_valid`` additionally requires the shifted
    argument t - 2 log q to be positive with rt at the shift below one. Both
    must hold (and the confidence must be positive) for ``feasible``.
    """

    r_t: float
    r_tilde_shift: float
    berry_term: float
    branch_a: float
    branch_b: float
    bound: float
    confidence: float
    condition_ok: bool
    shift_valid: bool
    feasible: bool
    vacuous: bool
    reason: Optional[str] = None


def _r(ell: float, t: float, n: int) -> float:
    return math.sqrt(6.0 * ell * t / n)


def erp_bound(inp: BoundInputs) -> BoundResult:
    """Evaluate the finite-sample bound on |true - nominal| rejection probability."""
    r_t = _r(inp.ell, inp.t, inp.n)
    rt_t = inp.c_sigma * inp.q**2 * (r_t + r_t**2)
    berry = 400.0 * inp.q**1.75 * inp.m3 / math.sqrt(inp.n)
    confidence = 1.0 - 4.0 * math.exp(-inp.t)
    condition_ok = max(inp.q * rt_t, r_t) < 1.0

    shift = inp.t - 2.0 * math.log(inp.q)
    if shift <= 0:
        return BoundResult(
            r_t=r_t, r_tilde_shift=math.nan, berry_term=berry,
            branch_a=math.nan, branch_b=math.nan, bound=math.nan,
            confidence=confidence, condition_ok=condition_ok, shift_valid=False,
            feasible=False, vacuous=True,
            reason="tail parameter t must exceed 2*log(q) for the shifted argument",
        )

    r_s = _r(inp.ell, shift, inp.n)
    rt_s = inp.c_sigma * inp.q**2 * (r_s + r_s**2)
    branch_a = inp.q * 2.0 ** (inp.q + 1) * rt_s
    branch_b = math.sqrt((rt_s - math.log1p(-rt_s)) / 2.0) if rt_s < 1.0 else math.inf
    bound = berry + min(branch_a, branch_b)
    shift_valid = rt_s < 1.0
    feasible = condition_ok and shift_valid and confidence > 0.0
    reason = None
    if not condition_ok:
        reason = "admissibility condition max(q*rt(t), r(t)) < 1 fails"
    elif not shift_valid:
        reason = "rt at the shifted argument reaches 1; second term undefined"
    elif confidence <= 0.0:
        reason = "confidence 1 - 4*exp(-t) is not positive at this t"
    return BoundResult(
        r_t=r_t, r_tilde_shift=rt_s, berry_term=berry,
        branch_a=branch_a, branch_b=branch_b, bound=bound,
        confidence=confidence, condition_ok=condition_ok, shift_valid=shift_valid,
        feasible=feasible, vacuous=not bound < 1.0, reason=reason,
    )


class TheoryConstants(NamedTuple):
    """Empirical plug-ins for the bound constants. These are sample analogs of
    population quantities and should be read as estimates, not certified
    values."""

    ell: float
    m3: float
    c_sigma: float


def estimate_theory_constants(
    data: Dataset,
    model: ModelSpec,
    theta0,
    a_q: Optional[float] = None,
) -> TheoryConstants:
    """Estimate (ell, m3, c_sigma) from the per-observation moment contributions.

    ell is the largest empirical second moment among the contributions and
    their pairwise products; m3 the largest third absolute moment after
    whitening by the inverse square root of the estimated covariance; c_sigma
    the largest absolute entry of the inverse. Requires a numerically
    invertible covariance estimate.
    """
    if a_q is None:
        vals = residuals(data, model, theta0)
        est = sigma_hat(data, model, theta0)
    else:
        vals = quantile_indicators(data, model, theta0, a_q)
        est = sigma_hat_q(data, model, theta0, a_q)
    xi = data.z * vals[:, np.newaxis]
    n = data.n

    xi2 = xi * xi
    second_xi = float(np.max(xi2.sum(axis=0) / n))
    second_eta = float(np.max((xi2.T @ xi2) / n))  # E[(xi_j xi_k)^2]
    ell = max(second_xi, second_eta)

    lam, vec = np.linalg.eigh(est.matrix.entries)
    trace = max(est.matrix.trace(), 1e-300)
    if float(lam.min()) <= 1e-10 * trace:
        raise ValueError(
            "estimated covariance is numerically singular; the inverse-entry "
            "constant cannot be estimated from this data"
        )
    inv_sqrt = (vec / np.sqrt(lam)) @ vec.T
    zeta = xi @ inv_sqrt
    m3 = float(np.max(np.abs(zeta**3).sum(axis=0) / n))
    inv = (vec / lam) @ vec.T
    c_sigma = float(np.max(np.abs(inv)))
    return TheoryConstants(ell=ell, m3=m3, c_sigma=c_sigma)


@dataclass(frozen=True)
class MixtureSpec:
    """Weighted noncentral-chi-square mixture: sum_j lambdas[j] * chi2_1(noncentrality[j]^2).

    ``kappa`` (the local parameter drift) and ``density_at_zero`` (conditional
    error density at zero, for quantile drifts) are optional provenance fields
    carried along for reporting; they do not enter the tail computation.
    """

    lambdas: np.ndarray
    noncentrality: np.ndarray
    kappa: Optional[np.ndarray] = None
    density_at_zero: Optional[object] = None

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=np.float64).reshape(-1)
        g = np.asarray(self.noncentrality, dtype=np.float64).reshape(-1)
        if lam.size != g.size:
            raise ValueError("lambdas and noncentrality must have equal length")
        if np.any(lam < 0):
            raise ValueError("mixture weights must be nonnegative")
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "noncentrality", g)


def mixture_from_sigma(sigma, drift) -> MixtureSpec:
    """Eigendecompose a covariance and rotate a mean drift into its eigenbasis.

    Returns the mixture weights (eigenvalues) and the noncentrality vector,
    the inverse-square-root-whitened drift expressed in the eigenbasis. The
    whitening is restricted to the positive eigenspace; a drift component
    outside the column space of a singular covariance is an error.
    """
    m = sigma if isinstance(sigma, SymMatrix) else SymMatrix(np.asarray(sigma))
    delta = np.asarray(drift, dtype=np.float64).reshape(-1)
    if delta.size != m.dim:
        raise ValueError(f"drift has length {delta.size}, covariance dimension is {m.dim}")
    lam, vec = np.linalg.eigh(m.entries)
    scale = max(float(lam.max()), 1e-300)
    if float(lam.min()) < -1e-10 * scale:
        raise ValueError("covariance must be positive semidefinite")
    lam = np.maximum(lam, 0.0)
    proj = vec.T @ delta
    pos = lam > 1e-12 * scale
    dnorm = float(np.linalg.norm(delta))
    if np.any(np.abs(proj[~pos]) > 1e-8 * max(dnorm, 1e-300)):
        raise ValueError(
            "drift lies outside the column space of the singular covariance; "
            "its noncentrality is undefined"
        )
    gamma = np.zeros_like(proj)
    gamma[pos] = proj[pos] / np.sqrt(lam[pos])
    return MixtureSpec(lambdas=lam, noncentrality=gamma)


class TailEstimate(NamedTuple):
    probability: float
    standard_error: float
    draws: int


def mixture_tail(spec: MixtureSpec, threshold: float, draws: int, seed: int = 0) -> TailEstimate:
    """Monte Carlo estimate of P(sum_j lambda_j (N_j + gamma_j)^2 > threshold)."""
    if draws < 10**4:
        raise ValueError("at least 10^4 draws are required for a stable tail estimate")
    q = spec.lambdas.size
    w = standard_normal_matrix(RngState(seed), draws, q)
    vals = ((w + spec.noncentrality) ** 2) @ spec.lambdas
    prob = float(np.count_nonzero(vals > threshold)) / draws
    se = math.sqrt(prob * (1.0 - prob) / draws)
    return TailEstimate(probability=prob, standard_error=se, draws=draws)


def asymptotic_power(sigma, drift, alpha: float, draws: int, seed: int = 0) -> float:
    """Limiting power of the level-alpha test against a local mean drift.

    The threshold is the empirical 1 - alpha quantile of the central mixture
    (zero drift); the power is the drifted mixture's tail beyond it. Two
    independent derived streams keep the threshold and tail estimates
    uncorrelated.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie strictly in (0, 1), got {alpha}")
    spec = mixture_from_sigma(sigma, drift)
    q = spec.lambdas.size
    w0 = standard_normal_matrix(RngState(derive_seed(seed, 0)), draws, q)
    central = (w0**2) @ spec.lambdas
    if float(central.max()) <= 0.0:
        return 0.0  # degenerate mixture: all weights zero
    threshold = empirical_quantile(central, 1.0 - alpha)
    return mixture_tail(spec, threshold, draws, seed=derive_seed(seed, 1)).probability
