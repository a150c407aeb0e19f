"""Simulated reference distribution, critical values, and p-values.

The reference statistic is the quadratic form V'V with V drawn from a normal
with the estimated covariance. One fixed matrix of standard normals (common
random numbers) is drawn per test invocation and reused for every covariance
evaluated within that invocation, which makes critical values a deterministic
function of the candidate parameter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linprob import RngState, empirical_quantile, mvn_quadratic_draws, standard_normal_matrix
from .stats import SigmaEstimate


@dataclass(frozen=True)
class SimPlan:
    """Common random numbers for one test invocation.

    ``base_w`` is an R x q matrix of standard normals drawn once from the
    configured seed; ``alpha`` is the significance level.
    """

    base_w: np.ndarray
    alpha: float

    def __post_init__(self):
        w = np.asarray(self.base_w, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] < 100:
            raise ValueError("base_w must be a 2-d matrix with at least 100 rows")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie strictly in (0, 1), got {self.alpha}")
        w = np.array(w)
        w.flags.writeable = False
        object.__setattr__(self, "base_w", w)

    @classmethod
    def build(cls, q: int, draws: int, alpha: float, seed: int) -> "SimPlan":
        return cls(base_w=standard_normal_matrix(RngState(seed), draws, q), alpha=alpha)

    @property
    def draws(self) -> int:
        return int(self.base_w.shape[0])


@dataclass(frozen=True)
class NullSim:
    """Simulated reference draws plus the level-alpha critical value."""

    draws: np.ndarray
    c_alpha: float
    alpha: float

    def p_value_of(self, observed: float) -> float:
        return p_value(self, observed)


def simulate_null(sigma: SigmaEstimate, plan: SimPlan) -> NullSim:
    """Push the common random numbers through the covariance factor.

    draws[r] = ||L w_r||^2 and c_alpha is their empirical 1 - alpha quantile.
    Deterministic given the plan; a zero covariance gives all-zero draws and a
    zero critical value.
    """
    d = mvn_quadratic_draws(sigma.factor, plan.base_w)
    c = empirical_quantile(d, 1.0 - plan.alpha)
    d.flags.writeable = False
    return NullSim(draws=d, c_alpha=c, alpha=plan.alpha)


def p_value(sim: NullSim, observed: float) -> float:
    """(1 + #{draws >= observed}) / (R + 1): strictly positive by construction."""
    if not np.isfinite(observed) or observed < 0:
        raise ValueError(f"observed statistic must be finite and nonnegative, got {observed}")
    exceed = int(np.count_nonzero(sim.draws >= observed))
    return (1 + exceed) / (sim.draws.size + 1)
