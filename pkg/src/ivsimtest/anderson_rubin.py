"""Classical Anderson-Rubin test for linear IV models, used as the power
baseline in the replication experiments.

This is the homoskedastic F-form: project the null-restricted residual onto
the instruments (after partialling exogenous covariates out of both) and
compare the explained/residual variance ratio against an F quantile.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import betainc

from .stats import Dataset


@dataclass(frozen=True)
class ARResult:
    statistic: float
    df1: int
    df2: int
    critical_value: float
    reject: bool


def f_cdf(x: float, d1: int, d2: int) -> float:
    """F(d1, d2) distribution function via the regularized incomplete beta."""
    if x <= 0.0:
        return 0.0
    return float(betainc(d1 / 2.0, d2 / 2.0, d1 * x / (d1 * x + d2)))


@lru_cache(maxsize=4096)
def f_quantile(p: float, d1: int, d2: int) -> float:
    """p-quantile of F(d1, d2) by bisection on the incomplete-beta CDF."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie strictly in (0, 1), got {p}")
    if d1 < 1 or d2 < 1:
        raise ValueError("degrees of freedom must be positive integers")
    hi = 1.0
    for _ in range(2100):
        if f_cdf(hi, d1, d2) >= p:
            break
        hi *= 2.0
    else:
        raise ValueError("quantile bracketing failed")
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f_cdf(mid, d1, d2) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _partial_out(basis: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Least-squares residual of a after projecting onto the basis columns."""
    coef, _, _, _ = np.linalg.lstsq(basis, a, rcond=None)
    return a - basis @ coef


def ar_statistic(data: Dataset, beta0, exog_indices=(), alpha: float = 0.05) -> ARResult:
    """Anderson-Rubin test of the tested covariate coefficients at beta0.

    Covariate columns listed in ``exog_indices`` are treated as exogenous and
    partialled out of both the restricted residual and the instruments; the
    remaining columns are the tested block. Instruments in data.z must exclude
    the exogenous covariates (partialling handles them).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie strictly in (0, 1), got {alpha}")
    exog = tuple(sorted(set(int(i) for i in exog_indices)))
    if any(i < 0 or i >= data.p for i in exog):
        raise ValueError(f"exogenous indices must lie in [0, {data.p})")
    tested = [j for j in range(data.p) if j not in exog]
    beta0 = np.asarray(beta0, dtype=np.float64).reshape(-1)
    if beta0.size != len(tested):
        raise ValueError(f"beta0 must have one value per tested column ({len(tested)})")

    q, k, n = data.q, len(exog), data.n
    if n <= q + k:
        raise ValueError(f"need n > q + #exog = {q + k}, got n = {n}")

    u = data.y - data.x[:, tested] @ beta0
    zt = data.z
    if exog:
        e = data.x[:, list(exog)]
        u = _partial_out(e, u)
        zt = _partial_out(e, zt)
    if np.linalg.matrix_rank(zt) < q:
        raise ValueError("instruments are rank deficient after partialling")

    fitted = zt @ np.linalg.lstsq(zt, u, rcond=None)[0]
    explained = float(fitted @ fitted)
    residual = float(u @ u) - explained
    df2 = n - q - k
    if residual <= 0.0:
        # exactly-fit residual: no variation left to normalize against
        stat = 0.0 if explained == 0.0 else math.inf
    else:
        stat = (explained / q) / (residual / df2)
    crit = f_quantile(1.0 - alpha, q, df2)
    return ARResult(
        statistic=stat, df1=q, df2=df2, critical_value=crit, reject=bool(stat > crit)
    )
