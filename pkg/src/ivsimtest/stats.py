"""Datasets, model specifications, and the core moment statistics.

For a candidate parameter theta, the moment vector is
V_j = n^{-1/2} sum_i z_ij * (y_i - g(x_i, theta)) and the test statistic is its
squared norm sum_j V_j^2. The quantile variants replace the residual with the
centered below-zero indicator I[y - g <= 0] - a_q. The matching covariance
estimator is the divisor-n sample covariance of the per-observation moment
contributions z_i * r_i.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .linprob import PsdFactor, SymMatrix, psd_factor


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Dataset:
    """Outcome vector y (n), covariate matrix x (n x p), instrument matrix z (n x q).

    Exogenous covariates that should serve as instruments are not auto-detected;
    include them in z explicitly.
    """

    y: np.ndarray
    x: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        y = np.array(self.y, dtype=np.float64).reshape(-1)
        x = np.atleast_2d(np.array(self.x, dtype=np.float64))
        z = np.atleast_2d(np.array(self.z, dtype=np.float64))
        if y.size < 2:
            raise ValueError("at least 2 observations are required")
        if x.shape[0] != y.size or z.shape[0] != y.size:
            raise ValueError(
                f"row mismatch: y has {y.size}, x has {x.shape[0]}, z has {z.shape[0]}"
            )
        if z.shape[1] < 1:
            raise ValueError("at least one instrument column is required")
        for name, a in (("y", y), ("x", x), ("z", z)):
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} contains non-finite entries")
        object.__setattr__(self, "y", _readonly(y))
        object.__setattr__(self, "x", _readonly(x))
        object.__setattr__(self, "z", _readonly(z))

    @property
    def n(self) -> int:
        return int(self.y.size)

    @property
    def p(self) -> int:
        return int(self.x.shape[1])

    @property
    def q(self) -> int:
        return int(self.z.shape[1])


@dataclass(frozen=True)
class ModelSpec:
    """Regression function g(x_row, theta) -> scalar, with optional gradient.

    ``g`` takes one covariate row (p-vector) and the parameter (d-vector).
    ``linear`` marks the built-in form g(x, theta) = x . theta with p == d,
    which unlocks closed-form estimation; build it with :meth:`linear_model`.
    """

    g: Callable[[np.ndarray, np.ndarray], float]
    d: int
    grad_g: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    linear: bool = False

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("parameter dimension d must be at least 1")

    @classmethod
    def linear_model(cls, d: int) -> "ModelSpec":
        return cls(
            g=lambda x_row, theta: float(x_row @ theta),
            grad_g=lambda x_row, theta: np.asarray(x_row, dtype=np.float64),
            d=d,
            linear=True,
        )

    def predict(self, x: np.ndarray, theta: np.ndarray) -> np.ndarray:
        if self.linear:
            return x @ theta
        return np.array([self.g(row, theta) for row in x], dtype=np.float64)


@dataclass(frozen=True)
class ThetaPartition:
    """Split of the d parameter coordinates into a tested block, pinned at the
    hypothesized values g0, and free nuisance coordinates (the complement)."""

    tested: tuple
    g0: np.ndarray
    d: int
    nuisance: tuple = field(init=False)

    def __post_init__(self):
        tested = tuple(int(i) for i in self.tested)
        g0 = _readonly(np.asarray(self.g0, dtype=np.float64).reshape(-1))
        if len(set(tested)) != len(tested):
            raise ValueError("tested indices must be distinct")
        if any(i < 0 or i >= self.d for i in tested):
            raise ValueError(f"tested indices must lie in [0, {self.d})")
        if g0.size != len(tested):
            raise ValueError("g0 must have one value per tested index")
        if not 0 < len(tested) <= self.d:
            raise ValueError("at least one coordinate must be tested")
        nuisance = tuple(i for i in range(self.d) if i not in set(tested))
        object.__setattr__(self, "tested", tested)
        object.__setattr__(self, "g0", g0)
        object.__setattr__(self, "nuisance", nuisance)

    def embed(self, b: np.ndarray) -> np.ndarray:
        """Assemble the full parameter from nuisance values b."""
        b = np.asarray(b, dtype=np.float64).reshape(-1)
        if b.size != len(self.nuisance):
            raise ValueError(f"expected {len(self.nuisance)} nuisance values, got {b.size}")
        theta = np.empty(self.d)
        theta[list(self.tested)] = self.g0
        if self.nuisance:
            theta[list(self.nuisance)] = b
        return theta


@dataclass(frozen=True)
class SigmaEstimate:
    """Estimated covariance of the per-observation moment contributions,
    together with its PSD-repaired factor for sampling and the mean vector
    mu_hat that was subtracted."""

    matrix: SymMatrix
    factor: PsdFactor
    mu_hat: np.ndarray


def residuals(data: Dataset, model: ModelSpec, theta) -> np.ndarray:
    """r_i = y_i - g(x_i, theta)."""
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    if theta.size != model.d:
        raise ValueError(f"theta has length {theta.size}, model dimension is {model.d}")
    pred = model.predict(data.x, theta)
    bad = np.flatnonzero(~np.isfinite(pred))
    if bad.size:
        raise ValueError(f"model evaluated to a non-finite value at data row {bad[0] + 1}")
    return data.y - pred


def moment_vector(data: Dataset, model: ModelSpec, theta) -> np.ndarray:
    """V_j = n^{-1/2} sum_i z_ij r_i."""
    r = residuals(data, model, theta)
    return _moments(data.z, r)


def t_statistic(data: Dataset, model: ModelSpec, theta) -> float:
    """Squared norm of the moment vector; always nonnegative."""
    v = moment_vector(data, model, theta)
    return float(v @ v)


def sigma_hat(data: Dataset, model: ModelSpec, theta) -> SigmaEstimate:
    """Divisor-n sample covariance of the vectors z_i * r_i, PSD-repaired."""
    r = residuals(data, model, theta)
    return _covariance(data.z, r)


def quantile_indicators(data: Dataset, model: ModelSpec, theta, a_q: float) -> np.ndarray:
    """w_i = I[y_i - g(x_i, theta) <= 0] - a_q; a residual of exactly zero
    counts as below."""
    if not 0.0 < a_q < 1.0:
        raise ValueError(f"a_q must lie strictly in (0, 1), got {a_q}")
    r = residuals(data, model, theta)
    return (r <= 0.0).astype(np.float64) - a_q


def tq_statistic(data: Dataset, model: ModelSpec, theta, a_q: float) -> float:
    """Squared norm of the quantile moment vector."""
    w = quantile_indicators(data, model, theta, a_q)
    v = _moments(data.z, w)
    return float(v @ v)


def sigma_hat_q(data: Dataset, model: ModelSpec, theta, a_q: float) -> SigmaEstimate:
    """Divisor-n sample covariance of the vectors z_i * w_i, PSD-repaired."""
    w = quantile_indicators(data, model, theta, a_q)
    return _covariance(data.z, w)


def _moments(z: np.ndarray, values: np.ndarray) -> np.ndarray:
    n = values.size
    return (z.T @ values) / np.sqrt(n)


def _covariance(z: np.ndarray, values: np.ndarray) -> SigmaEstimate:
    n = values.size
    s = z * values[:, np.newaxis]
    mu = s.sum(axis=0) / n
    m = (s.T @ s) / n - np.outer(mu, mu)
    # matmul may leave last-bit asymmetry; the average restores exact symmetry
    matrix = SymMatrix((m + m.T) / 2.0)
    return SigmaEstimate(matrix=matrix, factor=psd_factor(matrix), mu_hat=_readonly(mu))
