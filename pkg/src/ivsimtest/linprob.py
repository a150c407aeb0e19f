"""Small dense linear-algebra and probability kernels shared by the statistical modules.

Everything here is deterministic given an explicit seed: normal variates come
from the inverse normal CDF applied to 53-bit uniforms, so equal seeds give
bitwise-equal draws on every platform and at any parallelism level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

_MASK64 = 0xFFFFFFFFFFFFFFFF
_TWO53 = float(2**53)


def derive_seed(base: int, index: int) -> int:
    """Mix ``base`` and ``index`` into a fresh 64-bit seed (splitmix64 finalizer).

    The finalizer is a bijection on 64-bit integers, so for a fixed base,
    distinct indices always yield distinct seeds.
    """
    z = (int(base) ^ int(index)) & _MASK64
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


class RngState:
    """Single-owner deterministic random stream.

    Parallel callers must not share one state; spawn independent streams with
    :meth:`spawn` (which goes through :func:`derive_seed`).
    """

    __slots__ = ("seed", "_gen")

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def spawn(self, index: int) -> "RngState":
        return RngState(derive_seed(self.seed, index))

    def uniform_open(self, *shape: int) -> np.ndarray:
        """Uniforms strictly inside (0, 1), safe for inverse-CDF transforms."""
        raw = self._gen.integers(0, 2**53, size=shape or None)
        return (raw + 0.5) / _TWO53


def standard_normal_matrix(rng: RngState, rows: int, cols: int) -> np.ndarray:
    """rows x cols matrix of i.i.d. standard normals via the inverse CDF."""
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be at least 1")
    return ndtri(rng.uniform_open(rows, cols))


@dataclass(frozen=True)
class SymMatrix:
    """Symmetric square matrix, stored exactly symmetric and read-only."""

    entries: np.ndarray

    def __post_init__(self):
        m = np.array(self.entries, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
            raise ValueError("a square matrix with dim >= 1 is required")
        if not np.all(np.isfinite(m)):
            raise ValueError("matrix entries must be finite")
        scale = max(float(np.max(np.abs(m))), 1e-300)
        gap = float(np.max(np.abs(m - m.T)))
        if gap > 1e-12 * scale:
            raise ValueError(
                f"matrix is asymmetric beyond tolerance (relative gap {gap / scale:.3e})"
            )
        m = (m + m.T) / 2.0
        m.flags.writeable = False
        object.__setattr__(self, "entries", m)

    @property
    def dim(self) -> int:
        return int(self.entries.shape[0])

    def trace(self) -> float:
        return float(np.trace(self.entries))


@dataclass(frozen=True)
class PsdFactor:
    """Lower-triangular L with L @ L.T equal to a PSD-repaired symmetric matrix.

    ``clipped_mass`` is the total magnitude of negative eigenvalues removed
    during the repair (zero for a genuinely PSD input).
    """

    lower: np.ndarray
    clipped_mass: float

    @property
    def dim(self) -> int:
        return int(self.lower.shape[0])


def psd_factor(m: SymMatrix) -> PsdFactor:
    """Factor a symmetric matrix as L @ L.T after clipping negative eigenvalues.

    Negative eigenvalues (roundoff in sample covariances) are clipped to zero
    and their magnitude reported. The eigendecomposition square root is rotated
    to lower-triangular form with nonnegative diagonal, so for a strictly
    positive-definite input L is an ordinary Cholesky-style factor.
    """
    lam, vec = np.linalg.eigh(m.entries)
    clipped = float(np.sum(np.maximum(-lam, 0.0)))
    root = vec * np.sqrt(np.maximum(lam, 0.0))
    r = np.linalg.qr(root.T, mode="r")
    lower = r.T * np.where(np.diag(r) < 0, -1.0, 1.0)[np.newaxis, :]
    lower = np.ascontiguousarray(lower)
    lower.flags.writeable = False
    return PsdFactor(lower=lower, clipped_mass=clipped)


def mvn_quadratic_draws(factor: PsdFactor, w: np.ndarray) -> np.ndarray:
    """Squared norms ||L w_r||^2 for each row w_r of a standard-normal matrix.

    With w ~ N(0, I) rows, the outputs are draws of the quadratic form V'V
    for V ~ N(0, L L').
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[1] != factor.dim:
        raise ValueError(
            f"draw matrix has {w.shape[1] if w.ndim == 2 else '?'} columns, "
            f"factor dimension is {factor.dim}"
        )
    y = w @ factor.lower.T
    return np.einsum("ij,ij->i", y, y)


def empirical_quantile(values: np.ndarray, p: float) -> float:
    """k-th ascending order statistic with k = ceil(p * len(values)).

    This upper-order-statistic convention is deliberately conservative for
    rejection decisions and makes simulated critical values reproducible
    bit-for-bit for a given seed.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("values must be a nonempty 1-d array")
    if not np.all(np.isfinite(v)):
        raise ValueError("values must be finite")
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie strictly in (0, 1), got {p}")
    k = min(max(math.ceil(p * v.size), 1), v.size)
    return float(np.partition(v, k - 1)[k - 1])
