"""Data-generating processes and the replication engine for the simulation study.

Five experiment tables: table 1 is size under a correct simple null; tables 2
and 3 are simple-test power with strong (c = 0.50) and weak (c = 0.25)
instruments; tables 4 and 5 are the composite analogs. Tables 2-5 also run the
Anderson-Rubin baseline on the same generated data (identical seeds give
identical datasets, so the comparison is paired).

All randomness flows through derived seeds: cell -> replication -> data/test
streams, so every cell is reproducible bit-for-bit at any worker count.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtri, stdtrit

from .anderson_rubin import ar_statistic
from .linprob import RngState, derive_seed, standard_normal_matrix
from .stats import Dataset, ModelSpec, ThetaPartition
from .testing import OptimizerConfig, TestConfig, test_composite_auto, test_simple

ERROR_KINDS = ("uniform", "skewed", "bimodal", "laplace", "t10", "lognormal_diff")

_MIX_MEANS = {"skewed": 2.5, "bimodal": 4.0}
_MIX_WEIGHT = 0.75  # probability of the centered component


@dataclass(frozen=True)
class ErrorDist:
    """One of the six mean-zero error distributions used in the experiments.

    uniform: U[-2, 2]; skewed / bimodal: 0.75 N(0,1) + 0.25 N(mu,1) recentered
    (mu = 2.5 / 4.0); laplace: unit scale; t10: Student t with 10 df;
    lognormal_diff: difference of two independent standard lognormals.
    """

    kind: str

    def __post_init__(self):
        if self.kind not in ERROR_KINDS:
            raise ValueError(f"unknown error distribution {self.kind!r}; choose from {ERROR_KINDS}")


def draw_errors(dist: ErrorDist, rng: RngState, size: int) -> np.ndarray:
    """Vector of i.i.d. draws; every kind is mean zero by construction."""
    kind = dist.kind
    if kind == "uniform":
        return -2.0 + 4.0 * rng.uniform_open(size)
    if kind in _MIX_MEANS:
        mu = _MIX_MEANS[kind]
        pick = rng.uniform_open(size)
        base = ndtri(rng.uniform_open(size))
        shift = np.where(pick < _MIX_WEIGHT, 0.0, mu)
        return base + shift - (1.0 - _MIX_WEIGHT) * mu
    if kind == "laplace":
        u = rng.uniform_open(size)
        return np.where(u < 0.5, np.log(2.0 * u), -np.log(2.0 * (1.0 - u)))
    if kind == "t10":
        return stdtrit(10, rng.uniform_open(size))
    # lognormal_diff
    a = np.exp(ndtri(rng.uniform_open(size)))
    b = np.exp(ndtri(rng.uniform_open(size)))
    return a - b


def gen_null_data(n: int, q: int, dist: ErrorDist, rng: RngState):
    """Data satisfying a simple null: y is pure error, instruments standard
    normal, covariates an unused placeholder. Returns (dataset, theta0)."""
    z = standard_normal_matrix(rng, n, q)
    u = draw_errors(dist, rng, n)
    return Dataset(y=u, x=np.zeros((n, 1)), z=z), np.zeros(1)


def _first_stage(n, q, c, rho, dist, rng):
    z = standard_normal_matrix(rng, n, q)
    u = draw_errors(dist, rng, n)
    eps = draw_errors(dist, rng, n)
    v = math.sqrt(1.0 - rho * rho) * eps + rho * u
    x = c * z.sum(axis=1) + v
    return z, u, x


def gen_simple_power_data(
    n: int, q: int, beta0: float, c: float, rho: float, dist: ErrorDist, rng: RngState
) -> Dataset:
    """y = beta0 * x + u with x = c * sum(z) + v and v correlated with u. The
    hypothesis under test is beta = 0, so beta0 = 0 embeds the null."""
    if not abs(rho) < 1:
        raise ValueError("rho must satisfy |rho| < 1")
    z, u, x = _first_stage(n, q, c, rho, dist, rng)
    y = beta0 * x + u
    return Dataset(y=y, x=x[:, np.newaxis], z=z)


def gen_composite_power_data(
    n: int, q: int, beta1: float, beta2: float, c: float, rho: float,
    dist: ErrorDist, rng: RngState,
):
    """y = beta1 * x1 + beta2 * x2 + u with endogenous x1 and exogenous x2.

    The exogenous covariate joins the instrument set, so data.z has q + 1
    columns (z, x2). Returns (dataset, partition) with the first coefficient
    tested at zero and the second free.
    """
    if not abs(rho) < 1:
        raise ValueError("rho must satisfy |rho| < 1")
    z, u, x1 = _first_stage(n, q, c, rho, dist, rng)
    x2 = draw_errors(dist, rng, n)
    y = beta1 * x1 + beta2 * x2 + u
    data = Dataset(
        y=y,
        x=np.column_stack([x1, x2]),
        z=np.column_stack([z, x2]),
    )
    return data, ThetaPartition(tested=(0,), g0=np.zeros(1), d=2)


# ---------------------------------------------------------------------------
# replication engine

_TESTS = ("tn", "ar")


@dataclass(frozen=True)
class ExperimentDesign:
    """One table cell: distribution, sample size, instrument count, design
    coefficients, and the designated test."""

    table: int
    dist: ErrorDist
    n: int
    q: int
    beta: Optional[float] = None
    c: Optional[float] = None
    rho: float = 0.75
    reps: int = 1000
    alpha: float = 0.05
    draws: int = 20000
    base_seed: int = 0
    test: str = "tn"

    def __post_init__(self):
        if self.table not in (1, 2, 3, 4, 5):
            raise ValueError("table must be 1..5")
        if self.test not in _TESTS:
            raise ValueError(f"test must be one of {_TESTS}")
        if self.table == 1 and self.test != "tn":
            raise ValueError("table 1 has no AR column")
        if self.table != 1 and (self.beta is None or self.c is None):
            raise ValueError("power designs need beta and c")
        if self.reps < 1:
            raise ValueError("reps must be positive")


@dataclass(frozen=True)
class CellResult:
    design: ExperimentDesign
    rejection_rate: float
    mc_standard_error: float
    wall_time: float = field(compare=False, default=0.0)


_MODEL1 = ModelSpec.linear_model(1)
_MODEL2 = ModelSpec.linear_model(2)
_MC_OPTIMIZER = OptimizerConfig(starts=2)  # fallback searches start at the
# restricted estimate; two starts keep the per-cell budget manageable


def _replication_reject(design: ExperimentDesign, r: int) -> bool:
    rep = derive_seed(design.base_seed, r)
    rng = RngState(derive_seed(rep, 0))
    test_seed = derive_seed(rep, 1)
    d = design
    if d.table == 1:
        data, theta0 = gen_null_data(d.n, d.q, d.dist, rng)
        cfg = TestConfig(alpha=d.alpha, draws=d.draws, seed=test_seed)
        return test_simple(data, _MODEL1, theta0, cfg).reject
    if d.table in (2, 3):
        data = gen_simple_power_data(d.n, d.q, d.beta, d.c, d.rho, d.dist, rng)
        if d.test == "tn":
            cfg = TestConfig(alpha=d.alpha, draws=d.draws, seed=test_seed)
            return test_simple(data, _MODEL1, np.zeros(1), cfg).reject
        return ar_statistic(data, beta0=np.zeros(1), alpha=d.alpha).reject
    data, part = gen_composite_power_data(d.n, d.q, d.beta, d.beta, d.c, d.rho, d.dist, rng)
    if d.test == "tn":
        cfg = TestConfig(alpha=d.alpha, draws=d.draws, seed=test_seed, optimizer=_MC_OPTIMIZER)
        return test_composite_auto(data, _MODEL2, part, cfg).reject
    ar_data = Dataset(y=data.y, x=data.x, z=data.z[:, : d.q])
    return ar_statistic(ar_data, beta0=np.zeros(1), exog_indices=(1,), alpha=d.alpha).reject


def _count_block(design: ExperimentDesign, lo: int, hi: int) -> int:
    return sum(1 for r in range(lo, hi) if _replication_reject(design, r))


def run_cell(design: ExperimentDesign, workers: int = 1) -> CellResult:
    """Run every replication of one cell; deterministic at any worker count
    because each replication derives its own seed from (base_seed, index)."""
    t0 = time.perf_counter()
    reps = design.reps
    if workers <= 1 or reps < 2 * workers:
        count = _count_block(design, 0, reps)
    else:
        edges = np.linspace(0, reps, workers + 1).astype(int)
        blocks = [(design, int(lo), int(hi)) for lo, hi in zip(edges[:-1], edges[1:])]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            count = sum(pool.map(_count_block, *zip(*blocks)))
    rate = count / reps
    se = math.sqrt(rate * (1.0 - rate) / reps)
    return CellResult(
        design=design,
        rejection_rate=rate,
        mc_standard_error=se,
        wall_time=time.perf_counter() - t0,
    )


_QS = (1, 2, 5, 10)


def _table_rows(table: int):
    """(dist, n, beta, c) per table row, in report order."""
    rows = []
    for kind in ERROR_KINDS:
        if table == 1:
            rows += [(kind, 100, None, None), (kind, 1000, None, None)]
        elif table in (2, 3):
            c = 0.50 if table == 2 else 0.25
            rows += [(kind, 100, 1.0, c), (kind, 1000, 0.20, c)]
        else:
            c = 0.50 if table == 4 else 0.25
            rows += [(kind, 100, 1.0, c), (kind, 1000, 1.0, c), (kind, 1000, 0.20, c)]
    return rows


def table_designs(
    table: int, reps: int = 1000, base_seed: int = 0, draws: int = 20000, alpha: float = 0.05
):
    """Full design grid for one table, with per-cell derived seeds shared
    between the tn and ar designs of the same cell (paired data)."""
    if table not in (1, 2, 3, 4, 5):
        raise ValueError("table must be 1..5")
    designs = []
    tests = ("tn",) if table == 1 else _TESTS
    key = 0
    for kind, n, beta, c in _table_rows(table):
        for q in _QS:
            cell_seed = derive_seed(derive_seed(base_seed, table), key)
            key += 1
            for test in tests:
                designs.append(
                    ExperimentDesign(
                        table=table, dist=ErrorDist(kind), n=n, q=q, beta=beta, c=c,
                        reps=reps, alpha=alpha, draws=draws, base_seed=cell_seed, test=test,
                    )
                )
    return designs


def replicate_table(
    table: int,
    reps: int = 1000,
    base_seed: int = 0,
    draws: int = 20000,
    alpha: float = 0.05,
    workers: int = 1,
    progress=None,
):
    """Run the full grid of one table in report order; returns CellResults."""
    designs = table_designs(table, reps=reps, base_seed=base_seed, draws=draws, alpha=alpha)
    cells = []
    for i, design in enumerate(designs):
        cell = run_cell(design, workers=workers)
        cells.append(cell)
        if progress is not None:
            progress(i + 1, len(designs), cell)
    return cells


CSV_HEADER = "table,dist,n,beta,c,q,test,rate,se,reps,seed"


def cell_record(cell: CellResult) -> dict:
    d = cell.design
    return {
        "table": d.table,
        "dist": d.dist.kind,
        "n": d.n,
        "beta": d.beta,
        "c": d.c,
        "q": d.q,
        "test": d.test,
        "rate": cell.rejection_rate,
        "se": cell.mc_standard_error,
        "reps": d.reps,
        "seed": d.base_seed,
    }


def write_cells_csv(cells, out) -> None:
    out.write(CSV_HEADER + "\n")
    for cell in cells:
        rec = cell_record(cell)
        fields = [
            str(rec["table"]),
            rec["dist"],
            str(rec["n"]),
            "" if rec["beta"] is None else repr(float(rec["beta"])),
            "" if rec["c"] is None else repr(float(rec["c"])),
            str(rec["q"]),
            rec["test"],
            repr(float(rec["rate"])),
            repr(float(rec["se"])),
            str(rec["reps"]),
            str(rec["seed"]),
        ]
        out.write(",".join(fields) + "\n")
