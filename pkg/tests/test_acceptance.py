"""End-to-end acceptance gates for the whole package.

Each test checks one numbered criterion at its stated tolerance and prints a
[PASS]/[FAIL] line (run pytest with -s to see them live). The replication
tables run once per session at 1000 replications and are shared across
criteria, so this module takes tens of minutes.
"""

import contextlib
import json
import math
import sys
import time

import numpy as np
import pytest

import ivsimtest as ivt
from ivsimtest.cli import load_csv, main, write_dataset_csv
from ivsimtest.linprob import RngState, derive_seed
from ivsimtest.montecarlo import ErrorDist, ExperimentDesign, run_cell, replicate_table
from ivsimtest.testing import OptimizerConfig, TestConfig

pytestmark = pytest.mark.acceptance

WORKERS = 2
REPS = 1000
BASE_SEED = 20240917

# Reference rejection probabilities for the size study (table 1), rows
# (dist, n) in report order, columns q = 1, 2, 5, 10.
TABLE1_REF = {
    ("uniform", 100): (0.046, 0.053, 0.041, 0.025),
    ("uniform", 1000): (0.049, 0.052, 0.050, 0.062),
    ("skewed", 100): (0.053, 0.039, 0.036, 0.030),
    ("skewed", 1000): (0.050, 0.049, 0.033, 0.037),
    ("bimodal", 100): (0.052, 0.035, 0.041, 0.035),
    ("bimodal", 1000): (0.056, 0.044, 0.034, 0.038),
    ("laplace", 100): (0.043, 0.032, 0.031, 0.013),
    ("laplace", 1000): (0.041, 0.049, 0.044, 0.043),
    ("t10", 100): (0.052, 0.036, 0.029, 0.013),
    ("t10", 1000): (0.048, 0.033, 0.035, 0.046),
    ("lognormal_diff", 100): (0.041, 0.027, 0.016, 0.010),
    ("lognormal_diff", 1000): (0.053, 0.062, 0.035, 0.031),
}

# Strong-instrument uniform-error power rows (table 2): per q, the moment test
# and the Anderson-Rubin baseline.
TABLE2_UNIFORM_TN = {
    (100, 1.0): (0.642, 0.817, 0.965, 0.994),
    (1000, 0.20): (0.635, 0.848, 0.994, 1.00),
}
TABLE2_UNIFORM_AR = {
    (100, 1.0): (0.649, 0.837, 0.981, 0.999),
    (1000, 0.20): (0.632, 0.851, 0.995, 1.00),
}

CHI2_1_95 = 3.841458820694124
CHI2_95 = {1: 3.841458820694124, 2: 5.991464547107979, 5: 11.070497693516351}

_table_cache = {}
_wall_times = {}


def get_table(k: int):
    if k not in _table_cache:
        t0 = time.perf_counter()
        _table_cache[k] = replicate_table(
            k, reps=REPS, base_seed=derive_seed(BASE_SEED, k), workers=WORKERS
        )
        _wall_times[k] = time.perf_counter() - t0
        print(f"\n[table {k}] {len(_table_cache[k])} cells in {_wall_times[k]:.0f}s",
              file=sys.stderr)
    return _table_cache[k]


def rates(cells, test):
    """{(dist, n, beta, q): rate} for one test column of a table."""
    out = {}
    for c in cells:
        d = c.design
        if d.test == test:
            out[(d.dist.kind, d.n, d.beta, d.q)] = c.rejection_rate
    return out


@contextlib.contextmanager
def criterion(num, text):
    try:
        yield
    except Exception:
        print(f"[FAIL] criterion {num}: {text}")
        raise
    print(f"[PASS] criterion {num}: {text}")


def band(ref, reps=REPS, floor=0.01):
    p = min(max(ref, floor), 1.0 - floor)  # clamp so saturated cells keep a band
    return 3.0 * math.sqrt(p * (1.0 - p) / reps)


def test_criterion_1_table1_replication():
    with criterion(1, "table 1 size within ±0.021 of reference (≤3 misses), under 10 min"):
        cells = get_table(1)
        got = rates(cells, "tn")
        misses = []
        for (kind, n), refs in TABLE1_REF.items():
            for q, ref in zip((1, 2, 5, 10), refs):
                rate = got[(kind, n, None, q)]
                if abs(rate - ref) > 0.021:
                    misses.append((kind, n, q, rate, ref))
        assert len(got) == 48
        assert len(misses) <= 3, f"cells outside the ±0.021 band: {misses}"
        assert _wall_times[1] < 600.0, f"table 1 took {_wall_times[1]:.0f}s"


def test_criterion_2_table2_uniform_power():
    with criterion(2, "table 2 uniform power matches reference within 3 SE (both tests)"):
        cells = get_table(2)
        for test, refmap in (("tn", TABLE2_UNIFORM_TN), ("ar", TABLE2_UNIFORM_AR)):
            got = rates(cells, test)
            for (n, beta), refs in refmap.items():
                for q, ref in zip((1, 2, 5, 10), refs):
                    rate = got[("uniform", n, beta, q)]
                    assert abs(rate - ref) <= max(band(ref), 0.046), (
                        f"{test} uniform n={n} q={q}: {rate} vs {ref}"
                    )


def test_criterion_3_weak_instrument_ordering():
    with criterion(3, "weak ≤ strong instrument power, cell by cell (tables 3≤2, 5≤4)"):
        pairs = [(get_table(2), get_table(3)), (get_table(4), get_table(5))]
        checked = 0
        for strong_cells, weak_cells in pairs:
            for test in ("tn", "ar"):
                strong = {}
                strong_se = {}
                for c in strong_cells:
                    d = c.design
                    if d.test == test:
                        strong[(d.dist.kind, d.n, d.beta, d.q)] = c.rejection_rate
                        strong_se[(d.dist.kind, d.n, d.beta, d.q)] = c.mc_standard_error
                for c in weak_cells:
                    d = c.design
                    if d.test != test:
                        continue
                    key = (d.dist.kind, d.n, d.beta, d.q)
                    se = math.sqrt(strong_se[key] ** 2 + c.mc_standard_error**2)
                    assert c.rejection_rate <= strong[key] + 3 * max(se, 0.004), (
                        f"{test} {key}: weak {c.rejection_rate} > strong {strong[key]}"
                    )
                    checked += 1
        # tables 2/3 hold 48 cells per test, tables 4/5 hold 72; two tests each
        assert checked == (48 + 72) * 2


def test_criterion_4_composite_never_exceeds_simple_size():
    with criterion(4, "composite rejection ≤ simple rejection + 2 SE under a true null (paired)"):
        model = ivt.ModelSpec.linear_model(2)
        reps = REPS
        diff = np.empty(reps)
        simple_rej = comp_rej = 0
        for r in range(reps):
            rep = derive_seed(771, r)
            rng = RngState(derive_seed(rep, 0))
            data, part = ivt.gen_composite_power_data(
                100, 1, 0.0, 1.0, 0.5, 0.75, ErrorDist("uniform"), rng
            )
            cfg = TestConfig(seed=derive_seed(rep, 1), optimizer=OptimizerConfig(starts=2))
            s = ivt.test_simple(data, model, np.array([0.0, 1.0]), cfg).reject
            c = ivt.test_composite_auto(data, model, part, cfg).reject
            simple_rej += s
            comp_rej += c
            diff[r] = float(c) - float(s)
        se = float(diff.std(ddof=1)) / math.sqrt(reps)
        assert comp_rej / reps <= simple_rej / reps + 2 * max(se, 1e-6), (
            f"composite {comp_rej / reps} vs simple {simple_rej / reps}"
        )


def test_criterion_5_bound_calculator():
    with criterion(5, "bound worked example to 4 significant digits; monotone on a 100-point grid"):
        from mpmath import mp, mpf

        mp.dps = 50
        res = ivt.erp_bound(ivt.BoundInputs(q=1, n=10**6, ell=1.0, m3=1.0, c_sigma=1.0, t=3.0))
        r = mp.sqrt(6 * mpf(3) / 10**6)
        rt = r + r * r
        oracle = 400 / mpf(1000) + min(4 * rt, mp.sqrt((rt - mp.log(1 - rt)) / 2))
        conf_oracle = 1 - 4 * mp.e ** mpf(-3)
        assert abs(res.bound / float(oracle) - 1.0) < 5e-5  # 4 significant digits
        assert abs(res.confidence / float(conf_oracle) - 1.0) < 5e-5
        assert res.bound == pytest.approx(0.41704, abs=5e-6)
        assert res.confidence == pytest.approx(0.80085, abs=5e-6)

        grids = {
            "q": [1, 2, 3, 4],
            "n": [10**5, 3 * 10**5, 10**6, 3 * 10**6, 10**7, 3 * 10**7],
            "m3": [0.25, 0.5, 1.0, 2.0, 4.0],
            "ell": [0.25, 0.5, 1.0, 2.0, 4.0],
            "c_sigma": [0.25, 0.5, 1.0, 2.0, 4.0],
        }
        bases = [
            dict(q=2, n=10**6, ell=1.0, m3=1.0, c_sigma=1.0, t=12.0),
            dict(q=1, n=10**7, ell=0.5, m3=2.0, c_sigma=0.5, t=10.0),
            dict(q=3, n=10**8, ell=1.0, m3=0.5, c_sigma=0.5, t=14.0),
            dict(q=4, n=10**7, ell=1.0, m3=1.5, c_sigma=0.25, t=16.0),
        ]
        points = 0
        for base in bases:
            for name, ladder in grids.items():
                vals = []
                for v in ladder:
                    args = dict(base)
                    args[name] = v
                    out = ivt.erp_bound(ivt.BoundInputs(**args))
                    assert out.feasible
                    vals.append(out.bound)
                    points += 1
                expected = sorted(vals, reverse=(name == "n"))
                assert vals == expected, f"not monotone in {name} from base {base}"
        assert points >= 100


def test_criterion_6_chi_square_oracle():
    with criterion(6, "simulated critical values match chi-square quantiles (q=1 and q=5)"):
        from ivsimtest.critical import SimPlan, simulate_null
        from ivsimtest.linprob import SymMatrix, psd_factor
        from ivsimtest.stats import SigmaEstimate

        def sigma_eye(q):
            sym = SymMatrix(np.eye(q))
            return SigmaEstimate(matrix=sym, factor=psd_factor(sym), mu_hat=np.zeros(q))

        sim1 = simulate_null(sigma_eye(1), SimPlan.build(q=1, draws=10**5, alpha=0.05, seed=601))
        assert abs(sim1.c_alpha - CHI2_1_95) < 0.05
        sim5 = simulate_null(sigma_eye(5), SimPlan.build(q=5, draws=10**5, alpha=0.05, seed=605))
        assert abs(sim5.c_alpha - CHI2_95[5]) < 0.15


def test_criterion_7_exact_invariances_under_one_minute():
    with criterion(7, "exact invariance suite (scale, implication, determinism, PSD) in <1 min"):
        t0 = time.perf_counter()
        model1 = ivt.ModelSpec.linear_model(1)
        model2 = ivt.ModelSpec.linear_model(2)

        # instrument-scale invariance of reject flags (mean and quantile tests)
        rng = np.random.default_rng(71)
        data = ivt.Dataset(
            y=rng.standard_normal(150),
            x=rng.standard_normal((150, 1)),
            z=rng.standard_normal((150, 2)),
        )
        scaled = ivt.Dataset(y=data.y, x=data.x, z=2.0 * data.z)
        cfg = TestConfig(seed=72, draws=4000)
        a = ivt.test_simple(data, model1, [0.4], cfg)
        b = ivt.test_simple(scaled, model1, [0.4], cfg)
        assert a.reject == b.reject
        assert b.statistic == 4.0 * a.statistic and b.critical_value == 4.0 * a.critical_value
        aq = ivt.test_simple_quantile(data, model1, [0.4], 0.5, cfg)
        bq = ivt.test_simple_quantile(scaled, model1, [0.4], 0.5, cfg)
        assert aq.reject == bq.reject

        # full-composite rejection implies shortcut rejection, pathwise
        implications = 0
        for r in range(25):
            rng2 = RngState(derive_seed(73, r))
            cdata, part = ivt.gen_composite_power_data(
                100, 1, 1.0, 1.0, 0.5, 0.75, ErrorDist("uniform"), rng2
            )
            ccfg = TestConfig(
                seed=derive_seed(74, r), draws=2000, optimizer=OptimizerConfig(starts=2)
            )
            full = ivt.test_composite(cdata, model2, part, ccfg)
            if full.reject:
                assert ivt.test_composite_shortcut(cdata, model2, part, ccfg).reject
                implications += 1
        assert implications >= 3

        # determinism across worker counts
        design = ExperimentDesign(
            table=2, dist=ErrorDist("t10"), n=100, q=2, beta=1.0, c=0.5,
            reps=40, draws=2000, base_seed=75,
        )
        assert run_cell(design, workers=1) == run_cell(design, workers=2)

        # order-statistic permutation invariance
        v = np.random.default_rng(76).standard_normal(777)
        shuffled = v.copy()
        np.random.default_rng(77).shuffle(shuffled)
        assert ivt.empirical_quantile(v, 0.95) == ivt.empirical_quantile(shuffled, 0.95)

        # covariance estimates stay PSD after repair
        for r in range(10):
            g = np.random.default_rng(derive_seed(78, r))
            d = ivt.Dataset(
                y=g.standard_normal(40), x=np.zeros((40, 1)), z=g.standard_normal((40, 5))
            )
            est = ivt.sigma_hat(d, model1, [0.0])
            assert np.linalg.eigvalsh(est.factor.lower @ est.factor.lower.T).min() >= -1e-12

        # quantile statistic reduces to the mean statistic on transformed data
        g = np.random.default_rng(79)
        d = ivt.Dataset(y=g.standard_normal(60), x=np.zeros((60, 1)), z=g.standard_normal((60, 3)))
        w = ivt.quantile_indicators(d, model1, [0.0], 0.3)
        transformed = ivt.Dataset(y=w, x=np.zeros((60, 1)), z=d.z)
        assert ivt.tq_statistic(d, model1, [0.0], 0.3) == ivt.t_statistic(transformed, model1, [0.0])

        elapsed = time.perf_counter() - t0
        assert elapsed < 60.0, f"property suite took {elapsed:.1f}s"


def test_criterion_8_asymptotic_power_engine():
    with criterion(8, "zero-drift power equals the level; central mixtures match chi-square"):
        p0 = ivt.asymptotic_power(np.eye(2), np.zeros(2), alpha=0.05, draws=10**5, seed=81)
        se = math.sqrt(0.05 * 0.95 / 10**5)
        assert abs(p0 - 0.05) <= 3 * se + 2e-3
        for q in (1, 2, 5):
            spec = ivt.MixtureSpec(lambdas=np.ones(q), noncentrality=np.zeros(q))
            est = ivt.mixture_tail(spec, CHI2_95[q], draws=2 * 10**5, seed=82 + q)
            assert abs(est.probability - 0.05) <= 3 * est.standard_error + 1e-9


def test_criterion_9_cli_round_trip_and_end_to_end(tmp_path):
    with criterion(9, "CSV round-trip is bitwise; CLI end-to-end matches the reference cell"):
        # round-trip oracle
        data = ivt.gen_simple_power_data(
            60, 2, 1.0, 0.5, 0.75, ErrorDist("lognormal_diff"), RngState(91)
        )
        path = tmp_path / "rt.csv"
        write_dataset_csv(data, str(path))
        back = load_csv(str(path))
        assert np.array_equal(back.y, data.y)
        assert np.array_equal(back.x, data.x)
        assert np.array_equal(back.z, data.z)

        # end-to-end: uniform, n=100, q=1, c=0.5, beta=1 (reference power 0.642)
        reps = 120
        rejects = 0
        for r in range(reps):
            rng = RngState(derive_seed(92, 2 * r))
            d = ivt.gen_simple_power_data(100, 1, 1.0, 0.5, 0.75, ErrorDist("uniform"), rng)
            csv_path = tmp_path / "cell.csv"
            write_dataset_csv(d, str(csv_path))
            out = tmp_path / "report.jsonl"
            code = main([
                "test", "--data", str(csv_path), "--theta0", "0.0",
                "--seed", str(derive_seed(92, 2 * r + 1)), "--out", str(out),
            ])
            assert code == 0
            rejects += bool(json.loads(out.read_text())["reject"])
        rate = rejects / reps
        wide = 3 * math.sqrt(0.642 * 0.358 / reps)
        assert abs(rate - 0.642) <= wide, f"end-to-end rate {rate}"
