import numpy as np
import pytest
from scipy.special import gammainc

from ivsimtest.linprob import (
    PsdFactor,
    RngState,
    SymMatrix,
    derive_seed,
    empirical_quantile,
    mvn_quadratic_draws,
    psd_factor,
    standard_normal_matrix,
)

CHI2_1_95 = 3.841458820694124  # chi-square(1) 0.95 quantile, confirmed below


def chi2_quantile_by_bisection(df: float, p: float) -> float:
    """Independent oracle: invert the regularized lower incomplete gamma."""
    lo, hi = 0.0, 1000.0
    for _ in range(200):
        mid = (lo + hi) / 2
        if gammainc(df / 2, mid / 2) < p:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def test_chi2_oracle_constant_agrees_with_bisection():
    assert abs(chi2_quantile_by_bisection(1, 0.95) - CHI2_1_95) < 1e-9


class TestDeriveSeed:
    def test_deterministic(self):
        s = 123456789
        assert derive_seed(s, 0) == derive_seed(s, 0)

    def test_index_sensitive(self):
        s = 123456789
        assert derive_seed(s, 0) != derive_seed(s, 1)

    def test_no_collisions_over_consecutive_indices(self):
        outs = {derive_seed(987654321, i) for i in range(10_000)}
        assert len(outs) == 10_000


class TestStandardNormalMatrix:
    def test_deterministic_given_seed(self):
        a = standard_normal_matrix(RngState(7), 4, 2)
        b = standard_normal_matrix(RngState(7), 4, 2)
        assert np.array_equal(a, b)

    def test_seed_sensitive(self):
        a = standard_normal_matrix(RngState(7), 4, 2)
        b = standard_normal_matrix(RngState(8), 4, 2)
        assert not np.array_equal(a, b)

    def test_law_of_large_numbers(self):
        x = standard_normal_matrix(RngState(7), 10**6, 1)
        assert abs(x.mean()) < 0.01
        assert abs(x.var() - 1.0) < 0.01

    def test_all_finite(self):
        x = standard_normal_matrix(RngState(3), 10**5, 3)
        assert np.all(np.isfinite(x))

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            standard_normal_matrix(RngState(1), 0, 2)


class TestPsdFactor:
    def test_scalar_square_root(self):
        f = psd_factor(SymMatrix(np.array([[4.0]])))
        assert f.lower[0, 0] == 2.0
        assert f.clipped_mass == 0.0

    def test_identity(self):
        f = psd_factor(SymMatrix(np.eye(2)))
        assert np.array_equal(f.lower, np.eye(2))
        assert f.clipped_mass == 0.0

    def test_rank_one_reconstruction(self):
        m = np.ones((2, 2))
        f = psd_factor(SymMatrix(m))
        # direct-multiplication oracle
        assert np.max(np.abs(f.lower @ f.lower.T - m)) < 1e-8

    def test_random_psd_reconstruction_and_shape(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            q = int(rng.integers(1, 8))
            a = rng.standard_normal((q, q))
            m = (a @ a.T + (a @ a.T).T) / 2
            f = psd_factor(SymMatrix(m))
            tol = 1e-8 * max(np.trace(m), 1.0)
            assert np.max(np.abs(f.lower @ f.lower.T - m)) <= tol
            assert np.all(np.triu(f.lower, 1) == 0.0)
            assert f.clipped_mass <= 1e-12 * max(np.trace(m), 1.0)

    def test_clips_negative_eigenvalue(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((3, 3))
        vecs, _ = np.linalg.qr(a)
        m = (vecs * np.array([2.0, 1.0, -1e-9])) @ vecs.T
        m = (m + m.T) / 2
        f = psd_factor(SymMatrix(m))
        assert f.clipped_mass == pytest.approx(1e-9, rel=1e-3)
        lam = np.linalg.eigvalsh(f.lower @ f.lower.T)
        assert lam.min() >= -1e-15

    def test_zero_matrix(self):
        f = psd_factor(SymMatrix(np.zeros((3, 3))))
        assert np.array_equal(f.lower, np.zeros((3, 3)))

    def test_rejects_asymmetry(self):
        with pytest.raises(ValueError, match="asymmetric"):
            SymMatrix(np.array([[1.0, 0.5], [0.2, 1.0]]))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="finite"):
            SymMatrix(np.array([[np.inf, 0.0], [0.0, 1.0]]))


class TestMvnQuadraticDraws:
    def test_identity_hand_case(self):
        f = psd_factor(SymMatrix(np.array([[1.0]])))
        out = mvn_quadratic_draws(f, np.array([[2.0]]))
        assert out.tolist() == [4.0]

    def test_scalar_factor_hand_case(self):
        f = psd_factor(SymMatrix(np.array([[4.0]])))
        out = mvn_quadratic_draws(f, np.array([[1.0], [-1.0]]))
        assert out.tolist() == [4.0, 4.0]

    def test_empirical_covariance_matches_target(self):
        sigma = np.array([[2.0, 1.0], [1.0, 2.0]])
        f = psd_factor(SymMatrix(sigma))
        w = standard_normal_matrix(RngState(11), 10**6, 2)
        y = w @ f.lower.T
        cov = np.cov(y, rowvar=False, bias=True)  # independent two-pass estimator
        assert np.max(np.abs(cov - sigma)) < 0.01

    def test_quadratic_scaling_is_exact_for_binary_powers(self):
        sigma = np.array([[2.0, 0.5], [0.5, 1.0]])
        f = psd_factor(SymMatrix(sigma))
        f2 = PsdFactor(lower=2.0 * f.lower, clipped_mass=0.0)
        w = standard_normal_matrix(RngState(5), 1000, 2)
        assert np.array_equal(mvn_quadratic_draws(f2, w), 4.0 * mvn_quadratic_draws(f, w))

    def test_dimension_mismatch(self):
        f = psd_factor(SymMatrix(np.eye(2)))
        with pytest.raises(ValueError, match="dimension"):
            mvn_quadratic_draws(f, np.zeros((5, 3)))

    def test_nonnegative(self):
        f = psd_factor(SymMatrix(np.array([[2.0, 1.0], [1.0, 2.0]])))
        w = standard_normal_matrix(RngState(2), 1000, 2)
        assert np.all(mvn_quadratic_draws(f, w) >= 0.0)


class TestEmpiricalQuantile:
    def test_order_statistic_by_hand(self):
        values = np.arange(1.0, 11.0)
        assert empirical_quantile(values, 0.95) == 10.0

    def test_single_element(self):
        for p in (0.01, 0.5, 0.99):
            assert empirical_quantile(np.array([3.0]), p) == 3.0

    def test_chi_square_quantile_oracle(self):
        # draws produced by an independent path (ziggurat normals, squared)
        g = np.random.default_rng(99)
        draws = g.standard_normal(10**5) ** 2
        assert abs(empirical_quantile(draws, 0.95) - CHI2_1_95) < 0.05

    def test_monotone_in_p(self):
        v = np.random.default_rng(3).standard_normal(1000)
        qs = [empirical_quantile(v, p) for p in (0.1, 0.3, 0.5, 0.7, 0.9, 0.99)]
        assert qs == sorted(qs)

    def test_permutation_invariant(self):
        v = np.random.default_rng(4).standard_normal(501)
        shuffled = v.copy()
        np.random.default_rng(5).shuffle(shuffled)
        for p in (0.05, 0.5, 0.95):
            assert empirical_quantile(v, p) == empirical_quantile(shuffled, p)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            empirical_quantile(np.array([]), 0.5)
        with pytest.raises(ValueError):
            empirical_quantile(np.array([1.0]), 0.0)
        with pytest.raises(ValueError):
            empirical_quantile(np.array([1.0]), 1.0)
        with pytest.raises(ValueError):
            empirical_quantile(np.array([np.nan]), 0.5)
