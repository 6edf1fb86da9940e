import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gamma as gamma_fn
from scipy.special import kv

from spatialdnn import grf
from spatialdnn.errors import InvalidInputError, NotPositiveDefiniteError


def matern_bessel(r, rho, nu, var=1.0):
    """General Matérn via the modified Bessel function (independent oracle)."""
    x = math.sqrt(2 * nu) * r / rho
    if x == 0:
        return var
    return var * 2 ** (1 - nu) / gamma_fn(nu) * x**nu * kv(nu, x)


EXP = grf.CovarianceModel("exponential", 0.5, variance=1.0)


class TestCovEval:
    def test_zero_distance(self):
        assert grf.cov_eval(EXP, [0.3], [0.3]) == 1.0

    def test_half_range(self):
        assert grf.cov_eval(EXP, [0.0], [0.5]) == pytest.approx(math.exp(-1), abs=1e-15)
        assert grf.cov_eval(EXP, [0.1, 0.2], [0.4, 0.6]) == pytest.approx(math.exp(-1), abs=1e-15)

    def test_matern_half_equals_exponential(self):
        m = grf.CovarianceModel("matern", 0.5, 0.5, 1.0)
        assert grf.cov_eval(m, [0.0], [0.5]) == pytest.approx(math.exp(-1), abs=1e-12)
        assert matern_bessel(0.5, 0.5, 0.5) == pytest.approx(math.exp(-1), abs=1e-12)

    @pytest.mark.parametrize("nu", [0.5, 1.5, 2.5])
    def test_closed_forms_match_bessel(self, nu):
        m = grf.CovarianceModel("matern", 0.7, nu, 2.0)
        for r in np.linspace(0.01, 3.0, 50):
            assert grf.cov_eval(m, [0.0], [r]) == pytest.approx(
                matern_bessel(r, 0.7, nu, 2.0), rel=1e-10)

    def test_non_finite(self):
        with pytest.raises(InvalidInputError):
            grf.cov_eval(EXP, [np.nan], [0.0])

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInputError):
            grf.cov_eval(EXP, [0.0, 1.0], [0.0])

    def test_bad_models(self):
        with pytest.raises(InvalidInputError):
            grf.CovarianceModel("matern", 0.5, 1.0)
        with pytest.raises(InvalidInputError):
            grf.CovarianceModel("exponential", -1.0)
        with pytest.raises(InvalidInputError):
            grf.CovarianceModel("gaussian", 1.0)


class TestBuildCov:
    def test_single_location(self):
        m = grf.CovarianceModel("exponential", 0.3, variance=2.5)
        c = grf.build_cov(m, grf.LocationSet([[0.4]]))
        np.testing.assert_array_equal(c.entries, [[2.5]])

    def test_toeplitz_three_points(self):
        h, rho = 0.2, 0.5
        c = grf.build_cov(EXP, grf.LocationSet([0.0, h, 2 * h])).entries
        oracle = np.array([[math.exp(-abs(i - j) * h / rho) for j in range(3)] for i in range(3)])
        np.testing.assert_allclose(c, oracle, rtol=0, atol=1e-15)

    def test_permutation_conjugation(self):
        rng = np.random.default_rng(3)
        pts = rng.uniform(0, 1, (12, 2))
        perm = rng.permutation(12)
        a = grf.build_cov(EXP, pts).entries
        b = grf.build_cov(EXP, pts[perm]).entries
        np.testing.assert_allclose(b, a[np.ix_(perm, perm)], atol=1e-15)

    def test_locationset_validation(self):
        with pytest.raises(InvalidInputError):
            grf.LocationSet([[0.1], [0.1]])
        with pytest.raises(InvalidInputError):
            grf.LocationSet([[1.5]], domain_size=1.0)
        with pytest.raises(InvalidInputError):
            grf.LocationSet(np.empty((0, 1)))


class TestChol:
    def test_identity(self):
        f = grf.chol(np.eye(4))
        np.testing.assert_array_equal(f.lower, np.eye(4))
        assert f.jitter == 0.0

    def test_two_by_two(self):
        f = grf.chol(np.array([[4.0, 2.0], [2.0, 3.0]]))
        np.testing.assert_allclose(f.lower, [[2, 0], [1, math.sqrt(2)]], atol=1e-15)
        assert np.max(np.abs(f.lower @ f.lower.T - [[4, 2], [2, 3]])) <= 1e-12

    def test_rank_deficient_gets_jitter(self):
        a = np.ones((2, 2))
        f = grf.chol(a)
        assert f.jitter > 0
        assert np.max(np.abs(f.lower @ f.lower.T - a)) <= f.jitter + 1e-15

    def test_indefinite_raises(self):
        with pytest.raises(NotPositiveDefiniteError):
            grf.chol(np.array([[1.0, 2.0], [2.0, 1.0]]))

    @pytest.mark.parametrize("n", [5, 50, 200])
    def test_reconstruction_random_psd(self, n):
        rng = np.random.default_rng(n)
        A = rng.standard_normal((n, n // 2 + 1))
        S = A @ A.T
        f = grf.chol(S)
        err = np.max(np.abs(f.lower @ f.lower.T - (S + f.jitter * np.eye(n))))
        assert err <= 1e-10 * max(1.0, np.max(np.abs(S)))


class TestSampleField:
    def test_zero_factor(self):
        s = grf.sample_field(np.zeros((5, 5)), 1)
        np.testing.assert_array_equal(s.values, 0.0)

    def test_deterministic(self):
        f = grf.chol(grf.build_cov(EXP, grf.equispaced_grid(10)))
        a, b = grf.sample_field(f, 42), grf.sample_field(f, 42)
        np.testing.assert_array_equal(a.values, b.values)
        assert len(a) == 10

    def test_empirical_covariance(self):
        cov = grf.build_cov(EXP, grf.equispaced_grid(20)).entries
        draws = grf.sample_field(grf.chol(cov), 7, size=5000).values
        emp = draws.T @ draws / draws.shape[0]
        assert np.linalg.norm(emp - cov) / np.linalg.norm(cov) < 0.05

    def test_sample_mean(self):
        cov = grf.build_cov(EXP, grf.equispaced_grid(15)).entries
        draws = grf.sample_field(grf.chol(cov), 11, size=10_000).values
        assert np.all(np.abs(draws.mean(axis=0)) <= 4 * 1.0 / math.sqrt(10_000))


class TestTraces:
    def test_unit_variance(self):
        c = grf.build_cov(EXP, grf.equispaced_grid(37))
        assert grf.traces(c)[0] == pytest.approx(37.0)

    def test_two_by_two(self):
        assert grf.traces(np.array([[1.0, 0.5], [0.5, 1.0]])) == pytest.approx((2.0, 2.5))

    def test_diagonal(self):
        assert grf.traces(np.diag([2.0, 3.0])) == pytest.approx((5.0, 13.0))

    def test_against_matrix_product(self):
        c = grf.build_cov(EXP, grf.equispaced_grid(16, 2.0, 2)).entries
        t, t2 = grf.traces(c)
        assert t2 == pytest.approx(np.trace(c @ c), rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    rho=st.floats(0.05, 5.0),
    var=st.floats(0.1, 4.0),
    nu=st.sampled_from([0.5, 1.5, 2.5]),
    kind=st.sampled_from(["exponential", "matern"]),
    seed=st.integers(0, 2**32 - 1),
    n=st.integers(1, 30),
    dim=st.sampled_from([1, 2]),
)
def test_covariance_invariants(rho, var, nu, kind, seed, n, dim):
    model = grf.CovarianceModel(kind, rho, nu, var)
    pts = np.random.default_rng(seed).uniform(0, 1, (n, dim))
    c = grf.build_cov(model, pts).entries
    assert np.array_equal(c, c.T)
    np.testing.assert_array_equal(np.diag(c), var)
    assert grf.cov_eval(model, pts[0], pts[0]) == var
    t, t2 = grf.traces(c)
    assert t2 >= t * t / n * (1 - 1e-12)


def test_matern_half_grid_of_distances():
    m = grf.CovarianceModel("matern", 0.8, 0.5, 1.7)
    e = grf.CovarianceModel("exponential", 0.8, variance=1.7)
    r = np.linspace(0.0, 5.0, 100)
    assert np.max(np.abs(grf.cov_from_distance(m, r) - grf.cov_from_distance(e, r))) <= 1e-12


def test_csv_export(tmp_path):
    c = grf.build_cov(EXP, grf.equispaced_grid(3))
    grf.write_matrix_csv(c, tmp_path / "cov.csv")
    lines = (tmp_path / "cov.csv").read_text().splitlines()
    assert lines[0] == "i,j,value"
    assert len(lines) == 10
    i, j, v = lines[2].split(",")
    assert (int(i), int(j)) == (0, 1) and float(v) == c.entries[0, 1]
    grf.write_sample_csv(grf.sample_field(grf.chol(c), 1), tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "i,value"
