import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.special import gammaln

from fuelmix.distributions import (
    CountVector, DomainError, GDParams, dirichlet_as_gd, log_pdf_dirichlet, log_pdf_gd,
    log_pmf_beta_binomial, log_pmf_dirichlet_multinomial, log_pmf_gdm, log_pmf_gdm_chain,
    log_pmf_outlier_mixture, marginal_means, relative_means_from_marginal, reparam,
    sample_gdm, sample_gdm_many)


def compositions(n, k):
    """All non-negative integer vectors of length k summing to n."""
    for bars in itertools.combinations(range(n + k - 1), k - 1):
        edges = (-1,) + bars + (n + k - 1,)
        yield np.array([edges[i + 1] - edges[i] - 1 for i in range(k)])


def brute_gdm_pmf(v, alpha, beta):
    """GDM mass as an explicit product of Beta-Binomial factors built from gammaln."""
    out = 0.0
    left = int(np.sum(v))
    for i in range(len(alpha)):
        n, x = left, int(v[i])
        out += (gammaln(n + 1) - gammaln(x + 1) - gammaln(n - x + 1)
                + gammaln(x + alpha[i]) + gammaln(n - x + beta[i]) - gammaln(n + alpha[i] + beta[i])
                - gammaln(alpha[i]) - gammaln(beta[i]) + gammaln(alpha[i] + beta[i]))
        left -= x
    return out


positive = st.floats(0.05, 20.0)


class TestReparam:
    def test_examples(self):
        assert reparam(0.5, 2.0) == (1.0, 1.0)
        assert reparam(0.25, 4.0) == (1.0, 3.0)

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        nu = rng.uniform(0.01, 0.99, 100)
        phi = rng.lognormal(2.0, 1.0, 100)
        a, b = reparam(nu, phi)
        np.testing.assert_allclose(a / (a + b), nu, rtol=1e-13)
        np.testing.assert_allclose(a + b, phi, rtol=1e-13)

    @pytest.mark.parametrize("nu,phi", [(0.0, 1.0), (1.0, 1.0), (0.5, 0.0), (0.5, -2.0)])
    def test_domain(self, nu, phi):
        with pytest.raises(DomainError):
            reparam(nu, phi)


class TestMarginalMeans:
    def test_halves(self):
        np.testing.assert_allclose(marginal_means([0.5, 0.5, 0.5]), [0.5, 0.25, 0.125, 0.125])

    def test_limit(self):
        eps = 1e-12
        np.testing.assert_allclose(marginal_means([1 - eps, 1 - eps]), [1, 0, 0], atol=1e-11)

    def test_inverse_examples(self):
        np.testing.assert_allclose(relative_means_from_marginal([0.5, 0.25, 0.125, 0.125]),
                                   [0.5, 0.5, 0.5])
        k = 5
        np.testing.assert_allclose(relative_means_from_marginal(np.full(k, 1.0 / k)),
                                   [1.0 / (k - j + 1) for j in range(1, k)])

    def test_round_trip_random(self):
        rng = np.random.default_rng(1)
        nu = rng.uniform(0.01, 0.99, (100, 4))
        np.testing.assert_allclose(relative_means_from_marginal(marginal_means(nu)), nu,
                                   rtol=1e-12)

    def test_inverse_domain(self):
        with pytest.raises(DomainError):
            relative_means_from_marginal([1.0, 0.0, 0.0])

    @given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=6))
    def test_simplex_closure(self, nu):
        mu = marginal_means(nu)
        assert np.all(mu >= 0)
        assert abs(mu.sum() - 1.0) < 1e-12


class TestGDDensity:
    def test_uniform_beta(self):
        assert log_pdf_gd([0.3, 0.7], GDParams([1.0], [1.0])) == pytest.approx(0.0, abs=1e-14)

    def test_dirichlet_reduction(self):
        rng = np.random.default_rng(2)
        conc = np.array([1.5, 0.7, 3.0, 2.2])
        params = dirichlet_as_gd(conc)
        # the reduction condition beta_i = alpha_{i+1} + beta_{i+1}, beta_{k-1} = alpha_k
        np.testing.assert_allclose(params.beta[:-1], params.alpha[1:] + params.beta[1:])
        assert params.beta[-1] == conc[-1]
        p = rng.dirichlet(np.ones(4), 100)
        p /= p.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(log_pdf_gd(p, params), stats.dirichlet.logpdf(p.T, conc),
                                   atol=1e-8)

    def test_integrates_to_one(self):
        # importance sampling with a uniform Dirichlet proposal (density 2 on the 2-simplex)
        rng = np.random.default_rng(3)
        params = GDParams([2.0, 3.0], [1.0, 2.0])
        p = rng.dirichlet(np.ones(3), 400000)
        p /= p.sum(axis=1, keepdims=True)
        w = np.exp(log_pdf_gd(p, params)) / 2.0
        se = w.std() / np.sqrt(w.size)
        assert abs(w.mean() - 1.0) < 4 * se

    def test_domain_errors(self):
        params = GDParams([1.0, 1.0], [1.0, 1.0])
        with pytest.raises(DomainError):
            log_pdf_gd([0.0, 0.5, 0.5], params)
        with pytest.raises(DomainError):
            log_pdf_gd([0.2, 0.2, 0.2], params)
        with pytest.raises(DomainError):
            log_pdf_gd([0.5, 0.5], params)


class TestBetaBinomial:
    def test_uniform(self):
        np.testing.assert_allclose(log_pmf_beta_binomial(np.arange(11), 1.0, 1.0, 10),
                                   np.full(11, -np.log(11)), rtol=1e-13)

    def test_sums_to_one(self):
        total = np.exp(log_pmf_beta_binomial(np.arange(6), 2.3, 0.7, 5)).sum()
        assert total == pytest.approx(1.0, abs=1e-13)

    def test_binomial_limit(self):
        a, b = reparam(0.3, 1e8)
        v = np.arange(51)
        np.testing.assert_allclose(log_pmf_beta_binomial(v, a, b, 50),
                                   stats.binom.logpmf(v, 50, 0.3), atol=1e-4)

    def test_matches_scipy(self):
        v = np.arange(31)
        np.testing.assert_allclose(log_pmf_beta_binomial(v, 1.7, 4.2, 30),
                                   stats.betabinom.logpmf(v, 30, 1.7, 4.2), rtol=1e-10)

    def test_large_n_finite(self):
        assert np.isfinite(log_pmf_beta_binomial(400000, 50.0, 50.0, 1000000))

    @pytest.mark.parametrize("v", [-1, 11])
    def test_domain(self, v):
        with pytest.raises(DomainError):
            log_pmf_beta_binomial(v, 1.0, 1.0, 10)


class TestOutlierMixture:
    def test_endpoints(self):
        v = np.arange(21)
        lbb = log_pmf_beta_binomial(v, 2.0, 5.0, 20)
        np.testing.assert_allclose(log_pmf_outlier_mixture(v, 2.0, 5.0, 20, 1.0), lbb)
        np.testing.assert_allclose(log_pmf_outlier_mixture(v, 2.0, 5.0, 20, 0.0),
                                   np.full(21, -np.log(21)))

    def test_half_uniform(self):
        assert log_pmf_outlier_mixture(4, 1.0, 1.0, 9, 0.5) == pytest.approx(np.log(0.1))

    def test_normalized(self):
        total = np.exp(log_pmf_outlier_mixture(np.arange(16), 0.8, 3.1, 15, 0.37)).sum()
        assert total == pytest.approx(1.0, abs=1e-12)

    @given(v=st.integers(0, 30), a=positive, b=positive,
           r1=st.floats(0.0, 1.0), r2=st.floats(0.0, 1.0))
    def test_monotone_in_rho(self, v, a, b, r1, r2):
        lo, hi = sorted((r1, r2))
        lbb = log_pmf_beta_binomial(v, a, b, 30)
        lu = -np.log(31)
        m_lo = log_pmf_outlier_mixture(v, a, b, 30, lo)
        m_hi = log_pmf_outlier_mixture(v, a, b, 30, hi)
        if lbb > lu:
            assert m_hi >= m_lo - 1e-12
        else:
            assert m_hi <= m_lo + 1e-12

    def test_domain(self):
        with pytest.raises(DomainError):
            log_pmf_outlier_mixture(1, 1.0, 1.0, 4, 1.5)


class TestGDM:
    @pytest.mark.parametrize("k", [2, 3, 4])
    @pytest.mark.parametrize("n", [0, 1, 4, 8])
    def test_normalization(self, k, n):
        rng = np.random.default_rng(10 * k + n)
        params = GDParams(rng.uniform(0.2, 4.0, k - 1), rng.uniform(0.2, 4.0, k - 1))
        total = sum(np.exp(log_pmf_gdm(CountVector(v, n), params)) for v in compositions(n, k))
        assert total == pytest.approx(1.0, abs=1e-10)

    def test_enumeration_n4_k3(self):
        params = GDParams([1.3, 0.4], [2.0, 0.9])
        masses = [np.exp(log_pmf_gdm(CountVector(v, 4), params)) for v in compositions(4, 3)]
        assert len(masses) == 15
        assert sum(masses) == pytest.approx(1.0, abs=1e-12)

    def test_k2_is_beta_binomial(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            a, b = rng.uniform(0.1, 10.0, 2)
            v1 = int(rng.integers(0, 21))
            got = log_pmf_gdm(CountVector([v1, 20 - v1], 20), GDParams([a], [b]))
            assert got == pytest.approx(float(log_pmf_beta_binomial(v1, a, b, 20)), abs=1e-10)

    def test_dirichlet_multinomial_reduction(self):
        conc = np.array([0.9, 2.5, 1.1, 4.0])
        params = dirichlet_as_gd(conc)
        for v in compositions(7, 4):
            assert log_pmf_gdm(CountVector(v, 7), params) == pytest.approx(
                log_pmf_dirichlet_multinomial(v, conc), abs=1e-10)

    def test_dirichlet_multinomial_reference_against_scipy(self):
        conc = np.array([0.9, 2.5, 1.1])
        v = np.array([3, 1, 2])
        ref = stats.dirichlet_multinomial.logpmf(v, conc, 6)
        assert log_pmf_dirichlet_multinomial(v, conc) == pytest.approx(ref, abs=1e-12)

    def test_brute_force_values(self):
        params = GDParams([2.0, 0.5, 1.5], [1.0, 3.0, 0.8])
        for v in compositions(6, 4):
            assert log_pmf_gdm(CountVector(v, 6), params) == pytest.approx(
                brute_gdm_pmf(v, params.alpha, params.beta), abs=1e-10)

    @settings(max_examples=60)
    @given(k=st.integers(2, 5), n=st.integers(0, 60), seed=st.integers(0, 2**31),
           data=st.data())
    def test_chain_rule(self, k, n, seed, data):
        rng = np.random.default_rng(seed)
        params = GDParams(rng.uniform(0.05, 20, k - 1), rng.uniform(0.05, 20, k - 1))
        v = rng.multinomial(n, rng.dirichlet(np.ones(k)))
        cv = CountVector(v, n)
        assert log_pmf_gdm(cv, params) == pytest.approx(log_pmf_gdm_chain(cv, params), abs=1e-10)

    def test_large_n(self):
        params = GDParams.from_relative([0.3, 0.4], [50.0, 80.0])
        cv = CountVector([300000, 280000, 420000], 1000000)
        assert np.isfinite(log_pmf_gdm(cv, params))

    def test_length_mismatch(self):
        with pytest.raises(DomainError):
            log_pmf_gdm(CountVector([1, 2], 3), GDParams([1.0, 1.0], [1.0, 1.0]))

    def test_count_vector_total(self):
        with pytest.raises(DomainError):
            CountVector([1, 2], 4)


class TestSampling:
    def test_zero_trials(self):
        out = sample_gdm(GDParams([1.0, 2.0], [1.0, 1.0]), 0, np.random.default_rng(0))
        np.testing.assert_array_equal(out.v, [0, 0, 0])

    def test_chi_square_against_pmf(self):
        rng = np.random.default_rng(5)
        params = GDParams([1.5, 0.8], [2.0, 1.2])
        n, draws = 5, 1000000
        alpha = np.broadcast_to(params.alpha, (draws, 2))
        beta = np.broadcast_to(params.beta, (draws, 2))
        v = sample_gdm_many(alpha, beta, np.full(draws, n), rng)
        cells = list(compositions(n, 3))
        code = v[:, 0] * 36 + v[:, 1] * 6 + v[:, 2]
        observed = np.array([(code == c[0] * 36 + c[1] * 6 + c[2]).sum() for c in cells])
        expected = draws * np.exp([log_pmf_gdm(CountVector(c, n), params) for c in cells])
        assert observed.sum() == draws
        p = stats.chisquare(observed, expected).pvalue
        assert p > 0.01

    def test_single_draw_matches_vectorized_law(self):
        rng = np.random.default_rng(6)
        params = GDParams([2.0], [3.0])
        v = np.array([sample_gdm(params, 4, rng).v[0] for _ in range(20000)])
        expected = 20000 * np.exp(log_pmf_beta_binomial(np.arange(5), 2.0, 3.0, 4))
        observed = np.bincount(v, minlength=5)
        assert stats.chisquare(observed, expected).pvalue > 0.01

    def test_concentrated_mean(self):
        rng = np.random.default_rng(7)
        params = GDParams([1e8, 1e8], [1e8, 1e8])
        n, draws = 100, 4000
        v1 = np.array([sample_gdm(params, n, rng).v[0] for _ in range(draws)])
        sd = np.sqrt(0.25 / n / draws)
        assert abs(v1.mean() / n - 0.5) < 3 * sd

    def test_sums(self):
        rng = np.random.default_rng(8)
        out = sample_gdm(GDParams([0.5, 0.5, 0.5], [0.5, 0.5, 0.5]), 37, rng)
        assert out.v.sum() == 37


class TestDirichletHelpers:
    def test_log_pdf_dirichlet(self):
        p = np.array([0.2, 0.3, 0.5])
        conc = np.array([2.0, 1.5, 3.0])
        assert log_pdf_dirichlet(p, conc) == pytest.approx(stats.dirichlet.logpdf(p, conc))
