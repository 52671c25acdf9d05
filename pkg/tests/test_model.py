import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.special import expit, logit

from fuelmix.config import ModelConfig
from fuelmix.data import SurveyObservation, UnUrbanSeries
from fuelmix.distributions import CountVector, GDParams, log_pmf_gdm
from fuelmix.hierarchy import RegionMap
from fuelmix.model import FuelModel
from fuelmix.synth import synthesize_corpus

YEARS = np.arange(1990, 2018)


@pytest.fixture(scope="module")
def corpus():
    return synthesize_corpus(np.random.default_rng(11), n_countries=3, n_regions=2,
                             surveys_per_country=6)


@pytest.fixture(scope="module")
def model(corpus):
    rows = corpus.regions.rows() + [("CX", "R1", "SR1")]
    un = UnUrbanSeries({**corpus.un_urban.values, "CX": np.full(YEARS.size, 0.3)}, YEARS)
    return FuelModel(corpus.records, un, RegionMap.from_rows(rows), extra_countries=("CX",))


@pytest.fixture(scope="module")
def state(model):
    return model.init_state(np.random.default_rng(0))


def single_model(props, N=20, area="urban", P=0.4):
    obs = [SurveyObservation("S1", "A", 2000, area, props)]
    un = UnUrbanSeries({"A": np.full(YEARS.size, P)}, YEARS)
    return FuelModel(obs, un, RegionMap.from_rows([("A", "R", "Q")]), ModelConfig(N=N))


def compositions(n, k):
    for bars in itertools.combinations(range(n + k - 1), k - 1):
        edges = (-1,) + bars + (n + k - 1,)
        yield np.array([edges[i + 1] - edges[i] - 1 for i in range(k)])


class TestMeans:
    def test_zero_coefficients(self, model):
        st0 = model.template_state()
        assert model.relative_mean("gas", "urban", "C01", 2001, st0) == pytest.approx(0.5)

    def test_constant_intercept(self, model):
        st0 = model.template_state()
        st0.beta[model.h.nu_index["wood"], 1, 0, 0] = logit(0.9)
        for y in (1990, 2003, 2017, 2021):
            assert model.relative_mean("wood", "rural", "C01", y, st0) == pytest.approx(0.9)

    def test_monotone_in_intercept(self, model, state):
        st0 = state.copy()
        vals = []
        for b0 in np.linspace(-3, 3, 10):
            st0.beta[0, 0, 1, 0] = b0
            vals.append(model.relative_mean(0, "urban", 1, 2005, st0))
        assert np.all(np.diff(vals) > 0)

    def test_urban_weight_offset_identity(self, model):
        st0 = model.template_state()
        assert model.urban_weight("CX", 2000, st0) == pytest.approx(0.3)

    def test_urban_weight_shift(self):
        m = single_model({"solid": 0.4}, P=0.5)
        st0 = m.template_state()
        st0.kappa[0, 0] = logit(0.8) - logit(0.5)
        assert m.urban_weight("A", 2004, st0) == pytest.approx(0.8)
        assert m.urban_weight("A", 2004, st0, un_offsets_only=True) == pytest.approx(0.5)

    def test_urban_weight_monotone_in_P(self):
        g = 0.7
        vals = []
        for P in np.linspace(0.05, 0.95, 10):
            m = single_model({"solid": 0.4}, P=P)
            st0 = m.template_state()
            st0.kappa[0, 0] = g
            vals.append(m.urban_weight("A", 2000, st0))
        assert np.all(np.diff(vals) > 0)

    def test_overall_at_full_urban(self, model, state):
        st0 = state.copy()
        st0.kappa[2, 0] = 60.0
        mu = model.overall_means("C03", 2008, st0)
        nu = model.area_relative_means("C03", 2008, st0)
        np.testing.assert_allclose(mu, model.h.absolute_means(nu[0]), atol=1e-12)

    def test_overall_equal_areas(self, model, state):
        st0 = state.copy()
        st0.beta[:, 1] = st0.beta[:, 0]
        mu = model.overall_means("C02", 1999, st0)
        nu = model.area_relative_means("C02", 1999, st0)
        np.testing.assert_allclose(mu, model.h.absolute_means(nu[0]), atol=1e-14)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**31), year=st.integers(1990, 2017), c=st.integers(0, 3))
    def test_overall_convexity(self, model, seed, year, c):
        rng = np.random.default_rng(seed)
        st0 = model.init_state(rng, jitter=3.0)
        mu = model.overall_means(c, year, st0)
        nu = model.area_relative_means(c, year, st0)
        mu_u, mu_r = model.h.absolute_means(nu)
        lo, hi = np.minimum(mu_u, mu_r), np.maximum(mu_u, mu_r)
        assert np.all(mu >= lo - 1e-12) and np.all(mu <= hi + 1e-12)

    def test_kernel_mixture_matches_tree(self, model, state):
        rng = np.random.default_rng(3)
        nu_u = rng.uniform(0.01, 0.99, (20, 8))
        nu_r = rng.uniform(0.01, 0.99, (20, 8))
        pi = rng.uniform(0, 1, 20)
        h = model.h
        ref = h.relative_from_absolute(pi[:, None] * h.absolute_means(nu_u)
                                       + (1 - pi[:, None]) * h.absolute_means(nu_r))
        np.testing.assert_allclose(model.mix_relative(nu_u, nu_r, pi), ref, atol=1e-12)


class TestLikelihood:
    def test_top_only_has_four_terms(self):
        m = single_model({"solid": 0.4, "kerosene": 0.1, "gas": 0.3, "electricity": 0.1,
                          "others": 0.1})
        assert m.M == 4
        assert sorted(m.term_pos.tolist()) == [0, 1, 2, 3]

    def test_binomial_limit(self):
        m = single_model({"solid": 0.4, "kerosene": 0.1, "gas": 0.3, "electricity": 0.1,
                          "others": 0.1})
        st0 = m.template_state()
        nu = np.array([0.35, 0.2, 0.45, 0.3])
        st0.beta[:4, 0, 0, 0] = logit(nu)
        st0.log_phi[:] = np.log(1e8)
        st0.rho[:] = 1.0
        v = np.array([8, 2, 6, 2, 2])
        n = 20 - np.concatenate([[0], np.cumsum(v)[:-2]])
        ref = stats.binom.logpmf(v[:-1], n, nu).sum()
        assert m.observation_loglik(0, st0) == pytest.approx(ref, abs=1e-4)

    def test_marginalized_tail(self):
        # only solid and kerosene reported: the likelihood is the GDM marginal
        m = single_model({"solid": 0.4, "kerosene": 0.15})
        st0 = m.template_state()
        nu = np.array([0.3, 0.25, 0.5, 0.6])
        st0.beta[:4, 0, 0, 0] = logit(nu)
        st0.log_phi[:4, 0, 0] = np.log([3.0, 7.0, 2.0, 5.0])
        params = GDParams.from_relative(nu, [3.0, 7.0, 2.0, 5.0])
        total = 0.0
        for rest in compositions(20 - 8 - 3, 3):
            total += np.exp(log_pmf_gdm(CountVector(np.concatenate([[8, 3], rest]), 20), params))
        assert m.loglik(st0) == pytest.approx(np.log(total), abs=1e-10)

    def test_latent_split_enumeration(self):
        # solid, electricity, others reported; kerosene + gas split is latent
        m = single_model({"solid": 0.4, "electricity": 0.15, "others": 0.2})
        assert m.G == 1
        st0 = m.template_state()
        nu = np.array([0.45, 0.3, 0.6, 0.5])
        phi = np.array([4.0, 2.0, 9.0, 3.0])
        st0.beta[:4, 0, 0, 0] = logit(nu)
        st0.log_phi[:4, 0, 0] = np.log(phi)
        params = GDParams.from_relative(nu, phi)
        rec, pos = m.groups_rec[0], m.groups_pos[0, :2]
        model_total, ref_total = 0.0, 0.0
        for ker in range(0, 8):
            counts = st0.counts.copy()
            counts[rec, pos] = [ker, 7 - ker]
            st1 = st0.copy()
            st1.counts = counts
            model_total += np.exp(m.loglik(st1))
            ref_total += np.exp(log_pmf_gdm(CountVector([8, ker, 7 - ker, 3, 2], 20), params))
        assert model_total == pytest.approx(ref_total, rel=1e-10)
        # and the marginal of (solid, {kerosene+gas}, electricity, others)
        # integrates to one over all observable patterns
        grand = 0.0
        for v in compositions(20, 5):
            grand += np.exp(log_pmf_gdm(CountVector(v, 20), params))
        assert grand == pytest.approx(1.0, abs=1e-10)

    def test_outlier_weight_applies_per_survey(self, model, state):
        st0 = state.copy()
        st0.rho[:] = 0.0
        ll = model.term_loglik(st0)
        v, n = model.term_counts(st0.counts)
        np.testing.assert_allclose(ll, -np.log(n + 1), rtol=1e-12)

    def test_finite_for_every_observation(self, model, state):
        for i in range(len(model.observations)):
            assert np.isfinite(model.observation_loglik(i, state))

    def test_overall_uses_mixture(self, corpus):
        recs = [r for r in corpus.records if r.area == "overall"][:1]
        m = FuelModel(recs, corpus.un_urban, corpus.regions)
        st0 = m.init_state(np.random.default_rng(1))
        o = recs[0]
        nu = m.overall_relative_means(o.country, o.year, st0)
        np.testing.assert_allclose(m.term_nu(st0), nu[m.term_node], rtol=1e-10)
        lp = m.term_log_phi(st0)
        c = m.c_index[o.country]
        np.testing.assert_allclose(lp, 0.5 * (st0.log_phi[m.term_node, 0, c]
                                              + st0.log_phi[m.term_node, 1, c]))


class TestPrior:
    def test_mode_sum_against_scipy(self):
        m = single_model({"solid": 0.4, "kerosene": 0.1})
        s = m.template_state()
        s.rho[:] = 0.9
        S, P = m.S, m.P
        pen = m.pen
        norm0 = stats.norm.logpdf(0.0)
        ref = 0.0
        # country/region intercepts and slopes at their means with sd 1
        ref += 2 * 2 * S * 2 * norm0
        # nonlinear blocks (beta, gamma, theta, kappa) at their means with log lambda 0
        mvn = stats.multivariate_normal.logpdf(np.zeros(P - 2), np.zeros(P - 2),
                                               np.diag(1.0 / pen))
        ref += (3 * S * 2 + 1) * mvn
        # theta intercepts/slopes and log lambda_theta, all upsilons: Normal(0, 10^2) at 0
        ref += (3 * S * 2 + 3 * S * 2 + 1) * stats.norm.logpdf(0.0, 0, 10)
        # log lambda effects and log phi at their upsilon means with sd 1
        ref += (S * 2 * 3 + 1) * norm0
        # kappa intercept and slope around zero with sd 1
        ref += 2 * norm0
        # half-normal sigmas at 1
        n_sig = S * 2 * 3 * 2 + S * 2 + 3
        ref += n_sig * stats.halfnorm.logpdf(1.0, scale=10)
        ref += stats.beta.logpdf(0.9, 9, 1)
        assert m.log_prior(s) == pytest.approx(ref, rel=1e-12)

    def test_locality(self, model, state):
        s1 = state.copy()
        d = 0.37
        s, a, c = 2, 1, 1
        s1.beta[s, a, c, 0] += d
        mean = state.gamma[s, a, model.region_of[c], 0]
        sd = state.sig_beta[s, a, 0]
        inc = (stats.norm.logpdf(s1.beta[s, a, c, 0], mean, sd)
               - stats.norm.logpdf(state.beta[s, a, c, 0], mean, sd))
        assert model.log_prior(s1) - model.log_prior(state) == pytest.approx(inc, abs=1e-9)

    def test_sigma_to_zero(self, model, state):
        s1 = state.copy()
        vals = []
        for sd in (1e-2, 1e-5, 1e-9):
            s1.sig_beta[0, 0, 0] = sd
            vals.append(model.log_prior(s1))
        assert vals[0] > vals[1] > vals[2] and vals[2] < -1e10

    def test_invalid_sigma(self, model, state):
        s1 = state.copy()
        s1.sig_phi[0, 0] = -1.0
        assert model.log_posterior(s1) == -np.inf


def perturb(model, block, state, rng):
    s1 = state.copy()
    arr, idx = model.block_slice(block, s1)
    if block[0] == "counts":
        rec, pos = idx
        vals = arr[rec, pos]
        if vals.sum() == 0:
            return None
        j = int(np.argmax(vals))
        k = (j + 1) % vals.size
        step = max(1, vals[j] // 3)
        vals[j] -= step
        vals[k] += step
        arr[rec, pos] = vals
        return s1
    cur = np.asarray(arr[idx], dtype=float)
    if block[0] == "rho":
        arr[idx] = np.clip(cur + rng.normal(0, 0.05), 0.01, 0.99)
    elif block[0].startswith("sig"):
        arr[idx] = cur * np.exp(rng.normal(0, 0.3))
    else:
        arr[idx] = cur + rng.normal(0, 0.3, cur.shape)
    return s1


class TestBlocks:
    def test_block_difference_equals_full_difference(self, model, state):
        rng = np.random.default_rng(5)
        blocks = model.blocks()
        base = model.log_posterior(state)
        checked = 0
        for block in blocks:
            s1 = perturb(model, block, state, rng)
            if s1 is None:
                continue
            full = model.log_posterior(s1) - base
            local = model.log_posterior_block(block, s1) - model.log_posterior_block(block, state)
            assert local == pytest.approx(full, abs=1e-8 * max(1, abs(full))), block
            checked += 1
        assert checked > 0.9 * len(blocks)

    def test_every_parameter_in_exactly_one_block(self, model, state):
        seen = np.zeros(state.flatten().size, dtype=int)
        for block in model.blocks():
            if block[0] == "counts":
                continue
            marker = model.template_state()
            for name in marker.parameter_fields():
                getattr(marker, name)[...] = 0
            arr, idx = model.block_slice(block, marker)
            arr[idx] = 1
            seen += marker.flatten().astype(int)
        np.testing.assert_array_equal(seen, 1)

    def test_country_without_surveys(self, model):
        cx = model.c_index["CX"]
        for part in ("intercept", "linear", "nonlinear"):
            assert model.blanket_terms(("beta", 0, 0, cx, part)).size == 0
        assert model.blanket_terms(("log_phi", 3, 1, cx)).size == 0

    def test_rho_touches_one_survey(self, model):
        for u in range(model.U):
            terms = model.blanket_terms(("rho", u))
            assert terms.size > 0
            assert set(model.term_survey[terms]) == {u}
            assert terms.size == np.sum(model.term_survey == u)

    def test_unknown_block(self, model, state):
        with pytest.raises(KeyError):
            model.log_posterior_block(("nope", 1), state)


class TestAddressing:
    def test_addresses_match_flatten(self, model, state):
        addr = model.addresses()
        assert len(addr) == state.flatten().size
        assert len(set(addr)) == len(addr)
        assert "beta[solid,urban,C01,b0]" in addr
        assert f"rho[{model.surveys[0]}]" in addr

    def test_unflatten_round_trip(self, model, state):
        back = model.unflatten(state.flatten(), state.counts)
        np.testing.assert_array_equal(back.flatten(), state.flatten())
        assert model.log_posterior(back) == model.log_posterior(state)

    def test_deterministic_init(self, model):
        a = model.init_state(np.random.default_rng(9)).flatten()
        b = model.init_state(np.random.default_rng(9)).flatten()
        np.testing.assert_array_equal(a, b)

    def test_tier_sums_of_counts(self, model):
        known = model.counts0 >= 0
        c = np.where(known, model.counts0, 0)
        k = model._tier_k[model.rec_tier]
        full = known.sum(axis=1) == k
        assert full.any()
        np.testing.assert_array_equal(c.sum(axis=1)[full], model.rec_total[full])
        assert np.all(c.sum(axis=1) <= model.rec_total)

    def test_year_outside_range(self, corpus):
        r = corpus.records[0]
        bad = SurveyObservation(r.survey_id, r.country, 2019, r.area, r.proportions)
        with pytest.raises(ValueError):
            FuelModel([bad], corpus.un_urban, corpus.regions)
