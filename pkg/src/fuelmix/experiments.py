"""Synthetic experiments: artificial-sample-size study, calibration and
forecasting checks.

The artificial-sample-size study fits, for many countries, a GDM with a
Dirichlet(1) prior on the marginal means and Exponential(0.001) priors on
the dispersions, once to the true counts (baseline) and once per ``N`` to
the constructed counts ``floor(N x)``.  Under a Dirichlet(1) prior the
stick-breaking relative means are independent Beta(1, k - i) variables and
the GDM factorizes into Beta-Binomial conditionals, so each (country,
component) pair is a separate two-parameter posterior; all of them are
sampled together by vectorized random-walk Metropolis.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from . import kernels
from .config import McmcConfig
from .data import AREAS, select_surveys, tier_counts
from .distributions import marginal_means, sample_gdm_many
from .mcmc import (ScaleAdapter, chain_rng, coverage, observed_items, posterior_replicates,
                   psrf_summary, run_chains, simulate_tiers)
from .model import FuelModel

log = logging.getLogger(__name__)

DEFAULT_N_GRID = (10, 20, 30, 50, 100, 300, 1000, 3000, 10000, 30000, 100000)


# -- artificial sample size study -----------------------------------------------------

@dataclass
class GdmData:
    """Survey counts for the sample-size study: ``y`` (surveys, k) with
    totals ``n`` and owning country ``country``."""

    y: np.ndarray
    n: np.ndarray
    country: np.ndarray
    mu: np.ndarray        # (countries, k) true marginal means
    phi: np.ndarray       # (countries, k-1) true dispersions


def simulate_gdm_surveys(rng, n_countries=50, n_surveys=150, k=4, n_range=(1e3, 1e5),
                         phi_shape=4.0, phi_rate=0.1, n_values=None):
    """Simulate the study's survey counts.

    Marginal means are Dirichlet(1), dispersions Gamma(shape, rate) (one per
    conditional), sample sizes log-uniform over ``n_range`` unless explicit
    ``n_values`` are given (then ``n_surveys = len(n_values)``); every country
    gets at least one survey.
    """
    if n_values is not None:
        n_values = np.asarray(n_values, dtype=np.int64)
        if n_values.ndim != 1 or n_values.size < n_countries or np.any(n_values < 1):
            raise ValueError("n_values must hold at least one positive size per country")
        n_surveys = n_values.size
    mu = rng.dirichlet(np.ones(k), n_countries)
    phi = rng.gamma(phi_shape, 1.0 / phi_rate, (n_countries, k - 1))
    country = np.concatenate([np.arange(n_countries),
                              rng.integers(0, n_countries, max(0, n_surveys - n_countries))])
    lo, hi = np.log(n_range[0]), np.log(n_range[1])
    n = np.round(np.exp(rng.uniform(lo, hi, country.size))).astype(np.int64)
    if n_values is not None:
        n = n_values.copy()
    nu = np.empty((n_countries, k - 1))
    tail = np.cumsum(mu[:, ::-1], axis=1)[:, ::-1]
    nu[:] = mu[:, :-1] / tail[:, :-1]
    alpha = nu[country] * phi[country]
    beta = (1 - nu[country]) * phi[country]
    y = sample_gdm_many(alpha, beta, n, rng)
    return GdmData(y, n, country, mu, phi)


def constructed_counts(y, n, N):
    """``floor(N y / n)`` per category with the remainder in the last one."""
    x = y / n[:, None]
    v = np.floor(N * x[:, :-1] + 1e-7).astype(np.int64)
    return np.column_stack([v, N - v.sum(axis=1)])


def _conditionals(counts):
    """Per-survey Beta-Binomial conditionals ``(v_i, n_i)``, both (surveys, k-1)."""
    before = np.cumsum(counts, axis=1) - counts
    total = counts.sum(axis=1, keepdims=True)
    return counts[:, :-1].astype(float), (total - before[:, :-1]).astype(float)


def _dirichlet_nu_logprior(nu, k):
    # Dirichlet(1) on the marginal means <=> nu_i ~ Beta(1, k - i) (i from 1)
    i = np.arange(1, k)
    return (k - i - 1) * np.log1p(-nu)


def sample_gdm_posterior(counts, country, n_countries, rng, iterations=6000, burn_in=2000,
                         thin=2, phi_rate=0.001, adapt_interval=50, target=0.3):
    """Posterior draws of relative means and dispersions per country.

    Vectorized over all (country, component) pairs, each a two-dimensional
    random walk on ``(logit nu, log phi)`` with Robbins-Monro scaling.

    Returns
    -------
    nu, phi : ndarray, shape (draws, countries, k-1)
    """
    k = counts.shape[1]
    v, n = _conditionals(counts)
    lch = kernels.log_choose(n.ravel(), v.ravel())
    key = (country[:, None] * (k - 1) + np.arange(k - 1)[None, :]).ravel().astype(np.int64)
    P = n_countries * (k - 1)
    vr, nr = v.ravel(), n.ravel()
    ones = np.ones(vr.size)

    def loglik(nu, phi):
        out = np.zeros(P)
        terms = np.empty(vr.size)
        kernels.bb_mix_delta(vr, nr, lch, nu.ravel()[key], phi.ravel()[key], ones,
                             np.zeros(vr.size), key, terms, out, 1e-12)
        return out.reshape(n_countries, k - 1)

    def logpost(y1, y2):
        nu, phi = expit(y1), np.exp(y2)
        jac = np.log(nu) + np.log1p(-nu) + y2
        return loglik(nu, phi) + _dirichlet_nu_logprior(nu, k) - phi_rate * phi + jac

    shape = (n_countries, k - 1)
    emp = np.clip((v.sum(0) + 1) / (n.sum(0) + 2), 0.01, 0.99)
    y1 = np.broadcast_to(logit(emp), shape).copy() + rng.normal(0, 0.1, shape)
    y2 = np.log(30.0) + rng.normal(0, 0.1, shape)
    lp = logpost(y1, y2)
    ad1, ad2 = ScaleAdapter(np.full(shape, 0.2), target), ScaleAdapter(np.full(shape, 0.3), target)
    keep_nu, keep_phi = [], []
    for it in range(iterations):
        for ad, which in ((ad1, 0), (ad2, 1)):
            z = rng.standard_normal(shape) * ad.scale
            p1, p2 = (y1 + z, y2) if which == 0 else (y1, y2 + z)
            lp_new = logpost(p1, p2)
            acc = np.log(rng.random(shape)) < lp_new - lp
            if which == 0:
                y1 = np.where(acc, p1, y1)
            else:
                y2 = np.where(acc, p2, y2)
            lp = np.where(acc, lp_new, lp)
            ad.record(acc)
            ad.tick()
        if it < burn_in and (it + 1) % adapt_interval == 0:
            ad1.adapt()
            ad2.adapt()
        if it + 1 == burn_in:
            ad1.freeze()
            ad2.freeze()
        if it >= burn_in and (it - burn_in) % thin == thin - 1:
            keep_nu.append(expit(y1))
            keep_phi.append(np.exp(y2))
    return np.array(keep_nu), np.array(keep_phi)


@dataclass
class SampleSizeStudy:
    """Summaries of the artificial-sample-size study.

    ``sd[N]`` and ``mse[N]`` hold posterior SDs of every ``mu[c, j]`` and the
    posterior mean squared error of every country; ``"baseline"`` keys the
    fit to the true counts.
    """

    n_grid: tuple
    sd: dict
    mse: dict
    quantiles: dict
    mse_draws: dict = field(repr=False, default_factory=dict)

    def sd_discrepancy(self, N):
        return float(np.median(np.abs(self.sd[N] - self.sd["baseline"])))

    def mse_discrepancy(self, N):
        return float(np.median(np.abs(self.mse[N] - self.mse["baseline"])))

    def quantile_correlation(self, N):
        """Correlation of the stacked 2.5/50/97.5% quantiles with the baseline."""
        a = self.quantiles[N].ravel()
        b = self.quantiles["baseline"].ravel()
        return float(np.corrcoef(a, b)[0, 1])

    def table(self):
        rows = []
        for N in ("baseline",) + tuple(self.n_grid):
            rows.append({
                "N": N,
                "median_sd": float(np.median(self.sd[N])),
                "median_mse": float(np.median(self.mse_draws[N])),
                "mse_q025": float(np.quantile(self.mse_draws[N], 0.025)),
                "mse_q975": float(np.quantile(self.mse_draws[N], 0.975)),
                "sd_discrepancy": 0.0 if N == "baseline" else self.sd_discrepancy(N),
                "mse_discrepancy": 0.0 if N == "baseline" else self.mse_discrepancy(N),
            })
        return rows


def sample_size_study(seed=1, n_grid=(10, 100, 1000, 10000, 100000), n_countries=50,
                      n_surveys=150, k=4, iterations=6000, burn_in=2000, thin=2,
                      n_values=None):
    """Fit the baseline and every constructed-count model; summarize ``mu``.

    The same MCMC seed is used for every fit (common random numbers), which
    keeps the comparison across ``N`` free of independent Monte Carlo noise.
    """
    data = simulate_gdm_surveys(np.random.default_rng(seed), n_countries, n_surveys, k,
                                n_values=n_values)
    fits = {"baseline": data.y}
    for N in n_grid:
        fits[N] = constructed_counts(data.y, data.n, int(N))
    sd, mse, quant, mse_draws = {}, {}, {}, {}
    for key, counts in fits.items():
        rng = np.random.default_rng([seed, 7])
        nu, _ = sample_gdm_posterior(counts, data.country, n_countries, rng, iterations,
                                     burn_in, thin)
        mu = marginal_means(nu)                               # (draws, C, k)
        sd[key] = mu.std(axis=0, ddof=1)
        err = ((mu - data.mu[None]) ** 2).mean(axis=2)        # (draws, C)
        mse[key] = err.mean(axis=0)
        mse_draws[key] = err
        quant[key] = np.quantile(mu, [0.025, 0.5, 0.975], axis=0)
        log.info("sample-size study: fitted %s", key)
    return SampleSizeStudy(tuple(n_grid), sd, mse, quant, mse_draws)


# -- calibration on a simulated corpus ------------------------------------------------------

@dataclass
class CalibrationResult:
    coverage: float
    n_items: int
    outlier_rho: dict
    median_rho: float
    outlier_fraction_below: float
    psrf_fraction: float
    psrf_max: float
    draws: object = field(repr=False, default=None)
    model: object = field(repr=False, default=None)


def fit_corpus(corpus, mcmc, model_config=None, year_max=None):
    """Fit the model to a synthetic corpus (optionally only up to ``year_max``)."""
    recs = corpus.records if year_max is None else [r for r in corpus.records
                                                     if r.year <= year_max]
    kept, _ = select_surveys(recs)
    model = FuelModel(kept, corpus.un_urban, corpus.regions, model_config,
                      extra_countries=corpus.countries)
    return model, run_chains(model, mcmc)


def calibration_check(corpus, mcmc, model_config=None, seed=0, level=0.95, max_draws=1000):
    """In-sample coverage, outlier down-weighting and convergence."""
    model, draws = fit_corpus(corpus, mcmc, model_config)
    rng = np.random.default_rng(seed)
    oi, ni, val = observed_items(model)
    rep = posterior_replicates(draws, model, rng, max_draws=max_draws)
    cov = coverage(rep[:, oi, ni], val, level)
    rho_idx = [draws.index(f"rho[{u}]") for u in model.surveys]
    rho = draws.pooled()[:, rho_idx].mean(axis=0)
    med = float(np.median(rho))
    out = {u: float(rho[model.u_index[u]]) for u in sorted(corpus.outlier_surveys)
           if u in model.u_index}
    below = float(np.mean([r < med for r in out.values()])) if out else float("nan")
    ps = psrf_summary(draws, model, split=mcmc.split_psrf)
    return CalibrationResult(cov, int(val.size), out, med, below, ps["fraction_below"],
                             ps["max"], draws, model)


# -- forecasting ---------------------------------------------------------------------------

def record_items(model, records):
    """Observed items of arbitrary records: (record index, node index, value)."""
    h, N = model.h, model.cfg.N
    ri, ni, val = [], [], []
    for i, r in enumerate(records):
        for tc in tier_counts(r, h, N):
            tier = h.tiers[tc.tier]
            for p, child in enumerate(tier.children):
                if tc.observed[p]:
                    ri.append(i)
                    ni.append(h.node_index[child])
                    val.append(tc.counts[p] / N)
    return np.array(ri, dtype=np.int64), np.array(ni, dtype=np.int64), np.array(val)


def record_replicates(draws, model, records, rng, max_draws=1000):
    """Predictive replicate proportions (draws, records, nodes) for urban or
    rural records at any year (extrapolating the trends beyond the grid)."""
    if any(r.area == "overall" for r in records):
        raise ValueError("predictive replicates are produced for urban/rural records only")
    years = np.array([r.year for r in records])
    uy, inv = np.unique(years, return_inverse=True)
    c = np.array([model.c_index[r.country] for r in records])
    a = np.array([AREAS.index(r.area) for r in records])
    Dy = model.basis.full_design(uy)
    pooled = draws.pooled()
    if pooled.shape[0] > max_draws:
        pooled = pooled[np.linspace(0, pooled.shape[0] - 1, max_draws).round().astype(int)]
    out = np.empty((pooled.shape[0], len(records), len(model.h.nodes)))
    for d, flat in enumerate(pooled):
        st = model.unflatten(flat)
        tr = st.beta[:, a, c, :]                              # (S, R, P)
        nu = model.clamp_nu(expit(np.einsum("srp,rp->rs", tr, Dy[inv])))
        lphi = st.log_phi[:, a, c].T
        out[d] = simulate_tiers(model.h, model.cfg.N, nu, lphi, rng) / model.cfg.N
    return out


@dataclass
class ForecastResult:
    cutoff: int
    coverage: float
    n_items: int
    lead_coverage: dict
    lead_median_width: dict
    lead_count: dict = field(default_factory=dict)
    items: list = field(default_factory=list, repr=False)

    @property
    def widths_non_decreasing(self):
        w = [self.lead_median_width[k] for k in sorted(self.lead_median_width)]
        return bool(all(b >= a for a, b in zip(w, w[1:])))

    def series_monotone_fraction(self):
        """Fraction of (country, area, fuel) series with at least two leads
        whose median interval width never decreases with lead time."""
        by = {}
        for it in self.items:
            by.setdefault((it["country"], it["area"], it["fuel"]), {}).setdefault(
                it["lead"], []).append(it["upper"] - it["lower"])
        flags = []
        for leads in by.values():
            if len(leads) < 2:
                continue
            w = [np.median(leads[k]) for k in sorted(leads)]
            flags.append(all(b >= a - 1e-12 for a, b in zip(w, w[1:])))
        return float(np.mean(flags)) if flags else float("nan")


def forecast_check(corpus, mcmc, cutoff=2012, horizon=5, model_config=None, seed=0,
                   level=0.95, max_draws=1000, draws=None, model=None):
    """Fit to surveys up to ``cutoff``; score urban/rural surveys in the next
    ``horizon`` years by predictive coverage and interval width per lead."""
    if draws is None:
        model, draws = fit_corpus(corpus, mcmc, model_config, year_max=cutoff)
    held = [r for r in corpus.records
            if cutoff < r.year <= cutoff + horizon and r.area != "overall"]
    held, _ = select_surveys(held)
    held = [r for r in held if r.country in model.c_index]
    rng = np.random.default_rng(seed)
    ri, ni, val = record_items(model, held)
    if val.size == 0:
        return ForecastResult(cutoff, float("nan"), 0, {}, {})
    rep = record_replicates(draws, model, held, rng, max_draws)[:, ri, ni]
    lo, hi = np.quantile(rep, [(1 - level) / 2, (1 + level) / 2], axis=0)
    inside = (val >= lo) & (val <= hi)
    lead = np.array([held[i].year - cutoff for i in ri])
    width = hi - lo
    lead_cov = {int(k): float(inside[lead == k].mean()) for k in np.unique(lead)}
    lead_w = {int(k): float(np.median(width[lead == k])) for k in np.unique(lead)}
    lead_n = {int(k): int(np.sum(lead == k)) for k in np.unique(lead)}
    mean = rep.mean(axis=0)
    items = [{"survey_id": held[i].survey_id, "country": held[i].country,
              "year": held[i].year, "area": held[i].area, "fuel": model.h.nodes[j],
              "lead": int(ld), "observed": float(v), "predicted_mean": float(mu),
              "lower": float(a), "upper": float(b), "inside": bool(ins)}
             for i, j, ld, v, mu, a, b, ins in zip(ri, ni, lead, val, mean, lo, hi, inside)]
    return ForecastResult(cutoff, float(inside.mean()) if inside.size else float("nan"),
                          int(val.size), lead_cov, lead_w, lead_n, items)


def desk_mcmc(**kw):
    """Desk-scale sampler settings used by the acceptance experiments."""
    base = dict(chains=4, iterations=8000, burn_in=4000, thin=4, seed=1)
    base.update(kw)
    return McmcConfig(**base)
