"""Tiered GDM model with nested spline random effects.

Layout of the latent state (``S`` relative-mean nodes, areas urban/rural,
``C`` countries, ``R`` regions, ``Q`` super-regions, ``P = K + 1`` spline
coefficients per trend: intercept, linear, ``K - 1`` nonlinear):

* ``beta``  (S, 2, C, P) country trends; ``gamma`` (S, 2, R, P) regional;
  ``theta`` (S, 2, Q, P) super-regional, each with a log smoothing parameter.
* ``log_phi`` (S, 2, C) Beta-Binomial dispersions.
* ``kappa`` (C, P) urban-share deviation splines ``g_c(t)``.
* ``rho`` (U,) per-survey weight of the Beta-Binomial component.
* hyperparameters ``ups_*`` (means of log-lambda / log-phi effects) and
  ``sig_*`` (standard deviations).
* ``counts`` (records, kmax) tier counts including imputed entries.

The likelihood is a sum of *terms*, one per (observation, tier, position)
conditional Beta-Binomial mixture.
"""

from dataclasses import dataclass, fields

import numpy as np
from scipy.special import expit, logit

from . import kernels
from .config import ModelConfig
from .data import AREAS, tier_counts
from .hierarchy import FuelHierarchy
from .splines import build_thin_plate_basis, mvn_penalty_logpdf

URBAN, RURAL, OVERALL = 0, 1, 2
_LOG2PI = np.log(2 * np.pi)

COEF_PARTS = ("intercept", "linear", "nonlinear")


def normal_logpdf(x, mean, sd):
    z = (x - mean) / sd
    with np.errstate(invalid="ignore", divide="ignore"):
        return -0.5 * z * z - np.log(sd) - 0.5 * _LOG2PI


def halfnormal_logpdf(x, sd):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.log(2.0) + normal_logpdf(x, 0.0, sd)
    return np.where(x > 0, out, -np.inf)


def beta_logpdf(x, a, b):
    from scipy.special import betaln
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (a - 1) * np.log(x) + (b - 1) * np.log1p(-x) - betaln(a, b)
    return np.where((x > 0) & (x < 1), out, -np.inf)


@dataclass
class ModelState:
    beta: np.ndarray
    log_lam_beta: np.ndarray
    gamma: np.ndarray
    log_lam_gamma: np.ndarray
    theta: np.ndarray
    log_lam_theta: np.ndarray
    log_phi: np.ndarray
    rho: np.ndarray
    kappa: np.ndarray
    log_lam_kappa: np.ndarray
    ups_beta: np.ndarray
    sig_beta: np.ndarray
    ups_gamma: np.ndarray
    sig_gamma: np.ndarray
    ups_phi: np.ndarray
    sig_phi: np.ndarray
    ups_kappa: np.ndarray
    sig_kappa: np.ndarray
    counts: np.ndarray

    def copy(self):
        return ModelState(**{f.name: getattr(self, f.name).copy() for f in fields(self)})

    @classmethod
    def parameter_fields(cls):
        """Continuous fields, in storage order (``counts`` excluded)."""
        return [f.name for f in fields(cls) if f.name != "counts"]

    def flatten(self):
        return np.concatenate([getattr(self, n).ravel() for n in self.parameter_fields()])

    def assert_valid(self):
        for n in ("sig_beta", "sig_gamma", "sig_phi", "sig_kappa"):
            if np.any(getattr(self, n) <= 0):
                raise ValueError(f"{n} must be positive")
        if np.any((self.rho < 0) | (self.rho > 1)):
            raise ValueError("rho must lie in [0, 1]")


@dataclass
class UrbanLayer:
    """Urban-share layer of one state: ``logit(pi) = logit(P) + g_c(t)``."""

    kappa: np.ndarray
    log_lam_kappa: np.ndarray
    logit_offsets: np.ndarray   # (C, T) clamped logit of the UN shares
    ups_kappa: float
    sig_kappa: np.ndarray


class FuelModel:
    """Assembled model for a fixed set of (selected) survey observations."""

    def __init__(self, observations, un_urban, regions, config=None, hierarchy=None,
                 extra_countries=()):
        self.cfg = config or ModelConfig()
        self.h = hierarchy or FuelHierarchy.default()
        cfg = self.cfg
        self.years = np.arange(cfg.year_min, cfg.year_max + 1)
        self.T = self.years.size
        self.basis = build_thin_plate_basis(self.years, cfg.K)
        self.D = self.basis.full_design()
        self.P = self.D.shape[1]
        self.pen = self.basis.penalty_diag
        self.S = self.h.S
        h = self.h
        self._tier_k = np.array([t.k for t in h.tiers], dtype=np.int64)
        self._tier_parent = np.array([-1 if t.parent is None else h.node_index[t.parent]
                                      for t in h.tiers], dtype=np.int64)
        self._tier_nu = np.array([h.nu_index[c] for t in h.tiers for c in t.children[:-1]],
                                 dtype=np.int64)
        self._tier_nodes = np.array([h.node_index[c] for t in h.tiers for c in t.children],
                                    dtype=np.int64)

        self.observations = list(observations)
        self.countries = sorted({o.country for o in self.observations} | set(extra_countries))
        self.c_index = {c: i for i, c in enumerate(self.countries)}
        self.regions_map = regions
        region_of = [regions.region(c) for c in self.countries]
        self.regions = sorted(set(region_of))
        self.r_index = {r: i for i, r in enumerate(self.regions)}
        self.supers = sorted({regions.super_region(r) for r in self.regions})
        self.q_index = {q: i for i, q in enumerate(self.supers)}
        self.region_of = np.array([self.r_index[r] for r in region_of], dtype=np.int64)
        self.super_of = np.array([self.q_index[regions.super_region(r)] for r in self.regions],
                                 dtype=np.int64)
        self.C, self.R, self.Q = len(self.countries), len(self.regions), len(self.supers)

        self.un_urban = un_urban
        un_urban.require(self.countries)
        P = np.array([[un_urban.value(c, y) for y in self.years] for c in self.countries])
        P = np.clip(P, cfg.urban_clamp, 1 - cfg.urban_clamp).reshape(self.C, self.T)
        self.logit_P = logit(P)

        self.surveys = sorted({o.survey_id for o in self.observations})
        self.u_index = {u: i for i, u in enumerate(self.surveys)}
        self.U = len(self.surveys)
        self._build_terms()

    # -- data layout -----------------------------------------------------------------

    def _build_terms(self):
        cfg, h = self.cfg, self.h
        obs_c, obs_t, obs_a, obs_u = [], [], [], []
        rec_obs, rec_tier, rec_total, rec_counts, rec_observed = [], [], [], [], []
        terms = {k: [] for k in ("rec", "pos", "node", "obs")}
        groups_rec, groups_pos = [], []
        self.ov_rows = []  # observation index of each overall row
        ov_row_of = {}
        kmax = h.kmax
        for oi, o in enumerate(self.observations):
            if not cfg.year_min <= o.year <= cfg.year_max:
                raise ValueError(f"survey {o.survey_id}: year {o.year} outside the fitting range")
            obs_c.append(self.c_index[o.country])
            obs_t.append(o.year - cfg.year_min)
            obs_a.append(AREAS.index(o.area))
            obs_u.append(self.u_index[o.survey_id])
            if o.area == "overall":
                ov_row_of[oi] = len(self.ov_rows)
                self.ov_rows.append(oi)
            for tc in tier_counts(o, h, cfg.N):
                q = len(rec_obs)
                rec_obs.append(oi)
                rec_tier.append(tc.tier)
                rec_total.append(tc.total)
                padded = np.full(kmax, -1, dtype=np.int64)
                padded[: tc.counts.size] = tc.counts
                rec_counts.append(padded)
                obsmask = np.zeros(kmax, dtype=bool)
                obsmask[: tc.observed.size] = tc.observed
                rec_observed.append(obsmask)
                tier = h.tiers[tc.tier]
                for p in tc.terms:
                    terms["rec"].append(q)
                    terms["pos"].append(p)
                    terms["node"].append(h.nu_index[tier.children[p]])
                    terms["obs"].append(oi)
                if tc.latent:
                    groups_rec.append(q)
                    groups_pos.append(tc.latent)
        self.obs_country = np.array(obs_c, dtype=np.int64)
        self.obs_t = np.array(obs_t, dtype=np.int64)
        self.obs_area = np.array(obs_a, dtype=np.int64)
        self.obs_survey = np.array(obs_u, dtype=np.int64)
        self.ov_rows = np.array(self.ov_rows, dtype=np.int64)
        self.rec_obs = np.array(rec_obs, dtype=np.int64)
        self.rec_tier = np.array(rec_tier, dtype=np.int64)
        self.rec_total = np.array(rec_total, dtype=np.int64)
        self.counts0 = (np.array(rec_counts, dtype=np.int64).reshape(-1, kmax))
        self.rec_observed = np.array(rec_observed, dtype=bool).reshape(-1, kmax)

        self.term_rec = np.array(terms["rec"], dtype=np.int64)
        self.term_pos = np.array(terms["pos"], dtype=np.int64)
        self.term_node = np.array(terms["node"], dtype=np.int64)
        self.term_obs = np.array(terms["obs"], dtype=np.int64)
        self.term_country = self.obs_country[self.term_obs]
        self.term_t = self.obs_t[self.term_obs]
        self.term_area = self.obs_area[self.term_obs]
        self.term_survey = self.obs_survey[self.term_obs]
        self.M = self.term_rec.size
        self.direct = np.flatnonzero(self.term_area != OVERALL)
        self.overall = np.flatnonzero(self.term_area == OVERALL)
        ov_row = np.full(self.M, -1, dtype=np.int64)
        for i in self.overall:
            ov_row[i] = ov_row_of[self.term_obs[i]]
        self.term_ov_row = ov_row
        self.ov_country = self.obs_country[self.ov_rows] if self.ov_rows.size else np.zeros(0, np.int64)
        self.ov_t = self.obs_t[self.ov_rows] if self.ov_rows.size else np.zeros(0, np.int64)

        self.groups_rec = np.array(groups_rec, dtype=np.int64)
        self.G = len(groups_rec)
        gp = np.full((self.G, kmax), -1, dtype=np.int64)
        for g, pos in enumerate(groups_pos):
            gp[g, : len(pos)] = pos
        self.groups_pos = gp
        self.groups_size = np.array([len(p) for p in groups_pos], dtype=np.int64)
        self.group_of_rec = np.full(len(rec_obs), -1, dtype=np.int64)
        self.group_of_rec[self.groups_rec] = np.arange(self.G)

    def term_counts(self, counts):
        """``(v, n)`` for every term from a (records, kmax) count table."""
        c = np.where(counts < 0, 0, counts)
        before = np.cumsum(c, axis=1) - c
        v = counts[self.term_rec, self.term_pos]
        n = self.rec_total[self.term_rec] - before[self.term_rec, self.term_pos]
        return v.astype(float), n.astype(float)

    # -- deterministic pieces --------------------------------------------------------

    def trend(self, state, years=None):
        """Spline values ``f`` on the year grid (or given years): (S, 2, C, T)."""
        D = self.D if years is None else self.basis.full_design(years)
        return state.beta @ D.T

    def logit_pi(self, state, years=None, un_offsets_only=False):
        """``logit(P) + g_c(t)``: (C, T)."""
        if years is None:
            off = self.logit_P
            D = self.D
        else:
            years = np.atleast_1d(years)
            P = np.array([[self.un_urban.value(c, y) for y in years] for c in self.countries])
            P = np.clip(P, self.cfg.urban_clamp, 1 - self.cfg.urban_clamp).reshape(self.C, -1)
            off = logit(P)
            D = self.basis.full_design(years)
        if un_offsets_only:
            return off.copy()
        return off + state.kappa @ D.T

    def clamp_nu(self, nu):
        e = self.cfg.nu_clamp
        return np.clip(nu, e, 1 - e)

    def mix_relative(self, nu_u, nu_r, pi):
        """Relative means of the urban/rural mixture: rows ``(..., S)``.

        Relative means are clamped to ``[nu_clamp, 1 - nu_clamp]`` first.
        """
        nu_u = np.asarray(nu_u, dtype=float)
        shape = nu_u.shape
        u = np.ascontiguousarray(nu_u.reshape(-1, self.S))
        r = np.ascontiguousarray(np.asarray(nu_r, dtype=float).reshape(-1, self.S))
        w = np.ascontiguousarray(np.broadcast_to(pi, shape[:-1]).reshape(-1), dtype=float)
        out = np.empty_like(u)
        kernels.mix_relative(u, r, w, self._tier_k, self._tier_parent, self._tier_nu,
                             self._tier_nodes, self.cfg.nu_clamp, out)
        return out.reshape(shape)

    def term_nu(self, state, trend=None, lpi=None):
        tr = self.trend(state) if trend is None else trend
        lpi = self.logit_pi(state) if lpi is None else lpi
        nu = np.empty(self.M)
        d = self.direct
        nu[d] = expit(tr[self.term_node[d], self.term_area[d], self.term_country[d], self.term_t[d]])
        if self.overall.size:
            o = self.overall
            nu_u = expit(tr[:, URBAN, self.ov_country, self.ov_t]).T
            nu_r = expit(tr[:, RURAL, self.ov_country, self.ov_t]).T
            pi = expit(lpi[self.ov_country, self.ov_t])
            nu_o = self.mix_relative(nu_u, nu_r, pi)
            nu[o] = nu_o[self.term_ov_row[o], self.term_node[o]]
        return nu

    def term_log_phi(self, state):
        lp = np.empty(self.M)
        d, o = self.direct, self.overall
        lp[d] = state.log_phi[self.term_node[d], self.term_area[d], self.term_country[d]]
        lp[o] = 0.5 * (state.log_phi[self.term_node[o], URBAN, self.term_country[o]]
                       + state.log_phi[self.term_node[o], RURAL, self.term_country[o]])
        return lp

    def term_loglik(self, state):
        v, n = self.term_counts(state.counts)
        out = np.empty(self.M)
        kernels.bb_mix_logpmf(v, n, kernels.log_choose(n, v), self.term_nu(state),
                              np.exp(self.term_log_phi(state)), state.rho[self.term_survey],
                              out, self.cfg.nu_clamp)
        return out

    # -- public evaluation API ---------------------------------------------------------

    def _s(self, fuel):
        return self.h.nu_index[fuel] if isinstance(fuel, str) else int(fuel)

    def _c(self, country):
        return self.c_index[country] if isinstance(country, str) else int(country)

    def relative_mean(self, fuel, area, country, year, state):
        """``logistic(f_{i,j,c}(t))`` for one urban/rural trend."""
        s, c = self._s(fuel), self._c(country)
        a = AREAS.index(area) if isinstance(area, str) else int(area)
        if a == OVERALL:
            return float(self.overall_relative_means(country, year, state)[s])
        x = self.basis.full_design([year])[0]
        return float(expit(state.beta[s, a, c] @ x))

    def urban_weight(self, country, year, state, un_offsets_only=False):
        c = self._c(country)
        return float(expit(self.logit_pi(state, [year], un_offsets_only)[c, 0]))

    def area_relative_means(self, country, year, state):
        """(2, S) urban and rural relative means at one year."""
        c = self._c(country)
        x = self.basis.full_design([year])[0]
        return self.clamp_nu(expit(state.beta[:, :, c] @ x)).T

    def overall_means(self, country, year, state, un_offsets_only=False):
        """Population share of every hierarchy node overall:
        ``pi * mu_urban + (1 - pi) * mu_rural`` (aligned with ``h.nodes``)."""
        nu = self.area_relative_means(country, year, state)
        pi = self.urban_weight(country, year, state, un_offsets_only)
        mu = self.h.absolute_means(nu)
        return pi * mu[0] + (1 - pi) * mu[1]

    def overall_relative_means(self, country, year, state, un_offsets_only=False):
        return self.h.relative_from_absolute(self.overall_means(country, year, state, un_offsets_only))

    def observation_loglik(self, obs_index, state):
        """Log-likelihood contribution of one survey x area observation."""
        mask = self.term_obs == obs_index
        return float(self.term_loglik(state)[mask].sum())

    def loglik(self, state):
        return float(self.term_loglik(state).sum())

    # -- priors ---------------------------------------------------------------------------

    def log_prior_factors(self, state):
        """Every prior factor as an array, keyed by family."""
        cfg = self.cfg
        sd, ssd = cfg.prior_sd, cfg.sigma_prior_sd
        pen = self.pen
        rc, qr = self.region_of, self.super_of
        b, g, th = state.beta, state.gamma, state.theta
        sb, sg = state.sig_beta, state.sig_gamma
        f = {}
        f["beta0"] = normal_logpdf(b[..., 0], g[:, :, rc, 0], sb[..., 0:1])
        f["beta1"] = normal_logpdf(b[..., 1], g[:, :, rc, 1], sb[..., 1:2])
        f["beta_nl"] = mvn_penalty_logpdf(b[..., 2:], g[:, :, rc, 2:], state.log_lam_beta, pen)
        f["lam_beta"] = normal_logpdf(state.log_lam_beta, state.ups_beta[..., None], sb[..., 2:3])
        f["gamma0"] = normal_logpdf(g[..., 0], th[:, :, qr, 0], sg[..., 0:1])
        f["gamma1"] = normal_logpdf(g[..., 1], th[:, :, qr, 1], sg[..., 1:2])
        f["gamma_nl"] = mvn_penalty_logpdf(g[..., 2:], th[:, :, qr, 2:], state.log_lam_gamma, pen)
        f["lam_gamma"] = normal_logpdf(state.log_lam_gamma, state.ups_gamma[..., None], sg[..., 2:3])
        f["theta0"] = normal_logpdf(th[..., 0], 0.0, sd)
        f["theta1"] = normal_logpdf(th[..., 1], 0.0, sd)
        f["theta_nl"] = mvn_penalty_logpdf(th[..., 2:], 0.0, state.log_lam_theta, pen)
        f["lam_theta"] = normal_logpdf(state.log_lam_theta, 0.0, sd)
        f["phi"] = normal_logpdf(state.log_phi, state.ups_phi[..., None], state.sig_phi[..., None])
        k, sk = state.kappa, state.sig_kappa
        f["kappa0"] = normal_logpdf(k[:, 0], 0.0, sk[0])
        f["kappa1"] = normal_logpdf(k[:, 1], 0.0, sk[1])
        f["kappa_nl"] = mvn_penalty_logpdf(k[:, 2:], 0.0, state.log_lam_kappa, pen)
        f["lam_kappa"] = normal_logpdf(state.log_lam_kappa, state.ups_kappa[0], sk[2])
        f["ups_beta"] = normal_logpdf(state.ups_beta, 0.0, sd)
        f["ups_gamma"] = normal_logpdf(state.ups_gamma, 0.0, sd)
        f["ups_phi"] = normal_logpdf(state.ups_phi, 0.0, sd)
        f["ups_kappa"] = normal_logpdf(state.ups_kappa, 0.0, sd)
        f["sig_beta"] = halfnormal_logpdf(sb, ssd)
        f["sig_gamma"] = halfnormal_logpdf(sg, ssd)
        f["sig_phi"] = halfnormal_logpdf(state.sig_phi, ssd)
        f["sig_kappa"] = halfnormal_logpdf(sk, ssd)
        f["rho"] = beta_logpdf(state.rho, *cfg.rho_prior)
        return f

    def log_prior(self, state):
        return float(sum(np.sum(v) for v in self.log_prior_factors(state).values()))

    def log_posterior(self, state):
        lp = self.log_prior(state)
        if not np.isfinite(lp):
            return -np.inf
        return lp + self.loglik(state)

    # -- Markov blankets -------------------------------------------------------------------

    def blocks(self):
        """All block ids, in a fixed order."""
        out = []
        S, C, R, Q = self.S, self.C, self.R, self.Q
        for s in range(S):
            for a in range(2):
                for c in range(C):
                    out += [("beta", s, a, c, p) for p in COEF_PARTS]
                    out += [("log_lam_beta", s, a, c), ("log_phi", s, a, c)]
                for r in range(R):
                    out += [("gamma", s, a, r, p) for p in COEF_PARTS]
                    out.append(("log_lam_gamma", s, a, r))
                for q in range(Q):
                    out += [("theta", s, a, q, p) for p in COEF_PARTS]
                    out.append(("log_lam_theta", s, a, q))
                out += [("ups_beta", s, a), ("ups_gamma", s, a), ("ups_phi", s, a), ("sig_phi", s, a)]
                out += [("sig_beta", s, a, m) for m in range(3)]
                out += [("sig_gamma", s, a, m) for m in range(3)]
        for c in range(C):
            out += [("kappa", c, p) for p in COEF_PARTS] + [("log_lam_kappa", c)]
        out += [("ups_kappa",)] + [("sig_kappa", m) for m in range(3)]
        out += [("rho", u) for u in range(self.U)]
        out += [("counts", g) for g in range(self.G)]
        return out

    def block_slice(self, block, state):
        """``(array, index)`` addressing the block's values inside ``state``."""
        kind = block[0]
        part = {"intercept": 0, "linear": 1, "nonlinear": slice(2, None)}
        if kind in ("beta", "gamma", "theta"):
            _, s, a, i, p = block
            return getattr(state, kind), (s, a, i, part[p])
        if kind == "kappa":
            return state.kappa, (block[1], part[block[2]])
        if kind == "counts":
            g = block[1]
            pos = self.groups_pos[g, : self.groups_size[g]]
            return state.counts, (self.groups_rec[g], pos)
        if kind == "ups_kappa":
            return state.ups_kappa, (0,)
        return getattr(state, kind), tuple(block[1:])

    def _blanket(self, block):
        """Prior factor entries and a term mask touched by ``block``."""
        kind = block[0]
        M = self.M
        none = np.zeros(M, dtype=bool)
        fam = {"intercept": "0", "linear": "1", "nonlinear": "_nl"}
        rc, qr = self.region_of, self.super_of
        if kind == "beta":
            _, s, a, c, p = block
            terms = ((self.term_node == s) & (self.term_area == a) & (self.term_country == c)) | (
                (self.term_area == OVERALL) & (self.term_country == c))
            return [("beta" + fam[p], (s, a, c))], terms
        if kind == "log_lam_beta":
            _, s, a, c = block
            return [("beta_nl", (s, a, c)), ("lam_beta", (s, a, c))], none
        if kind == "gamma":
            _, s, a, r, p = block
            kids = np.flatnonzero(rc == r)
            return [("gamma" + fam[p], (s, a, r)), ("beta" + fam[p], (s, a, kids))], none
        if kind == "log_lam_gamma":
            _, s, a, r = block
            return [("gamma_nl", (s, a, r)), ("lam_gamma", (s, a, r))], none
        if kind == "theta":
            _, s, a, q, p = block
            kids = np.flatnonzero(qr == q)
            return [("theta" + fam[p], (s, a, q)), ("gamma" + fam[p], (s, a, kids))], none
        if kind == "log_lam_theta":
            _, s, a, q = block
            return [("theta_nl", (s, a, q)), ("lam_theta", (s, a, q))], none
        if kind == "log_phi":
            _, s, a, c = block
            terms = (self.term_node == s) & (self.term_country == c) & (
                (self.term_area == a) | (self.term_area == OVERALL))
            return [("phi", (s, a, c))], terms
        if kind == "rho":
            return [("rho", (block[1],))], self.term_survey == block[1]
        if kind == "kappa":
            _, c, p = block
            return [("kappa" + fam[p], (c,))], (self.term_area == OVERALL) & (self.term_country == c)
        if kind == "log_lam_kappa":
            return [("kappa_nl", (block[1],)), ("lam_kappa", (block[1],))], none
        if kind in ("ups_beta", "ups_gamma"):
            _, s, a = block
            lam = "lam_" + kind[4:]
            return [(kind, (s, a)), (lam, (s, a))], none
        if kind in ("sig_beta", "sig_gamma"):
            _, s, a, m = block
            lower = kind[4:]
            child = {0: lower + "0", 1: lower + "1", 2: "lam_" + lower}[m]
            return [(kind, (s, a, m)), (child, (s, a))], none
        if kind in ("ups_phi", "sig_phi"):
            _, s, a = block
            return [(kind, (s, a)), ("phi", (s, a))], none
        if kind == "ups_kappa":
            return [("ups_kappa", (0,)), ("lam_kappa", (slice(None),))], none
        if kind == "sig_kappa":
            m = block[1]
            child = {0: "kappa0", 1: "kappa1", 2: "lam_kappa"}[m]
            return [("sig_kappa", (m,)), (child, (slice(None),))], none
        if kind == "counts":
            rec = self.groups_rec[block[1]]
            return [], self.term_rec == rec
        raise KeyError(f"unknown block id {block!r}")

    def log_posterior_block(self, block, state):
        """Prior factors plus likelihood terms that depend on ``block``."""
        factors, terms = self._blanket(block)
        f = self.log_prior_factors(state)
        total = 0.0
        for name, idx in factors:
            total += float(np.sum(f[name][idx]))
        if terms.any():
            total += float(self.term_loglik(state)[terms].sum())
        return total

    def blanket_terms(self, block):
        return np.flatnonzero(self._blanket(block)[1])

    # -- initial values ---------------------------------------------------------------------

    def empirical_logits(self):
        """Mean empirical logit of each (node, area, country) relative mean
        from urban/rural terms with known counts; NaN where there are none."""
        v, n = self.term_counts(self.counts0)
        d = self.direct[n[self.direct] > 0]
        x = (v[d] + 0.5) / (n[d] + 1.0)
        key = (self.term_node[d] * 2 + self.term_area[d]) * self.C + self.term_country[d]
        size = self.S * 2 * self.C
        tot = np.bincount(key, weights=logit(x), minlength=size)
        cnt = np.bincount(key, minlength=size)
        with np.errstate(invalid="ignore"):
            out = tot / cnt
        return out.reshape(self.S, 2, self.C)

    def init_state(self, rng, jitter=1.0):
        """Random initial state around crude empirical values."""
        S, C, R, Q, P = self.S, self.C, self.R, self.Q, self.P
        emp = self.empirical_logits()
        cnt = np.sum(~np.isnan(emp), axis=2)
        sa_mean = np.where(cnt > 0, np.nansum(emp, axis=2) / np.maximum(cnt, 1), 0.0)
        emp = np.where(np.isnan(emp), sa_mean[..., None], emp)
        emp = np.clip(emp, -8, 8)
        j = jitter
        beta = np.zeros((S, 2, C, P))
        beta[..., 0] = emp + rng.normal(0, 0.3 * j, (S, 2, C))
        beta[..., 1] = rng.normal(0, 0.3 * j, (S, 2, C))
        beta[..., 2:] = rng.normal(0, 0.05 * j, (S, 2, C, P - 2))
        gamma = np.zeros((S, 2, R, P))
        for r in range(R):
            kids = self.region_of == r
            gamma[:, :, r, 0] = beta[:, :, kids, 0].mean(axis=2) if kids.any() else sa_mean
        gamma[..., 0] += rng.normal(0, 0.3 * j, (S, 2, R))
        gamma[..., 1] = rng.normal(0, 0.3 * j, (S, 2, R))
        gamma[..., 2:] = rng.normal(0, 0.05 * j, (S, 2, R, P - 2))
        theta = np.zeros((S, 2, Q, P))
        for q in range(Q):
            kids = self.super_of == q
            theta[:, :, q, 0] = gamma[:, :, kids, 0].mean(axis=2)
        theta[..., 0] += rng.normal(0, 0.3 * j, (S, 2, Q))
        theta[..., 1] = rng.normal(0, 0.3 * j, (S, 2, Q))
        theta[..., 2:] = rng.normal(0, 0.05 * j, (S, 2, Q, P - 2))
        lam0 = np.log(100.0)
        state = ModelState(
            beta=beta,
            log_lam_beta=lam0 + rng.normal(0, 0.5 * j, (S, 2, C)),
            gamma=gamma,
            log_lam_gamma=lam0 + rng.normal(0, 0.5 * j, (S, 2, R)),
            theta=theta,
            log_lam_theta=lam0 + rng.normal(0, 0.5 * j, (S, 2, Q)),
            log_phi=np.log(50.0) + rng.normal(0, 0.5 * j, (S, 2, C)),
            rho=np.clip(rng.beta(*self.cfg.rho_prior, size=self.U), 0.5, 0.995),
            kappa=np.concatenate([rng.normal(0, 0.1 * j, (C, 2)),
                                  rng.normal(0, 0.05 * j, (C, P - 2))], axis=1),
            log_lam_kappa=lam0 + rng.normal(0, 0.5 * j, C),
            ups_beta=lam0 + rng.normal(0, 0.5 * j, (S, 2)),
            sig_beta=rng.uniform(0.3, 1.5, (S, 2, 3)),
            ups_gamma=lam0 + rng.normal(0, 0.5 * j, (S, 2)),
            sig_gamma=rng.uniform(0.3, 1.5, (S, 2, 3)),
            ups_phi=np.log(50.0) + rng.normal(0, 0.5 * j, (S, 2)),
            sig_phi=rng.uniform(0.3, 1.5, (S, 2)),
            ups_kappa=np.array([lam0 + rng.normal(0, 0.5 * j)]),
            sig_kappa=rng.uniform(0.3, 1.5, 3),
            counts=self.counts0.copy(),
        )
        return state

    # -- parameter addressing --------------------------------------------------------------

    def addresses(self):
        """Stable string address of every entry of :meth:`ModelState.flatten`."""
        nu = self.h.nu_nodes
        ar = AREAS[:2]
        parts = ["b0", "b1"] + [f"b{k}" for k in range(2, self.P)]
        labels = {
            "S": nu, "A": ar, "C": self.countries, "R": self.regions, "Q": self.supers,
            "P": parts, "U": self.surveys, "M3": ["0", "1", "2"], "one": ["0"],
        }
        shapes = {
            "beta": "SACP", "log_lam_beta": "SAC", "gamma": "SARP", "log_lam_gamma": "SAR",
            "theta": "SAQP", "log_lam_theta": "SAQ", "log_phi": "SAC", "rho": "U",
            "kappa": "CP", "log_lam_kappa": "C", "ups_beta": "SA", "sig_beta": "SA3",
            "ups_gamma": "SA", "sig_gamma": "SA3", "ups_phi": "SA", "sig_phi": "SA",
            "ups_kappa": "1", "sig_kappa": "3",
        }
        key = {"S": "S", "A": "A", "C": "C", "R": "R", "Q": "Q", "P": "P", "U": "U",
               "3": "M3", "1": "one"}
        out = []
        for name in ModelState.parameter_fields():
            axes = [labels[key[ch]] for ch in shapes[name]]
            for combo in np.ndindex(*[len(a) for a in axes]):
                out.append(f"{name}[{','.join(axes[i][j] for i, j in enumerate(combo))}]")
        return out

    def unflatten(self, flat, counts=None):
        """Rebuild a :class:`ModelState` from :meth:`ModelState.flatten` output."""
        template = self.template_state()
        off = 0
        kw = {}
        for name in ModelState.parameter_fields():
            shape = getattr(template, name).shape
            size = int(np.prod(shape))
            kw[name] = np.asarray(flat[off: off + size], dtype=float).reshape(shape).copy()
            off += size
        kw["counts"] = self.counts0.copy() if counts is None else counts
        return ModelState(**kw)

    def template_state(self):
        S, C, R, Q, P = self.S, self.C, self.R, self.Q, self.P
        z = np.zeros
        return ModelState(
            beta=z((S, 2, C, P)), log_lam_beta=z((S, 2, C)), gamma=z((S, 2, R, P)),
            log_lam_gamma=z((S, 2, R)), theta=z((S, 2, Q, P)), log_lam_theta=z((S, 2, Q)),
            log_phi=z((S, 2, C)), rho=np.ones(self.U), kappa=z((C, P)), log_lam_kappa=z(C),
            ups_beta=z((S, 2)), sig_beta=np.ones((S, 2, 3)), ups_gamma=z((S, 2)),
            sig_gamma=np.ones((S, 2, 3)), ups_phi=z((S, 2)), sig_phi=np.ones((S, 2)),
            ups_kappa=z(1), sig_kappa=np.ones(3), counts=self.counts0.copy(),
        )

    def urban_layer(self, state):
        return UrbanLayer(state.kappa, state.log_lam_kappa, self.logit_P,
                          float(state.ups_kappa[0]), state.sig_kappa)
