"""Adaptive Metropolis-within-Gibbs for :class:`~fuelmix.model.FuelModel`.

Every continuous block gets a random-walk Metropolis update: scalars with
their own adaptive scale, spline non-linear coefficient vectors with a joint
proposal built from their empirical covariance.  Positive parameters move on
the log scale and the outlier weights on the logit scale.  Blocks whose
Markov blankets do not overlap (e.g. the same coefficient of different
countries) are proposed together and accepted or rejected one by one, so a
sweep is still a valid single-site Gibbs scan.

Proposal scales adapt by Robbins-Monro steps every ``adapt_interval``
iterations during burn-in and are frozen afterwards.
"""

import io
import logging
import zipfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit, xlog1py, xlogy

from . import kernels
from .config import McmcConfig
from .model import (OVERALL, RURAL, URBAN, FuelModel, ModelState, halfnormal_logpdf,
                    normal_logpdf)
from .splines import mvn_penalty_logpdf

log = logging.getLogger(__name__)

_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


class InitializationError(RuntimeError):
    """No finite starting point found within the retry budget."""


def chain_rng(seed, chain):
    """Independent generator for one chain, derived from ``(seed, chain)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(chain)]))


def _beta_logpdf(x, a, b):
    from scipy.special import betaln
    with np.errstate(divide="ignore", invalid="ignore"):
        out = xlogy(a - 1, x) + xlog1py(b - 1, -x) - betaln(a, b)
    return np.where((x >= 0) & (x <= 1), out, -np.inf)


def _log_jac_logit(x):
    with np.errstate(divide="ignore"):
        return np.log(x) + np.log1p(-x)


# -- adaptation ---------------------------------------------------------------------------

class ScaleAdapter:
    """Elementwise Robbins-Monro adaptation of log proposal scales.

    ``max_scale`` caps the adapted scale (default ``e**3``, ample for
    parameters on a logit or log scale).
    """

    def __init__(self, init, target, max_scale=None):
        self.log_scale = np.log(np.asarray(init, dtype=float)).copy()
        self.max_log = 3.0 if max_scale is None else np.log(np.asarray(max_scale, dtype=float))
        self.target = target
        self.acc = np.zeros(self.log_scale.shape)
        self.tries = 0
        self.batch = 0
        self.frozen = False
        self.total_acc = np.zeros(self.log_scale.shape)
        self.total_tries = 0

    @property
    def scale(self):
        return np.exp(self.log_scale)

    def record(self, accepted, where=None):
        if where is None:
            self.acc += accepted
            self.total_acc += accepted
        else:
            self.acc[where] += accepted
            self.total_acc[where] += accepted

    def tick(self):
        self.tries += 1
        self.total_tries += 1

    def adapt(self):
        if self.frozen or self.tries == 0:
            return
        self.batch += 1
        rate = self.acc / self.tries
        gain = min(1.0, 3.0 / np.sqrt(self.batch))
        self.log_scale = np.clip(self.log_scale + gain * (rate - self.target), -20.0, self.max_log)
        self.acc[...] = 0
        self.tries = 0

    def freeze(self):
        self.frozen = True

    def acceptance(self):
        return self.total_acc / max(self.total_tries, 1)


class BlockAdapter(ScaleAdapter):
    """Joint proposals ``scale * L z`` with ``L`` the Cholesky factor of the
    running empirical covariance (scaled by ``2.38^2 / d``) once enough
    burn-in samples have accumulated."""

    def __init__(self, init_sd, target, min_samples=100):
        init_sd = np.asarray(init_sd, dtype=float)
        super().__init__(np.ones(init_sd.shape[:-1]), target)
        self.d = init_sd.shape[-1]
        self.chol = np.zeros(init_sd.shape + (self.d,))
        idx = np.arange(self.d)
        self.chol[..., idx, idx] = init_sd
        self.n = 0
        self.sum = np.zeros(init_sd.shape)
        self.outer = np.zeros(self.chol.shape)
        self.min_samples = min_samples
        self.collect = False

    def observe(self, x):
        if self.frozen or not self.collect:
            return
        self.n += 1
        self.sum += x
        self.outer += x[..., :, None] * x[..., None, :]

    def propose(self, rng):
        z = rng.standard_normal(self.sum.shape)
        return self.scale[..., None] * np.einsum("...ij,...j->...i", self.chol, z)

    def adapt(self):
        if self.frozen:
            return
        if self.n >= self.min_samples:
            mean = self.sum / self.n
            cov = self.outer / self.n - mean[..., :, None] * mean[..., None, :]
            d = self.d
            diag = np.diagonal(cov, axis1=-2, axis2=-1)
            jitter = 1e-6 * diag.mean(axis=-1, keepdims=True) + 1e-12
            cov = cov * (2.38 ** 2 / d)
            cov[..., np.arange(d), np.arange(d)] += jitter
            try:
                self.chol = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                pass
        super().adapt()


# -- imputation core ----------------------------------------------------------------------

def _impute_sweep(model, counts, group_ids, t_idx, t_group, nu, phi, rho, ll, rng, mean_m,
                  nu_clamp):
    """One transfer proposal for each listed imputation group.

    ``t_idx`` are the term indices of the groups' records with ``t_group`` their
    group ids, ``ll`` the current values of those terms (updated in place).
    Returns the acceptance mask over ``group_ids``.
    """
    G = group_ids.size
    if G == 0:
        return np.zeros(0, dtype=bool)
    sizes = model.groups_size[group_ids]
    recs = model.groups_rec[group_ids]
    k = rng.integers(0, sizes - 1)
    i = model.groups_pos[group_ids, k]
    j = model.groups_pos[group_ids, k + 1]
    sign = np.where(rng.random(G) < 0.5, -1, 1)
    m = rng.geometric(1.0 / np.maximum(mean_m, 1.0)) * sign
    rows = counts[recs].copy()
    gi = np.arange(G)
    rows[gi, i] -= m
    rows[gi, j] += m
    valid = (rows[gi, i] >= 0) & (rows[gi, j] >= 0)
    # position within group_ids for each term
    slot = np.searchsorted(group_ids, t_group)
    r = np.where(rows < 0, 0, rows)
    before = np.cumsum(r, axis=1) - r
    pos = model.term_pos[t_idx]
    v = rows[slot, pos].astype(float)
    n = (model.rec_total[recs][slot] - before[slot, pos]).astype(float)
    ok = valid[slot]
    v = np.where(ok, v, 0.0)
    n = np.where(ok, n, 0.0)
    new = np.empty(t_idx.size)
    delta = np.zeros(G)
    kernels.bb_mix_delta(v, n, kernels.log_choose(n, v), nu, phi, rho, ll, slot.astype(np.int64),
                         new, delta, nu_clamp)
    acc = valid & (np.log(rng.random(G)) < delta)
    counts[recs[acc]] = rows[acc]
    upd = acc[slot]
    ll[upd] = new[upd]
    return acc


def impute_missing_counts(state, model, rng, mean_transfer=None):
    """One Metropolis transfer sweep over every imputation group of ``model``.

    Counts move in integer steps between adjacent latent siblings, so every
    parent total is preserved exactly.  Returns a new state.
    """
    out = state.copy()
    G = model.G
    if G == 0:
        return out
    groups = np.arange(G)
    t_idx = np.flatnonzero(model.group_of_rec[model.term_rec] >= 0)
    t_group = model.group_of_rec[model.term_rec[t_idx]]
    nu = model.term_nu(out)[t_idx]
    phi = np.exp(model.term_log_phi(out))[t_idx]
    rho = out.rho[model.term_survey[t_idx]]
    ll = model.term_loglik(out)[t_idx]
    if mean_transfer is None:
        mean_transfer = np.maximum(1.0, 0.05 * model.rec_total[model.groups_rec])
    _impute_sweep(model, out.counts, groups, t_idx, t_group, nu, phi, rho, ll, rng,
                  np.broadcast_to(mean_transfer, (G,)), model.cfg.nu_clamp)
    return out


# -- the sampler -------------------------------------------------------------------------

def _onehot(idx, size):
    m = np.zeros((idx.size, size))
    m[np.arange(idx.size), idx] = 1.0
    return m


class FuelSampler:
    """Metropolis-within-Gibbs state machine for one chain."""

    def __init__(self, model, config, rng, state=None):
        self.m = model
        self.cfg = config
        self.rng = rng
        self.state = self._initial_state() if state is None else state.copy()
        self._index()
        self._refresh()
        self._make_adapters()

    # setup ---------------------------------------------------------------------------

    def _initial_state(self):
        for attempt in range(self.cfg.init_retries):
            st = self.m.init_state(self.rng)
            if np.isfinite(self.m.log_posterior(st)):
                return st
            log.info("initial values rejected (attempt %d)", attempt + 1)
        raise InitializationError(
            f"no finite log-posterior after {self.cfg.init_retries} initial draws")

    def _index(self):
        m = self.m
        self.tc, self.tt, self.tn = m.term_country, m.term_t, m.term_node
        self.ta, self.tu = m.term_area, m.term_survey
        self.dir_sa = [[np.flatnonzero((m.term_area == a) & (m.term_node == s)) for a in range(2)]
                       for s in range(m.S)]
        self.ov = m.overall
        self.ov_row_t = m.term_ov_row[self.ov]
        # overall terms whose relative mean moves with node s: those in the
        # node's own tier or below it (tiers above see unchanged totals)
        h = m.h
        term_tier = m.rec_tier[m.term_rec]
        self.ov_s = []
        for node in h.nu_nodes:
            below = {h.tier_of[node]}
            grew = True
            while grew:
                grew = False
                for ti, t in enumerate(h.tiers):
                    if ti not in below and t.parent is not None and h.tier_of[t.parent] in below:
                        below.add(ti)
                        grew = True
            self.ov_s.append(self.ov[np.isin(term_tier[self.ov], sorted(below))])
        self.phi_terms = []
        for a in range(2):
            idx = np.concatenate([np.flatnonzero(m.term_area == a), self.ov])
            self.phi_terms.append(idx)
        self.Mrc = _onehot(m.region_of, m.R)      # (C, R)
        self.Mqr = _onehot(m.super_of, m.Q)       # (R, Q)
        self.imp_t = np.flatnonzero(m.group_of_rec[m.term_rec] >= 0)
        self.imp_g = m.group_of_rec[m.term_rec[self.imp_t]]
        self.all_groups = np.arange(m.G)

    def _refresh(self):
        """Recompute every cache from ``self.state``."""
        m, st = self.m, self.state
        self.tr = m.trend(st)
        self.lpi = m.logit_pi(st)
        self.ov_area_nu = np.stack([expit(self.tr[:, a, m.ov_country, m.ov_t]).T for a in range(2)]) \
            if m.ov_rows.size else np.zeros((2, 0, m.S))
        self.ov_pi = expit(self.lpi[m.ov_country, m.ov_t])
        self.ov_nu = (m.mix_relative(self.ov_area_nu[0], self.ov_area_nu[1], self.ov_pi)
                      if m.ov_rows.size else np.zeros((0, m.S)))
        self.t_nu = m.term_nu(st, self.tr, self.lpi)
        self.t_lphi = m.term_log_phi(st)
        v, n = m.term_counts(st.counts)
        self.v, self.n = v, n
        self.lch = kernels.log_choose(n, v)
        self.ll = np.empty(m.M)
        kernels.bb_mix_logpmf(v, n, self.lch, self.t_nu, np.exp(self.t_lphi), st.rho[self.tu],
                              self.ll, m.cfg.nu_clamp)

    def _make_adapters(self):
        m, st, tgt = self.m, self.state, self.cfg
        S, C, R, Q = m.S, m.C, m.R, m.Q
        sc, bl = tgt.target_accept_scalar, tgt.target_accept_block
        pen = m.pen

        def nl_sd(log_lam):
            return 0.5 / np.sqrt(np.exp(log_lam)[..., None] * pen)

        self.ad = {
            "beta0": ScaleAdapter(np.full((S, 2, C), 0.1), sc),
            "beta1": ScaleAdapter(np.full((S, 2, C), 0.1), sc),
            "beta_nl": BlockAdapter(nl_sd(st.log_lam_beta), bl),
            "beta_all": BlockAdapter(np.concatenate(
                [np.full((S, 2, C, 2), 0.05), 0.5 * nl_sd(st.log_lam_beta)], axis=-1), bl),
            "log_lam_beta": ScaleAdapter(np.full((S, 2, C), 0.5), sc),
            "beta_rescale": ScaleAdapter(np.full((S, 2, C), 0.5), sc),
            "gamma0": ScaleAdapter(np.full((S, 2, R), 0.1), sc),
            "gamma1": ScaleAdapter(np.full((S, 2, R), 0.1), sc),
            "gamma_nl": BlockAdapter(nl_sd(st.log_lam_gamma), bl),
            "log_lam_gamma": ScaleAdapter(np.full((S, 2, R), 0.5), sc),
            "theta0": ScaleAdapter(np.full((S, 2, Q), 0.1), sc),
            "theta1": ScaleAdapter(np.full((S, 2, Q), 0.1), sc),
            "theta_nl": BlockAdapter(nl_sd(st.log_lam_theta), bl),
            "log_lam_theta": ScaleAdapter(np.full((S, 2, Q), 0.5), sc),
            "log_phi": ScaleAdapter(np.full((S, 2, C), 0.2), sc),
            "kappa0": ScaleAdapter(np.full(C, 0.05), sc),
            "kappa1": ScaleAdapter(np.full(C, 0.05), sc),
            "kappa_nl": BlockAdapter(nl_sd(st.log_lam_kappa), bl),
            "log_lam_kappa": ScaleAdapter(np.full(C, 0.5), sc),
            "kappa_rescale": ScaleAdapter(np.full(C, 0.5), sc),
            "ups_beta": ScaleAdapter(np.full((S, 2), 0.3), sc),
            "sig_beta": ScaleAdapter(np.full((S, 2, 3), 0.3), sc),
            "ups_gamma": ScaleAdapter(np.full((S, 2), 0.3), sc),
            "sig_gamma": ScaleAdapter(np.full((S, 2, 3), 0.3), sc),
            "ups_phi": ScaleAdapter(np.full((S, 2), 0.3), sc),
            "sig_phi": ScaleAdapter(np.full((S, 2), 0.3), sc),
            "ups_kappa": ScaleAdapter(np.full(1, 0.3), sc),
            "sig_kappa": ScaleAdapter(np.full(3, 0.3), sc),
            "rho": ScaleAdapter(np.full(m.U, 0.5), sc),
            "counts": ScaleAdapter(np.maximum(1.0, 0.05 * m.rec_total[m.groups_rec]).astype(float),
                                   sc, max_scale=np.maximum(1.0, m.rec_total[m.groups_rec])),
        }

    def _accept(self, delta):
        return np.log(self.rng.random(np.shape(delta))) < delta

    # likelihood helpers -----------------------------------------------------------------

    def _terms_delta(self, idx, nu, lphi, rho, groups, ngroups, delta):
        """Evaluate terms ``idx`` at new (nu, log phi, rho); add group deltas."""
        new = np.empty(idx.size)
        if idx.size:
            kernels.bb_mix_delta(self.v[idx], self.n[idx], self.lch[idx], nu, np.exp(lphi), rho,
                                 self.ll[idx], groups, new, delta, self.m.cfg.nu_clamp)
        return new

    def _trend_move(self, s, a, dtr, delta):
        """Metropolis decision for adding ``dtr`` (C, T) to trend (s, a) of every
        country; ``delta`` holds the prior part per country.  Applies accepted
        moves to the caches and returns the acceptance mask."""
        m = self.m
        tr_new = self.tr[s, a] + dtr
        idx = self.dir_sa[s][a]
        nu_d = expit(tr_new[self.tc[idx], self.tt[idx]])
        new_d = self._terms_delta(idx, nu_d, self.t_lphi[idx], self.state.rho[self.tu[idx]],
                                  self.tc[idx], m.C, delta)
        ov = self.ov_s[s]
        if m.ov_rows.size:
            area_nu = self.ov_area_nu.copy()
            area_nu[a][:, s] = expit(tr_new[m.ov_country, m.ov_t])
            ov_nu_new = m.mix_relative(area_nu[0], area_nu[1], self.ov_pi)
            nu_o = ov_nu_new[m.term_ov_row[ov], self.tn[ov]]
            new_o = self._terms_delta(ov, nu_o, self.t_lphi[ov], self.state.rho[self.tu[ov]],
                                      self.tc[ov], m.C, delta)
        acc = self._accept(delta)
        if acc.any():
            self.tr[s, a, acc] = tr_new[acc]
            hit = acc[self.tc[idx]]
            self.ll[idx[hit]] = new_d[hit]
            self.t_nu[idx[hit]] = nu_d[hit]
            if ov.size:
                rows = acc[m.ov_country]
                self.ov_area_nu[a][rows, s] = area_nu[a][rows, s]
                self.ov_nu[rows] = ov_nu_new[rows]
                hit = acc[self.tc[ov]]
                self.ll[ov[hit]] = new_o[hit]
                self.t_nu[ov[hit]] = nu_o[hit]
        return acc

    def _urban_move(self, dlpi, delta):
        m = self.m
        ov = self.ov
        lpi_new = self.lpi + dlpi
        if ov.size:
            pi_new = expit(lpi_new[m.ov_country, m.ov_t])
            ov_nu_new = m.mix_relative(self.ov_area_nu[0], self.ov_area_nu[1], pi_new)
            nu_o = ov_nu_new[self.ov_row_t, self.tn[ov]]
            new_o = self._terms_delta(ov, nu_o, self.t_lphi[ov], self.state.rho[self.tu[ov]],
                                      self.tc[ov], m.C, delta)
        acc = self._accept(delta)
        if acc.any():
            self.lpi[acc] = lpi_new[acc]
            if ov.size:
                rows = acc[m.ov_country]
                self.ov_pi[rows] = pi_new[rows]
                self.ov_nu[rows] = ov_nu_new[rows]
                hit = acc[self.tc[ov]]
                self.ll[ov[hit]] = new_o[hit]
                self.t_nu[ov[hit]] = nu_o[hit]
        return acc

    # block updates ------------------------------------------------------------------------

    def update_beta(self):
        m, st, D = self.m, self.state, self.m.D
        rc = m.region_of
        for s in range(m.S):
            for a in range(2):
                for p in (0, 1):
                    ad = self.ad[f"beta{p}"]
                    old = st.beta[s, a, :, p]
                    prop = old + ad.scale[s, a] * self.rng.standard_normal(m.C)
                    g, sd = st.gamma[s, a, rc, p], st.sig_beta[s, a, p]
                    delta = normal_logpdf(prop, g, sd) - normal_logpdf(old, g, sd)
                    acc = self._trend_move(s, a, np.outer(prop - old, D[:, p]), delta)
                    st.beta[s, a, acc, p] = prop[acc]
                    ad.record(acc, (s, a))
                ad = self.ad["beta_nl"]
                old = st.beta[s, a, :, 2:]
                step = ad.propose(self.rng)[s, a]
                prop = old + step
                g, ll_ = st.gamma[s, a, rc, 2:], st.log_lam_beta[s, a]
                delta = (mvn_penalty_logpdf(prop, g, ll_, m.pen)
                         - mvn_penalty_logpdf(old, g, ll_, m.pen))
                acc = self._trend_move(s, a, step @ D[:, 2:].T, delta)
                st.beta[s, a, acc, 2:] = prop[acc]
                ad.record(acc, (s, a))
                # joint move of the whole coefficient vector
                ad = self.ad["beta_all"]
                old = st.beta[s, a]
                step = ad.propose(self.rng)[s, a]
                prop = old + step
                delta = self._beta_prior(s, a, prop) - self._beta_prior(s, a, old)
                acc = self._trend_move(s, a, step @ D.T, delta)
                st.beta[s, a, acc] = prop[acc]
                ad.record(acc, (s, a))
                # (log lambda, nonlinear deviations) rescaling, as for kappa
                ad = self.ad["beta_rescale"]
                e = ad.scale[s, a] * self.rng.standard_normal(m.C)
                lam_old = st.log_lam_beta[s, a]
                lam_new = lam_old + e
                mu, sd = st.ups_beta[s, a], st.sig_beta[s, a, 2]
                delta = normal_logpdf(lam_new, mu, sd) - normal_logpdf(lam_old, mu, sd)
                shrink = np.expm1(-0.5 * e)[:, None] * (st.beta[s, a, :, 2:] - st.gamma[s, a, rc, 2:])
                acc = self._trend_move(s, a, shrink @ D[:, 2:].T, delta)
                st.beta[s, a, acc, 2:] += shrink[acc]
                st.log_lam_beta[s, a, acc] = lam_new[acc]
                ad.record(acc, (s, a))
        for p in (0, 1):
            self.ad[f"beta{p}"].tick()
        for name in ("beta_nl", "beta_all", "beta_rescale"):
            self.ad[name].tick()
        self.ad["beta_nl"].observe(st.beta[..., 2:])
        self.ad["beta_all"].observe(st.beta)

    def _beta_prior(self, s, a, coef):
        """Prior log density of every country's coefficients for (s, a): (C,)."""
        m, st = self.m, self.state
        g = st.gamma[s, a, m.region_of]
        sd = st.sig_beta[s, a]
        return (normal_logpdf(coef[:, 0], g[:, 0], sd[0]) + normal_logpdf(coef[:, 1], g[:, 1], sd[1])
                + mvn_penalty_logpdf(coef[:, 2:], g[:, 2:], st.log_lam_beta[s, a], m.pen))

    def update_log_phi(self):
        m, st = self.m, self.state
        ad = self.ad["log_phi"]
        for a in range(2):
            old = st.log_phi[:, a, :]
            prop = old + ad.scale[:, a, :] * self.rng.standard_normal(old.shape)
            mu, sd = st.ups_phi[:, a, None], st.sig_phi[:, a, None]
            delta = (normal_logpdf(prop, mu, sd) - normal_logpdf(old, mu, sd)).ravel()
            idx = self.phi_terms[a]
            key = self.tn[idx] * m.C + self.tc[idx]
            is_ov = self.ta[idx] == OVERALL
            other = st.log_phi[:, 1 - a, :].ravel()[key]
            lphi = np.where(is_ov, 0.5 * (prop.ravel()[key] + other), prop.ravel()[key])
            new = self._terms_delta(idx, self.t_nu[idx], lphi, st.rho[self.tu[idx]], key,
                                    delta.size, delta)
            acc = self._accept(delta)
            hit = acc[key]
            self.ll[idx[hit]] = new[hit]
            self.t_lphi[idx[hit]] = lphi[hit]
            acc = acc.reshape(old.shape)
            st.log_phi[:, a, :][acc] = prop[acc]
            ad.record(acc, (slice(None), a))
        ad.tick()

    def update_kappa(self):
        m, st, D = self.m, self.state, self.m.D
        for p in (0, 1):
            ad = self.ad[f"kappa{p}"]
            old = st.kappa[:, p]
            prop = old + ad.scale * self.rng.standard_normal(m.C)
            sd = st.sig_kappa[p]
            delta = normal_logpdf(prop, 0.0, sd) - normal_logpdf(old, 0.0, sd)
            acc = self._urban_move(np.outer(prop - old, D[:, p]), delta)
            st.kappa[acc, p] = prop[acc]
            ad.record(acc)
            ad.tick()
        ad = self.ad["kappa_nl"]
        old = st.kappa[:, 2:]
        step = ad.propose(self.rng)
        prop = old + step
        ll_ = st.log_lam_kappa
        delta = mvn_penalty_logpdf(prop, 0.0, ll_, m.pen) - mvn_penalty_logpdf(old, 0.0, ll_, m.pen)
        acc = self._urban_move(step @ D[:, 2:].T, delta)
        st.kappa[acc, 2:] = prop[acc]
        ad.record(acc)
        ad.tick()
        ad.observe(st.kappa[:, 2:])
        # joint move of (log lambda, nonlinear coefficients): shifting log
        # lambda by e and scaling the coefficients by exp(-e/2) leaves the
        # penalty term unchanged and its Jacobian cancels the determinant
        # change, so only the hyperprior and the likelihood enter
        ad = self.ad["kappa_rescale"]
        e = ad.scale * self.rng.standard_normal(m.C)
        lam_new = st.log_lam_kappa + e
        mu, sd = st.ups_kappa[0], st.sig_kappa[2]
        delta = normal_logpdf(lam_new, mu, sd) - normal_logpdf(st.log_lam_kappa, mu, sd)
        shrink = np.expm1(-0.5 * e)[:, None] * st.kappa[:, 2:]
        acc = self._urban_move(shrink @ D[:, 2:].T, delta)
        st.kappa[acc, 2:] += shrink[acc]
        st.log_lam_kappa[acc] = lam_new[acc]
        ad.record(acc)
        ad.tick()

    def _scalar_mh(self, name, arr_get, arr_set, logdens, log_scale=False):
        """Vectorized random-walk step for independent scalars.

        ``logdens(x)`` returns the blanket log density elementwise (natural
        scale); with ``log_scale`` the walk is on ``log x`` with its Jacobian.
        """
        ad = self.ad[name]
        old = arr_get()
        z = self.rng.standard_normal(old.shape)
        if log_scale:
            prop = old * np.exp(ad.scale * z)
            delta = logdens(prop) - logdens(old) + np.log(prop) - np.log(old)
        else:
            prop = old + ad.scale * z
            delta = logdens(prop) - logdens(old)
        acc = self._accept(delta)
        arr_set(np.where(acc, prop, old))
        ad.record(acc)
        ad.tick()
        return acc

    def update_hierarchy(self):
        """Regional / super-regional splines, smoothing parameters and all
        hyperparameters: prior-only blankets."""
        m, st = self.m, self.state
        rc, qr, pen = m.region_of, m.super_of, m.pen
        sd = m.cfg.prior_sd
        ssd = m.cfg.sigma_prior_sd
        Mrc, Mqr = self.Mrc, self.Mqr

        # country smoothing
        def lam_beta(x):
            return (mvn_penalty_logpdf(st.beta[..., 2:], st.gamma[:, :, rc, 2:], x, pen)
                    + normal_logpdf(x, st.ups_beta[..., None], st.sig_beta[..., 2:3]))
        self._scalar_mh("log_lam_beta", lambda: st.log_lam_beta,
                        lambda v: setattr(st, "log_lam_beta", v), lam_beta)

        # regional intercept / slope
        for p in (0, 1):
            def dens(g, p=p):
                own = normal_logpdf(g, st.theta[:, :, qr, p], st.sig_gamma[..., p:p + 1])
                kids = normal_logpdf(st.beta[..., p][..., None], g[:, :, None, :],
                                     st.sig_beta[..., p, None, None])
                return own + np.einsum("sacr,cr->sar", kids, Mrc)

            def setter(v, p=p):
                st.gamma[..., p] = v
            self._scalar_mh(f"gamma{p}", lambda p=p: st.gamma[..., p].copy(), setter, dens)

        # regional nonlinear
        ad = self.ad["gamma_nl"]
        old = st.gamma[..., 2:].copy()
        prop = old + ad.propose(self.rng)

        def gnl(g):
            own = mvn_penalty_logpdf(g, st.theta[:, :, qr, 2:], st.log_lam_gamma, pen)
            kids = mvn_penalty_logpdf(st.beta[..., 2:], g[:, :, rc], st.log_lam_beta, pen)
            return own + kids @ Mrc
        acc = self._accept(gnl(prop) - gnl(old))
        st.gamma[..., 2:] = np.where(acc[..., None], prop, old)
        ad.record(acc)
        ad.tick()
        ad.observe(st.gamma[..., 2:])

        def lam_gamma(x):
            return (mvn_penalty_logpdf(st.gamma[..., 2:], st.theta[:, :, qr, 2:], x, pen)
                    + normal_logpdf(x, st.ups_gamma[..., None], st.sig_gamma[..., 2:3]))
        self._scalar_mh("log_lam_gamma", lambda: st.log_lam_gamma,
                        lambda v: setattr(st, "log_lam_gamma", v), lam_gamma)

        # super-regional
        for p in (0, 1):
            def dens(t, p=p):
                own = normal_logpdf(t, 0.0, sd)
                kids = normal_logpdf(st.gamma[..., p][..., None], t[:, :, None, :],
                                     st.sig_gamma[..., p, None, None])
                return own + np.einsum("sarq,rq->saq", kids, Mqr)

            def setter(v, p=p):
                st.theta[..., p] = v
            self._scalar_mh(f"theta{p}", lambda p=p: st.theta[..., p].copy(), setter, dens)

        ad = self.ad["theta_nl"]
        old = st.theta[..., 2:].copy()
        prop = old + ad.propose(self.rng)

        def tnl(t):
            own = mvn_penalty_logpdf(t, 0.0, st.log_lam_theta, pen)
            kids = mvn_penalty_logpdf(st.gamma[..., 2:], t[:, :, qr], st.log_lam_gamma, pen)
            return own + kids @ Mqr
        acc = self._accept(tnl(prop) - tnl(old))
        st.theta[..., 2:] = np.where(acc[..., None], prop, old)
        ad.record(acc)
        ad.tick()
        ad.observe(st.theta[..., 2:])

        def lam_theta(x):
            return mvn_penalty_logpdf(st.theta[..., 2:], 0.0, x, pen) + normal_logpdf(x, 0.0, sd)
        self._scalar_mh("log_lam_theta", lambda: st.log_lam_theta,
                        lambda v: setattr(st, "log_lam_theta", v), lam_theta)

        def lam_kappa(x):
            return (mvn_penalty_logpdf(st.kappa[:, 2:], 0.0, x, pen)
                    + normal_logpdf(x, st.ups_kappa[0], st.sig_kappa[2]))
        self._scalar_mh("log_lam_kappa", lambda: st.log_lam_kappa,
                        lambda v: setattr(st, "log_lam_kappa", v), lam_kappa)

        # hyperparameters
        def ups_beta(u):
            return normal_logpdf(u, 0.0, sd) + normal_logpdf(
                st.log_lam_beta, u[..., None], st.sig_beta[..., 2:3]).sum(axis=-1)
        self._scalar_mh("ups_beta", lambda: st.ups_beta, lambda v: setattr(st, "ups_beta", v),
                        ups_beta)

        def ups_gamma(u):
            return normal_logpdf(u, 0.0, sd) + normal_logpdf(
                st.log_lam_gamma, u[..., None], st.sig_gamma[..., 2:3]).sum(axis=-1)
        self._scalar_mh("ups_gamma", lambda: st.ups_gamma, lambda v: setattr(st, "ups_gamma", v),
                        ups_gamma)

        def ups_phi(u):
            return normal_logpdf(u, 0.0, sd) + normal_logpdf(
                st.log_phi, u[..., None], st.sig_phi[..., None]).sum(axis=-1)
        self._scalar_mh("ups_phi", lambda: st.ups_phi, lambda v: setattr(st, "ups_phi", v), ups_phi)

        def ups_kappa(u):
            return normal_logpdf(u, 0.0, sd) + normal_logpdf(
                st.log_lam_kappa, u, st.sig_kappa[2]).sum()
        self._scalar_mh("ups_kappa", lambda: st.ups_kappa, lambda v: setattr(st, "ups_kappa", v),
                        ups_kappa)

        def sig_beta(sg):
            res = np.stack([st.beta[..., 0] - st.gamma[:, :, rc, 0],
                            st.beta[..., 1] - st.gamma[:, :, rc, 1],
                            st.log_lam_beta - st.ups_beta[..., None]], axis=-1)
            return halfnormal_logpdf(sg, ssd) + normal_logpdf(res, 0.0, sg[:, :, None, :]).sum(axis=2)
        self._scalar_mh("sig_beta", lambda: st.sig_beta, lambda v: setattr(st, "sig_beta", v),
                        sig_beta, log_scale=True)

        def sig_gamma(sg):
            res = np.stack([st.gamma[..., 0] - st.theta[:, :, qr, 0],
                            st.gamma[..., 1] - st.theta[:, :, qr, 1],
                            st.log_lam_gamma - st.ups_gamma[..., None]], axis=-1)
            return halfnormal_logpdf(sg, ssd) + normal_logpdf(res, 0.0, sg[:, :, None, :]).sum(axis=2)
        self._scalar_mh("sig_gamma", lambda: st.sig_gamma, lambda v: setattr(st, "sig_gamma", v),
                        sig_gamma, log_scale=True)

        def sig_phi(sg):
            return halfnormal_logpdf(sg, ssd) + normal_logpdf(
                st.log_phi, st.ups_phi[..., None], sg[..., None]).sum(axis=-1)
        self._scalar_mh("sig_phi", lambda: st.sig_phi, lambda v: setattr(st, "sig_phi", v),
                        sig_phi, log_scale=True)

        def sig_kappa(sg):
            res = np.stack([st.kappa[:, 0], st.kappa[:, 1],
                            st.log_lam_kappa - st.ups_kappa[0]], axis=-1)
            return halfnormal_logpdf(sg, ssd) + normal_logpdf(res, 0.0, sg).sum(axis=0)
        self._scalar_mh("sig_kappa", lambda: st.sig_kappa, lambda v: setattr(st, "sig_kappa", v),
                        sig_kappa, log_scale=True)

    def update_rho(self):
        m, st = self.m, self.state
        if m.U == 0:
            return
        ad = self.ad["rho"]
        old = st.rho.copy()
        prop = expit(logit(old) + ad.scale * self.rng.standard_normal(m.U))
        a, b = m.cfg.rho_prior
        delta = (_beta_logpdf(prop, a, b) + _log_jac_logit(prop)
                 - _beta_logpdf(old, a, b) - _log_jac_logit(old))
        delta = np.where(np.isfinite(delta), delta, -np.inf)
        idx = np.arange(m.M)
        new = self._terms_delta(idx, self.t_nu, self.t_lphi, prop[self.tu], self.tu, m.U, delta)
        acc = self._accept(delta)
        hit = acc[self.tu]
        self.ll[hit] = new[hit]
        st.rho[acc] = prop[acc]
        ad.record(acc)
        ad.tick()

    def update_counts(self):
        m, st = self.m, self.state
        if m.G == 0:
            return
        ad = self.ad["counts"]
        t = self.imp_t
        ll = self.ll[t].copy()
        acc = _impute_sweep(m, st.counts, self.all_groups, t, self.imp_g, self.t_nu[t],
                            np.exp(self.t_lphi[t]), st.rho[self.tu[t]], ll, self.rng, ad.scale,
                            m.cfg.nu_clamp)
        if acc.any():
            self.ll[t] = ll
            v, n = m.term_counts(st.counts)
            self.v[t], self.n[t] = v[t], n[t]
            self.lch[t] = kernels.log_choose(n[t], v[t])
        ad.record(acc)
        ad.tick()

    def sweep(self):
        self.update_beta()
        self.update_log_phi()
        self.update_kappa()
        self.update_hierarchy()
        self.update_rho()
        self.update_counts()

    def adapt(self):
        for ad in self.ad.values():
            ad.adapt()

    def start_covariance(self):
        for ad in self.ad.values():
            if isinstance(ad, BlockAdapter):
                ad.collect = True

    def freeze(self):
        for ad in self.ad.values():
            ad.freeze()

    def scales(self):
        """Snapshot of every proposal scale (and block Cholesky factor)."""
        out = {}
        for k, ad in self.ad.items():
            out[k] = ad.scale.copy()
            if isinstance(ad, BlockAdapter):
                out[k + ".chol"] = ad.chol.copy()
        return out

    def acceptance(self):
        return {k: float(np.mean(ad.acceptance())) for k, ad in self.ad.items()
                if ad.acceptance().size}


# -- generic small models (used for exactness checks) -------------------------------------

@dataclass
class DensityModel:
    """A small model given directly by its log density.

    ``transforms`` names the unconstrained scale of each coordinate:
    ``"identity"``, ``"log"`` (positive) or ``"logit"`` (unit interval).
    """

    log_density: object
    names: list
    transforms: list
    init: object

    def addresses(self):
        return list(self.names)


class DensitySampler:
    """Univariate adaptive random-walk Metropolis for :class:`DensityModel`."""

    def __init__(self, model, config, rng):
        self.m, self.cfg, self.rng = model, config, rng
        for attempt in range(config.init_retries):
            x = np.asarray(model.init(rng), dtype=float)
            if np.isfinite(model.log_density(x)):
                break
        else:
            raise InitializationError("no finite starting point")
        self.x = x
        self.ad = {"x": ScaleAdapter(np.ones(x.size), config.target_accept_scalar)}
        self.lp = self._lp(self._to_y(x))

    def _to_y(self, x):
        y = x.copy()
        for i, t in enumerate(self.m.transforms):
            if t == "log":
                y[i] = np.log(x[i])
            elif t == "logit":
                y[i] = logit(x[i])
        return y

    def _lp(self, y):
        x = y.copy()
        jac = 0.0
        for i, t in enumerate(self.m.transforms):
            if t == "log":
                x[i] = np.exp(y[i])
                jac += y[i]
            elif t == "logit":
                x[i] = expit(y[i])
                jac += float(_log_jac_logit(x[i]))
        val = self.m.log_density(x)
        return val + jac if np.isfinite(val) else -np.inf

    def sweep(self):
        ad = self.ad["x"]
        y = self._to_y(self.x)
        acc = np.zeros(y.size, dtype=bool)
        for i in range(y.size):
            prop = y.copy()
            prop[i] += ad.scale[i] * self.rng.standard_normal()
            lp = self._lp(prop)
            if np.log(self.rng.random()) < lp - self.lp:
                y, self.lp, acc[i] = prop, lp, True
        self.x = self._from_y(y)
        ad.record(acc)
        ad.tick()

    def _from_y(self, y):
        x = y.copy()
        for i, t in enumerate(self.m.transforms):
            if t == "log":
                x[i] = np.exp(y[i])
            elif t == "logit":
                x[i] = expit(y[i])
        return x

    @property
    def state(self):
        return self.x

    def adapt(self):
        self.ad["x"].adapt()

    def start_covariance(self):
        pass

    def freeze(self):
        self.ad["x"].freeze()

    def scales(self):
        return {"x": self.ad["x"].scale.copy()}

    def acceptance(self):
        return {"x": float(np.mean(self.ad["x"].acceptance()))}


# -- chains and draws ------------------------------------------------------------------------

@dataclass
class ChainResult:
    values: np.ndarray          # (draws, parameters)
    iterations: np.ndarray      # retained iteration indices
    scales_at_freeze: dict
    scales_final: dict
    acceptance: dict
    final_state: object = None


def _flat(state):
    return state.flatten() if isinstance(state, ModelState) else np.asarray(state, dtype=float).copy()


def run_chain(model, config, chain_index, state=None, progress_every=0):
    """Run one chain; returns its thinned post-burn-in draws.

    The generator is derived from ``(config.seed, chain_index)`` so the result
    is a pure function of its arguments.
    """
    rng = chain_rng(config.seed, chain_index)
    if isinstance(model, FuelModel):
        sampler = FuelSampler(model, config, rng, state)
    else:
        sampler = DensitySampler(model, config, rng)
    keep = []
    kept_it = []
    frozen = None
    cov_start = config.burn_in // 4
    for it in range(config.iterations):
        if it == cov_start:
            sampler.start_covariance()
        sampler.sweep()
        if it < config.burn_in and (it + 1) % config.adapt_interval == 0:
            sampler.adapt()
        if it + 1 == config.burn_in:
            sampler.freeze()
            frozen = sampler.scales()
        if it >= config.burn_in and (it - config.burn_in) % config.thin == config.thin - 1:
            keep.append(_flat(sampler.state))
            kept_it.append(it)
        if progress_every and (it + 1) % progress_every == 0:
            log.info("chain %d: iteration %d/%d", chain_index, it + 1, config.iterations)
    if frozen is None:
        sampler.freeze()
        frozen = sampler.scales()
    values = np.array(keep).reshape(len(keep), -1)
    return ChainResult(values, np.array(kept_it, dtype=np.int64), frozen, sampler.scales(),
                       sampler.acceptance(), sampler.state)


@dataclass
class PosteriorDraws:
    """Thinned draws of every chain, addressed by parameter name.

    ``values`` has shape (chains, draws, parameters).
    """

    addresses: list
    values: np.ndarray
    iterations: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3 or self.values.shape[2] != len(self.addresses):
            raise ValueError("values must be (chains, draws, len(addresses))")
        self._index = {a: i for i, a in enumerate(self.addresses)}

    @property
    def n_chains(self):
        return self.values.shape[0]

    @property
    def n_draws(self):
        return self.values.shape[1]

    def index(self, address):
        return self._index[address]

    def param(self, address):
        return self.values[:, :, self._index[address]]

    def pooled(self):
        return self.values.reshape(-1, self.values.shape[2])

    def save(self, path):
        """Deterministic ``.npz``: the same draws give the same bytes."""
        arrays = {
            "address": np.array(self.addresses, dtype=str),
            "chain": np.repeat(np.arange(self.n_chains), self.n_draws).astype(np.int64),
            "iteration": np.tile(self.iterations, self.n_chains).astype(np.int64),
            "value": self.pooled(),
        }
        with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
            for name, arr in arrays.items():
                buf = io.BytesIO()
                np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
                info = zipfile.ZipInfo(name + ".npy", date_time=_ZIP_DATE)
                info.compress_type = zipfile.ZIP_DEFLATED
                zf.writestr(info, buf.getvalue())

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as z:
            addresses = [str(a) for a in z["address"]]
            chain = z["chain"]
            iteration = z["iteration"]
            value = z["value"]
        n_chains = int(chain.max()) + 1 if chain.size else 0
        values = value.reshape(n_chains, -1, len(addresses))
        iters = iteration[chain == 0]
        return cls(addresses, values, iters)


def run_chains(model, config, states=None):
    """Run ``config.chains`` independent chains (in worker processes when
    ``config.workers > 1``) and merge their draws."""
    jobs = range(config.chains)
    st = list(states) if states is not None else [None] * config.chains
    if config.workers > 1 and config.chains > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as ex:
            results = list(ex.map(run_chain, [model] * config.chains, [config] * config.chains,
                                  jobs, st))
    else:
        results = [run_chain(model, config, c, st[c]) for c in jobs]
    values = np.stack([r.values for r in results])
    draws = PosteriorDraws(model.addresses(), values, results[0].iterations,
                           meta={"acceptance": [r.acceptance for r in results]})
    draws.results = results
    return draws


def thin_and_burn(trace, burn_in, thin):
    """Retain iterations ``burn_in + thin - 1, burn_in + 2 thin - 1, ...`` of a
    full (iterations, ...) trace, matching :func:`run_chain`."""
    trace = np.asarray(trace)
    return trace[burn_in + thin - 1::thin]


# -- diagnostics -------------------------------------------------------------------------------

def psrf(chains, split=False):
    """Gelman-Rubin potential scale reduction factor.

    Parameters
    ----------
    chains : array_like, shape (m, n)
        One row per chain.
    split : bool
        Halve every chain first (split-R).

    Returns
    -------
    float
        ``sqrt(V / W)`` with ``V = (n-1)/n W + (1 + 1/m) B/n``; 1.0 for
        zero-variance traces.
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 10:
        raise ValueError("need at least 2 chains of length >= 10")
    if split:
        h = x.shape[1] // 2
        x = np.concatenate([x[:, :h], x[:, h:2 * h]], axis=0)
    m, n = x.shape
    means = x.mean(axis=1)
    W = x.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    if W <= 0:
        return 1.0
    V = (n - 1) / n * W + (1 + 1 / m) * B / n
    return float(np.sqrt(V / W))


def monitored_traces(draws, model):
    """Traces of the relative means at every observed (node, area, country,
    year) and of every log dispersion: dict name -> (chains, draws)."""
    keys = set()
    for s_, a_, c_, t_ in zip(model.term_node, model.term_area, model.term_country, model.term_t):
        for a in ((a_,) if a_ != OVERALL else (URBAN, RURAL)):
            keys.add((int(s_), int(a), int(c_), int(t_)))
    keys = sorted(keys)
    s, a, c, t = (np.array(k, dtype=np.int64) for k in zip(*keys)) if keys else [np.zeros(0, int)] * 4
    beta_idx = [draws.index(x) for x in model.addresses() if x.startswith("beta[")]
    shape = (model.S, 2, model.C, model.P)
    out_nu = np.empty((draws.n_chains, draws.n_draws, len(keys)))
    D = model.D
    for ch in range(draws.n_chains):
        B = draws.values[ch][:, beta_idx].reshape((draws.n_draws,) + shape)
        out_nu[ch] = expit(np.einsum("dkp,kp->dk", B[:, s, a, c, :], D[t]))
    res = {}
    for i, (s_, a_, c_, t_) in enumerate(keys):
        res[f"nu[{model.h.nu_nodes[s_]},{('urban', 'rural')[a_]},{model.countries[c_]},"
            f"{model.years[t_]}]"] = out_nu[:, :, i]
    for addr in model.addresses():
        if addr.startswith("log_phi["):
            res["phi" + addr[len("log_phi"):]] = draws.param(addr)
    return res


def psrf_summary(draws, model, threshold=1.05, split=False):
    tr = monitored_traces(draws, model)
    vals = {k: psrf(v, split) for k, v in tr.items()}
    arr = np.array(list(vals.values()))
    return {"values": vals, "fraction_below": float(np.mean(arr < threshold)) if arr.size else 1.0,
            "max": float(arr.max()) if arr.size else 1.0}


# -- posterior predictive ---------------------------------------------------------------------

def observation_parameters(model, state, un_offsets_only=False):
    """Relative means and dispersions at every observation: two (O, S) arrays."""
    tr = model.trend(state)
    lpi = model.logit_pi(state, un_offsets_only=un_offsets_only)
    c, t, a = model.obs_country, model.obs_t, model.obs_area
    O, S = c.size, model.S
    nu = np.empty((O, S))
    lphi = np.empty((O, S))
    d = a != OVERALL
    nu[d] = expit(tr[:, a[d], c[d], t[d]]).T
    lphi[d] = state.log_phi[:, a[d], c[d]].T
    o = ~d
    if o.any():
        nu[o] = model.mix_relative(expit(tr[:, URBAN, c[o], t[o]]).T,
                                   expit(tr[:, RURAL, c[o], t[o]]).T, expit(lpi[c[o], t[o]]))
        lphi[o] = 0.5 * (state.log_phi[:, URBAN, c[o]] + state.log_phi[:, RURAL, c[o]]).T
    return model.clamp_nu(nu), lphi


def simulate_tiers(hierarchy, N, nu, lphi, rng, rho=None):
    """Node counts (O, nodes) drawn from the tiered conditional model.

    ``nu`` and ``lphi`` are (O, S) relative means and log dispersions.  With
    ``rho`` given, each conditional draw is replaced by a uniform count with
    probability ``1 - rho``.
    """
    h = hierarchy
    O = nu.shape[0]
    out = np.zeros((O, len(h.nodes)), dtype=np.int64)
    phi = np.exp(lphi)
    for tier in h.tiers:
        if tier.parent is None:
            rest = np.full(O, N, dtype=np.int64)
        else:
            rest = out[:, h.node_index[tier.parent]].copy()
        for child in tier.children[:-1]:
            s = h.nu_index[child]
            p = rng.beta(nu[:, s] * phi[:, s], (1 - nu[:, s]) * phi[:, s])
            v = rng.binomial(rest, p)
            if rho is not None:
                unif = rng.random(O) >= rho
                v = np.where(unif, np.floor(rng.random(O) * (rest + 1)).astype(np.int64), v)
            out[:, h.node_index[child]] = v
            rest = rest - v
        out[:, h.node_index[tier.children[-1]]] = rest
    return out


def observed_items(model):
    """Observed counts as proportions: arrays (obs index, node index, value)."""
    h = model.h
    oi, ni, val = [], [], []
    for q in range(model.rec_obs.size):
        tier = h.tiers[model.rec_tier[q]]
        for p, child in enumerate(tier.children):
            if model.rec_observed[q, p]:
                oi.append(model.rec_obs[q])
                ni.append(h.node_index[child])
                val.append(model.counts0[q, p] / model.cfg.N)
    return np.array(oi, dtype=np.int64), np.array(ni, dtype=np.int64), np.array(val)


def posterior_replicates(draws, model, rng, max_draws=1000, include_outliers=False):
    """Replicate proportions for every observation and node.

    Returns an array (draws, O, nodes) of ``v / N``.  By default replicates
    come from the Beta-Binomial component only (see ``include_outliers``).
    """
    pooled = draws.pooled()
    if pooled.shape[0] == 0:
        raise ValueError("no draws")
    if pooled.shape[0] > max_draws:
        pick = np.linspace(0, pooled.shape[0] - 1, max_draws).round().astype(int)
        pooled = pooled[pick]
    out = np.empty((pooled.shape[0], model.obs_country.size, len(model.h.nodes)))
    for d, flat in enumerate(pooled):
        st = model.unflatten(flat)
        nu, lphi = observation_parameters(model, st)
        rho = st.rho[model.obs_survey] if include_outliers else None
        out[d] = simulate_tiers(model.h, model.cfg.N, nu, lphi, rng, rho) / model.cfg.N
    return out


def coverage(replicates, observations, level=0.95):
    """Fraction of observations inside the central ``level`` interval of
    their replicate distribution (columns of ``replicates``)."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    rep = np.asarray(replicates, dtype=float)
    obs = np.asarray(observations, dtype=float)
    if obs.size == 0:
        raise ValueError("no observations")
    rep = rep.reshape(rep.shape[0], -1)
    obs = obs.ravel()
    lo, hi = np.quantile(rep, [(1 - level) / 2, (1 + level) / 2], axis=0)
    return float(np.mean((obs >= lo) & (obs <= hi)))
