"""Pure numpy fallback for :mod:`fuelmix._ckernels` (identical signatures)."""

import numpy as np
from scipy.special import gammaln


def log_choose(n, v):
    """Elementwise log binomial coefficient ``log C(n, v)``."""
    n = np.asarray(n, dtype=float)
    v = np.asarray(v, dtype=float)
    return gammaln(n + 1.0) - gammaln(v + 1.0) - gammaln(n - v + 1.0)


def _terms(v, n, lchoose, nu, phi, rho, nu_clamp):
    nu = np.clip(nu, nu_clamp, 1.0 - nu_clamp)
    a = nu * phi
    b = (1.0 - nu) * phi
    lbb = (lchoose + gammaln(v + a) + gammaln(n - v + b) - gammaln(n + a + b)
           + gammaln(a + b) - gammaln(a) - gammaln(b))
    lu = -np.log(n + 1.0)
    with np.errstate(divide="ignore"):
        mixed = np.logaddexp(np.log(rho) + lbb, np.log1p(-rho) + lu)
    return np.where(rho >= 1.0, lbb, np.where(rho <= 0.0, lu, mixed))


def bb_mix_logpmf(v, n, lchoose, nu, phi, rho, out, nu_clamp=1e-12):
    """Per-term log mass of ``rho * BetaBinomial + (1 - rho) * Uniform{0..n}``."""
    out[:] = _terms(v, n, lchoose, nu, phi, rho, nu_clamp)
    return out


def bb_mix_delta(v, n, lchoose, nu, phi, rho, old, group, out_terms, out_delta,
                 nu_clamp=1e-12):
    """Fill ``out_terms`` with new term values and add ``new - old`` into
    ``out_delta[group[i]]``.  ``out_delta`` is not zeroed here."""
    out_terms[:] = _terms(v, n, lchoose, nu, phi, rho, nu_clamp)
    out_delta += np.bincount(group, weights=out_terms - old, minlength=out_delta.shape[0])
    return out_delta


def mix_relative(nu_u, nu_r, pi, tier_k, tier_parent, nu_idx, node_idx, clamp, out):
    """Relative means of ``pi * mu_urban + (1 - pi) * mu_rural`` row by row.

    Tiers are described by their sizes ``tier_k``, parent node (``-1`` for the
    top tier) and the concatenated relative-mean / node indices of their
    children, in hierarchy order.
    """
    rows = nu_u.shape[0]
    n_nodes = node_idx.shape[0]
    au = np.empty((rows, n_nodes))
    ar = np.empty((rows, n_nodes))
    w = np.asarray(pi)[:, None]
    so = no = 0
    for k, parent in zip(tier_k, tier_parent):
        ks = nu_idx[so: so + k - 1]
        kn = node_idx[no: no + k]
        ru = np.ones(rows) if parent < 0 else au[:, parent]
        rr = np.ones(rows) if parent < 0 else ar[:, parent]
        xu = np.clip(nu_u[:, ks], clamp, 1.0 - clamp)
        xr = np.clip(nu_r[:, ks], clamp, 1.0 - clamp)
        cu = np.cumprod(1.0 - xu, axis=1)
        cr = np.cumprod(1.0 - xr, axis=1)
        bu = np.concatenate([np.ones((rows, 1)), cu[:, :-1]], axis=1)
        br = np.concatenate([np.ones((rows, 1)), cr[:, :-1]], axis=1)
        au[:, kn[:-1]] = ru[:, None] * xu * bu
        au[:, kn[-1]] = ru * cu[:, -1]
        ar[:, kn[:-1]] = rr[:, None] * xr * br
        ar[:, kn[-1]] = rr * cr[:, -1]
        mx = w * au[:, kn] + (1.0 - w) * ar[:, kn]
        tail = np.cumsum(mx[:, ::-1], axis=1)[:, ::-1]
        out[:, ks] = mx[:, :-1] / tail[:, :-1]
        so += k - 1
        no += k
    return out
