# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels for the Beta-Binomial outlier-mixture likelihood.

Every function here has a numpy twin in :mod:`fuelmix._pykernels` with the
same signature; :mod:`fuelmix.kernels` picks one at import time.
"""

import numpy as np

from libc.math cimport lgamma, log, log1p, exp, INFINITY

cdef inline double _logaddexp(double a, double b) noexcept nogil:
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a > b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


cdef inline double _term(double v, double n, double lch, double nu, double phi,
                         double rho, double lo, double hi) noexcept nogil:
    cdef double a, b, lbb, lu
    if nu < lo:
        nu = lo
    elif nu > hi:
        nu = hi
    a = nu * phi
    b = (1.0 - nu) * phi
    lbb = (lch + lgamma(v + a) + lgamma(n - v + b) - lgamma(n + a + b)
           + lgamma(a + b) - lgamma(a) - lgamma(b))
    if rho >= 1.0:
        return lbb
    lu = -log(n + 1.0)
    if rho <= 0.0:
        return lu
    return _logaddexp(log(rho) + lbb, log1p(-rho) + lu)


def log_choose(const double[::1] n, const double[::1] v):
    """Elementwise log binomial coefficient ``log C(n, v)``."""
    cdef Py_ssize_t i, m = n.shape[0]
    res = np.empty(m)
    cdef double[::1] r = res
    with nogil:
        for i in range(m):
            r[i] = lgamma(n[i] + 1.0) - lgamma(v[i] + 1.0) - lgamma(n[i] - v[i] + 1.0)
    return res


def bb_mix_logpmf(const double[::1] v, const double[::1] n, const double[::1] lchoose,
                  const double[::1] nu, const double[::1] phi, const double[::1] rho,
                  double[::1] out, double nu_clamp=1e-12):
    """Per-term log mass of ``rho * BetaBinomial + (1 - rho) * Uniform{0..n}``."""
    cdef Py_ssize_t i, m = v.shape[0]
    cdef double lo = nu_clamp, hi = 1.0 - nu_clamp
    with nogil:
        for i in range(m):
            out[i] = _term(v[i], n[i], lchoose[i], nu[i], phi[i], rho[i], lo, hi)
    return out


def bb_mix_delta(const double[::1] v, const double[::1] n, const double[::1] lchoose,
                 const double[::1] nu, const double[::1] phi, const double[::1] rho,
                 const double[::1] old, const long[::1] group, double[::1] out_terms,
                 double[::1] out_delta, double nu_clamp=1e-12):
    """Fill ``out_terms`` with new term values and add ``new - old`` into
    ``out_delta[group[i]]``.  ``out_delta`` is not zeroed here."""
    cdef Py_ssize_t i, m = v.shape[0]
    cdef double lo = nu_clamp, hi = 1.0 - nu_clamp, t
    with nogil:
        for i in range(m):
            t = _term(v[i], n[i], lchoose[i], nu[i], phi[i], rho[i], lo, hi)
            out_terms[i] = t
            out_delta[group[i]] += t - old[i]
    return out_delta


def mix_relative(const double[:, ::1] nu_u, const double[:, ::1] nu_r, const double[::1] pi,
                 const long[::1] tier_k, const long[::1] tier_parent, const long[::1] nu_idx,
                 const long[::1] node_idx, double clamp, double[:, ::1] out):
    """Relative means of ``pi * mu_urban + (1 - pi) * mu_rural`` row by row.

    Tiers are described by their sizes ``tier_k``, parent node (``-1`` for the
    top tier) and the concatenated relative-mean / node indices of their
    children, in hierarchy order.
    """
    cdef Py_ssize_t rows = nu_u.shape[0], ntier = tier_k.shape[0]
    cdef Py_ssize_t n_nodes = node_idx.shape[0]
    cdef double[::1] au = np.empty(n_nodes)
    cdef double[::1] ar = np.empty(n_nodes)
    cdef double[::1] mx = np.empty(n_nodes)
    cdef Py_ssize_t r, ti, j, k, so, no, node
    cdef double ru, rr, x, w, tail, hi = 1.0 - clamp
    for r in range(rows):
        w = pi[r]
        so = 0
        no = 0
        for ti in range(ntier):
            k = tier_k[ti]
            if tier_parent[ti] < 0:
                ru = 1.0
                rr = 1.0
            else:
                ru = au[tier_parent[ti]]
                rr = ar[tier_parent[ti]]
            for j in range(k - 1):
                node = node_idx[no + j]
                x = nu_u[r, nu_idx[so + j]]
                x = clamp if x < clamp else (hi if x > hi else x)
                au[node] = ru * x
                ru = ru * (1.0 - x)
                x = nu_r[r, nu_idx[so + j]]
                x = clamp if x < clamp else (hi if x > hi else x)
                ar[node] = rr * x
                rr = rr * (1.0 - x)
            node = node_idx[no + k - 1]
            au[node] = ru
            ar[node] = rr
            tail = 0.0
            for j in range(k - 1, -1, -1):
                node = node_idx[no + j]
                mx[node] = w * au[node] + (1.0 - w) * ar[node]
                tail = tail + mx[node]
                if j < k - 1:
                    out[r, nu_idx[so + j]] = mx[node] / tail
            so += k - 1
            no += k
    return out
