"""Generalized Dirichlet (GD), GD-Multinomial, Beta-Binomial and the
Beta-Binomial / discrete-Uniform outlier mixture.

Parameters follow the stick-breaking convention: for ``k`` categories there
are ``k - 1`` pairs ``(alpha_i, beta_i)``; the relative mean of category
``i`` among those not in categories ``1..i-1`` is ``alpha_i / (alpha_i +
beta_i)``.  All densities are evaluated in log space through log-gamma.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import betaln, gammaln


class DomainError(ValueError):
    """Argument outside the support or parameter space of a distribution."""


@dataclass(frozen=True)
class GDParams:
    """Shape parameters of a Generalized Dirichlet on ``k`` categories."""

    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        if alpha.shape != beta.shape or alpha.ndim != 1:
            raise DomainError("alpha and beta must be 1-d vectors of equal length")
        if not (np.all(alpha > 0) and np.all(beta > 0)):
            raise DomainError("alpha and beta must be strictly positive")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    @property
    def k(self):
        return self.alpha.size + 1

    @classmethod
    def from_relative(cls, nu, phi):
        a, b = reparam(nu, phi)
        return cls(a, b)

    def to_relative(self):
        return RelativeMeanParams(self.alpha / (self.alpha + self.beta), self.alpha + self.beta)


@dataclass(frozen=True)
class RelativeMeanParams:
    """Relative means ``nu`` in (0, 1) and dispersions ``phi > 0``."""

    nu: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        nu = np.atleast_1d(np.asarray(self.nu, dtype=float))
        phi = np.atleast_1d(np.asarray(self.phi, dtype=float))
        if nu.shape != phi.shape:
            raise DomainError("nu and phi must have equal length")
        if np.any(nu <= 0) or np.any(nu >= 1) or np.any(phi <= 0):
            raise DomainError("need 0 < nu < 1 and phi > 0")
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "phi", phi)

    def to_gd(self):
        return GDParams(*reparam(self.nu, self.phi))


@dataclass(frozen=True)
class CountVector:
    """Category counts ``v`` with ``sum(v) == total``."""

    v: np.ndarray
    total: int

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.v)).astype(np.int64)
        if np.any(v < 0):
            raise DomainError("counts must be non-negative")
        if int(v.sum()) != int(self.total):
            raise DomainError(f"counts sum to {int(v.sum())}, expected total {self.total}")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "total", int(self.total))

    def __len__(self):
        return self.v.size


def reparam(nu, phi):
    """Map relative mean and dispersion to Beta shapes: ``(nu*phi, (1-nu)*phi)``."""
    nu = np.asarray(nu, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if np.any(nu <= 0) or np.any(nu >= 1):
        raise DomainError("nu must lie strictly inside (0, 1)")
    if np.any(phi <= 0):
        raise DomainError("phi must be positive")
    alpha = nu * phi
    beta = (1.0 - nu) * phi
    if alpha.ndim == 0:
        return float(alpha), float(beta)
    return alpha, beta


def marginal_means(nu):
    """Marginal category means from stick-breaking relative means.

    ``mu_1 = nu_1``, ``mu_j = nu_j * prod_{i<j} (1 - nu_i)`` and the last
    category takes the leftover stick ``prod_i (1 - nu_i)``.  Works on the
    last axis, so a ``(..., k-1)`` array gives ``(..., k)``.
    """
    nu = np.asarray(nu, dtype=float)
    if np.any(nu < 0) or np.any(nu > 1):
        raise DomainError("relative means must lie in [0, 1]")
    rest = np.cumprod(1.0 - nu, axis=-1)
    before = np.concatenate([np.ones(nu.shape[:-1] + (1,)), rest[..., :-1]], axis=-1)
    return np.concatenate([nu * before, rest[..., -1:]], axis=-1)


def relative_means_from_marginal(mu):
    """Inverse of :func:`marginal_means`: ``nu_j = mu_j / sum_{i>=j} mu_i``.

    The tail sum is used instead of ``1 - sum_{i<j} mu_i`` for accuracy; the
    two agree on the simplex.
    """
    mu = np.asarray(mu, dtype=float)
    if np.any(mu < 0):
        raise DomainError("marginal means must be non-negative")
    tail = np.cumsum(mu[..., ::-1], axis=-1)[..., ::-1]
    head = tail[..., :-1]
    if np.any(head <= 0) or np.any(mu[..., :-1] > head * (1 + 1e-12)):
        raise DomainError("partial sums leave no mass for later categories")
    return mu[..., :-1] / head


def log_pdf_gd(p, params):
    """Log density of the Generalized Dirichlet at an interior simplex point."""
    p = np.asarray(p, dtype=float)
    a, b = params.alpha, params.beta
    if p.shape[-1] != a.size + 1:
        raise DomainError(f"expected {a.size + 1} proportions, got {p.shape[-1]}")
    if np.any(p <= 0):
        raise DomainError("proportions must be strictly positive")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-12):
        raise DomainError("proportions must sum to 1")
    # tail[i] = sum_{j >= i} p_j
    tail = np.cumsum(p[..., ::-1], axis=-1)[..., ::-1]
    # exponent of tail_i is beta_{i-1} - (alpha_i + beta_i), beta_0 := 0 has
    # no tail factor since tail_1 = 1.
    beta_prev = np.concatenate([[0.0], b[:-1]])
    out = (b[-1] - 1.0) * np.log(p[..., -1])
    out = out + np.sum((a - 1.0) * np.log(p[..., :-1]) - betaln(a, b)
                       + (beta_prev - a - b) * np.log(tail[..., :-1]), axis=-1)
    return out


def log_pmf_beta_binomial(v, alpha, beta, n):
    """``log[C(n, v) B(v + alpha, n - v + beta) / B(alpha, beta)]``."""
    v = np.asarray(v)
    n = np.asarray(n)
    if np.any(v < 0) or np.any(v > n):
        raise DomainError("need 0 <= v <= n")
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if np.any(alpha <= 0) or np.any(beta <= 0):
        raise DomainError("alpha and beta must be positive")
    v = v.astype(float)
    n = n.astype(float)
    out = (gammaln(n + 1) - gammaln(v + 1) - gammaln(n - v + 1)
           + betaln(v + alpha, n - v + beta) - betaln(alpha, beta))
    return out[()] if out.ndim == 0 else out


def log_pmf_outlier_mixture(v, alpha, beta, n, rho):
    """Log mass of ``rho * BetaBinomial(v; alpha, beta, n) + (1 - rho) / (n + 1)``.

    The Uniform component lives on ``{0, ..., n}``, so its mass is
    ``1 / (n + 1)``; ``rho`` is the weight of the Beta-Binomial part.
    """
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0) or np.any(rho > 1):
        raise DomainError("rho must lie in [0, 1]")
    lbb = log_pmf_beta_binomial(v, alpha, beta, n)
    lu = -np.log(np.asarray(n, dtype=float) + 1.0)
    with np.errstate(divide="ignore"):
        out = np.logaddexp(np.log(rho) + lbb, np.log1p(-rho) + lu)
    out = np.where(rho >= 1, lbb, np.where(rho <= 0, lu, out))
    return out[()] if np.ndim(out) == 0 else out


def log_pmf_gdm(counts, params):
    """Log mass of the GD-Multinomial, evaluated in closed form.

    Uses the product form over categories (not the Beta-Binomial chain), so
    it can serve as an independent check of that factorization.
    """
    v = counts.v.astype(float)
    a, b = params.alpha, params.beta
    if v.size != a.size + 1:
        raise DomainError(f"{v.size} counts for {a.size + 1} categories")
    n = float(counts.total)
    tail = np.cumsum(v[::-1])[::-1]  # tail[i] = sum_{j >= i} v_j
    out = gammaln(n + 1.0) - gammaln(v[-1] + 1.0)
    out += np.sum(gammaln(v[:-1] + a) + gammaln(tail[1:] + b) - betaln(a, b)
                  - gammaln(v[:-1] + 1.0) - gammaln(a + b + tail[:-1]))
    return float(out)


def log_pmf_gdm_chain(counts, params):
    """GDM log mass as the sum of sequential Beta-Binomial conditionals."""
    v = counts.v
    trials = counts.total - np.concatenate([[0], np.cumsum(v)[:-2]])
    return float(np.sum(log_pmf_beta_binomial(v[:-1], params.alpha, params.beta, trials)))


def sample_gdm(params, n, rng):
    """Draw one count vector by sequential Beta then Binomial draws."""
    n = int(n)
    if n < 0:
        raise DomainError("n must be non-negative")
    k = params.k
    v = np.zeros(k, dtype=np.int64)
    left = n
    for i in range(k - 1):
        if left == 0:
            break
        p = rng.beta(params.alpha[i], params.beta[i])
        v[i] = rng.binomial(left, p)
        left -= v[i]
    v[-1] += left
    return CountVector(v, n)


def sample_gdm_many(alpha, beta, n, rng):
    """Vectorized :func:`sample_gdm` over rows.

    ``alpha`` and ``beta`` have shape ``(m, k-1)``; ``n`` has shape ``(m,)``.
    Returns an ``(m, k)`` integer array.
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    left = np.asarray(n, dtype=np.int64).copy()
    m, km1 = alpha.shape
    out = np.zeros((m, km1 + 1), dtype=np.int64)
    for i in range(km1):
        p = rng.beta(alpha[:, i], beta[:, i])
        out[:, i] = rng.binomial(left, p)
        left -= out[:, i]
    out[:, -1] = left
    return out


def log_pmf_dirichlet_multinomial(v, conc):
    """Dirichlet-Multinomial log mass, used as an independent reference."""
    v = np.asarray(v, dtype=float)
    conc = np.asarray(conc, dtype=float)
    n = v.sum()
    a0 = conc.sum()
    return float(gammaln(n + 1) + gammaln(a0) - gammaln(n + a0)
                 + np.sum(gammaln(v + conc) - gammaln(conc) - gammaln(v + 1)))


def log_pdf_dirichlet(p, conc):
    p = np.asarray(p, dtype=float)
    conc = np.asarray(conc, dtype=float)
    return (gammaln(conc.sum()) - np.sum(gammaln(conc))
            + np.sum((conc - 1.0) * np.log(p), axis=-1))


def dirichlet_as_gd(conc):
    """GD shapes that reproduce ``Dirichlet(conc)``:
    ``alpha_i = conc_i``, ``beta_i = sum_{j > i} conc_j``."""
    conc = np.asarray(conc, dtype=float)
    tail = np.cumsum(conc[::-1])[::-1]
    return GDParams(conc[:-1], tail[1:])
