"""Low-rank penalized thin-plate regression splines in one dimension (time).

The basis is built on a fixed grid of integer years.  Time is mapped to
``[0, 1]`` over the grid, the cubic thin-plate kernel ``|r|**3 / 12`` is
evaluated between grid points, and the kernel restricted to functions
orthogonal to ``{1, t}`` is eigen-truncated to its ``K - 1`` leading
directions.  Those columns are made orthogonal to ``{1, t}`` on the grid and
scaled to unit RMS, so the nonlinear penalty is diagonal.  The design then
has a centred linear column followed by ``K - 1`` nonlinear columns; the
intercept is carried separately by :class:`SplineBlock`.
"""

from dataclasses import dataclass, field

import numpy as np


def _kernel(a, b):
    return np.abs(a[:, None] - b[None, :]) ** 3 / 12.0


@dataclass(frozen=True)
class SplineBasis:
    """Design matrix ``X`` (years x K) and nonlinear penalty (K-1 x K-1).

    Column 0 of ``X`` is linear in time; columns ``1..K-1`` are the thin-plate
    terms.  ``penalty`` is symmetric PSD with largest eigenvalue 1.
    """

    X: np.ndarray
    penalty: np.ndarray
    years: np.ndarray
    K: int
    # evaluation internals for arbitrary years
    _origin: float = field(repr=False, default=0.0)
    _span: float = field(repr=False, default=1.0)
    _knots: np.ndarray = field(repr=False, default=None)
    _project: np.ndarray = field(repr=False, default=None)   # (n_knots, K-1)
    _null_coef: np.ndarray = field(repr=False, default=None)  # (2, K-1)
    _scale: np.ndarray = field(repr=False, default=None)      # (K-1,)
    _t_mean: float = field(repr=False, default=0.0)

    @property
    def penalty_diag(self):
        return np.diag(self.penalty).copy()

    def standardize(self, years):
        return (np.asarray(years, dtype=float) - self._origin) / self._span

    def design(self, years):
        """``X`` rows for arbitrary (possibly out-of-grid) years.

        Beyond the grid the nonlinear columns continue linearly, which is
        the natural extrapolation of a cubic thin-plate spline.
        """
        t = self.standardize(np.atleast_1d(years))
        nonlin = _kernel(t, self._knots) @ self._project
        nonlin -= np.column_stack([np.ones_like(t), t]) @ self._null_coef
        nonlin /= self._scale
        return np.column_stack([t - self._t_mean, nonlin])

    def full_design(self, years=None):
        """Design with a leading intercept column (``years x (K+1)``)."""
        X = self.X if years is None else self.design(years)
        return np.column_stack([np.ones(X.shape[0]), X])


def build_thin_plate_basis(years, K=10, origin=None, span=None):
    """Build a rank-``K`` thin-plate basis over strictly increasing ``years``.

    ``origin`` and ``span`` fix the map of years onto ``[0, 1]``; by default
    the first year and the range of ``years`` are used.
    """
    years = np.asarray(years)
    if years.ndim != 1 or years.size < 2:
        raise ValueError("years must be a 1-d vector")
    if np.any(np.diff(years) <= 0):
        raise ValueError("years must be strictly increasing")
    T = years.size
    if K < 3:
        raise ValueError("K must be at least 3")
    if K > T - 1:
        raise ValueError(f"K={K} needs at least {K + 1} distinct years, got {T}")
    origin = float(years[0]) if origin is None else float(origin)
    span = float(years[-1] - years[0]) if span is None else float(span)
    t = (years.astype(float) - origin) / span

    null = np.column_stack([np.ones(T), t])
    q, _ = np.linalg.qr(null, mode="complete")
    Z = q[:, 2:]
    E = _kernel(t, t)
    evals, evecs = np.linalg.eigh(Z.T @ E @ Z)
    keep = np.argsort(evals)[::-1][: K - 1]
    evals = evals[keep]
    project = Z @ evecs[:, keep]

    nonlin = E @ project
    null_coef, *_ = np.linalg.lstsq(null, nonlin, rcond=None)
    nonlin = nonlin - null @ null_coef
    scale = np.sqrt(np.mean(nonlin**2, axis=0))
    nonlin = nonlin / scale

    pen = evals / scale**2
    pen = pen / pen.max()
    t_mean = float(t.mean())
    X = np.column_stack([t - t_mean, nonlin])
    return SplineBasis(
        X=X, penalty=np.diag(pen), years=years.copy(), K=int(K),
        _origin=origin, _span=span, _knots=t, _project=project,
        _null_coef=null_coef, _scale=scale, _t_mean=t_mean,
    )


@dataclass
class SplineBlock:
    """Coefficients of one trend: intercept, linear term, nonlinear block and
    the log smoothing parameter."""

    basis: SplineBasis
    intercept: float = 0.0
    linear: float = 0.0
    nonlinear: np.ndarray = None
    log_lambda: float = 0.0

    def __post_init__(self):
        if self.nonlinear is None:
            self.nonlinear = np.zeros(self.basis.K - 1)
        self.nonlinear = np.asarray(self.nonlinear, dtype=float)
        if self.nonlinear.shape != (self.basis.K - 1,):
            raise ValueError(f"nonlinear block must have {self.basis.K - 1} entries")

    @property
    def lam(self):
        return float(np.exp(self.log_lambda))

    @property
    def coefficients(self):
        return np.concatenate([[self.intercept, self.linear], self.nonlinear])

    @classmethod
    def from_coefficients(cls, basis, coef, log_lambda=0.0):
        coef = np.asarray(coef, dtype=float)
        return cls(basis, float(coef[0]), float(coef[1]), coef[2:].copy(), log_lambda)


def evaluate_trend(block, year):
    """``f(t) = b0 + b1 X[t, 0] + sum_k b_k X[t, k]`` at one or more years."""
    X = block.basis.design(year)
    out = block.intercept + X[:, 0] * block.linear + X[:, 1:] @ block.nonlinear
    return float(out[0]) if np.ndim(year) == 0 else out


def penalty_quadform(block):
    """``lambda * w' Omega w`` for the nonlinear coefficients ``w``."""
    w = block.nonlinear
    return block.lam * float(w @ block.basis.penalty @ w)


def mvn_penalty_logpdf(w, mean, log_lam, pen_diag):
    """Log density of ``w ~ MVN(mean, (lambda * Omega)^-1)`` for diagonal
    ``Omega``.  Broadcasts over leading axes."""
    d = np.asarray(w) - np.asarray(mean)
    lam = np.exp(np.minimum(log_lam, 700.0))
    m = pen_diag.size
    return (0.5 * m * (log_lam - np.log(2 * np.pi)) + 0.5 * np.sum(np.log(pen_diag))
            - 0.5 * lam * np.sum(pen_diag * d * d, axis=-1))
