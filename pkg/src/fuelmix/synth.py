"""Synthetic survey corpora simulated from the tiered model itself.

Used by the calibration and forecasting experiments and by the ``synth``
CLI verb.  The generating process follows the model: spline trends built in
the fitted basis, log-normal dispersions, UN-style urban shares with a
country deviation, and a few whole surveys replaced by uniform noise.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .data import SurveyObservation, UnUrbanSeries
from .hierarchy import FuelHierarchy, RegionMap
from .mcmc import simulate_tiers
from .splines import build_thin_plate_basis

# logit relative means (urban, rural) at the start of the period, per nu node
_BASE = {
    "solid": (-1.1, 0.9), "kerosene": (-1.4, -0.8), "gas": (0.4, 0.0),
    "electricity": (0.0, -0.4), "biomass": (0.4, 1.7), "charcoal": (0.8, 0.4),
    "wood": (0.8, 1.4), "cropwaste": (0.0, 0.0),
}
# slope over the whole period (standardized time runs 0..1)
_SLOPE = {"solid": -1.2, "kerosene": -0.5, "gas": 0.8, "electricity": 0.3}


@dataclass
class SyntheticCorpus:
    """A simulated data set together with the values that generated it."""

    records: list
    un_urban: UnUrbanSeries
    regions: RegionMap
    years: np.ndarray
    trend: np.ndarray            # (S, 2, C, T) logit relative means
    log_phi: np.ndarray          # (S, 2, C)
    urban_logit: np.ndarray      # (C, T) true logit urban share
    countries: list
    outlier_surveys: set = field(default_factory=set)


def synthesize_corpus(rng, n_countries=8, n_regions=2, surveys_per_country=30, N=100000,
                      year_min=1990, year_max=2017, K=10, outlier_rate=0.02,
                      hierarchy=None, phi_median=60.0):
    """Simulate a survey corpus.

    Parameters
    ----------
    rng : numpy.random.Generator
    n_countries, n_regions : int
        Countries are spread evenly over regions, all in one super-region.
    surveys_per_country : int
        Survey years are drawn uniformly over the period.
    outlier_rate : float
        Probability that a survey is pure noise (every conditional count
        uniform); at least one such survey is forced when the rate is positive.

    Returns
    -------
    SyntheticCorpus
    """
    h = hierarchy or FuelHierarchy.default()
    years = np.arange(year_min, year_max + 1)
    T = years.size
    basis = build_thin_plate_basis(years, K)
    D = basis.full_design()
    pen = basis.penalty_diag
    S, C = h.S, n_countries
    countries = [f"C{i + 1:02d}" for i in range(C)]
    region_of = np.arange(C) % n_regions
    regions = RegionMap.from_rows([(c, f"R{region_of[i] + 1}", "SR1")
                                   for i, c in enumerate(countries)])

    def nl(lam, size):
        return rng.normal(0.0, 1.0, size + (pen.size,)) / np.sqrt(lam * pen)

    coef = np.zeros((S, 2, C, K + 1))
    for s, node in enumerate(h.nu_nodes):
        for a in range(2):
            reg_int = _BASE.get(node, (0.0, 0.0))[a] + rng.normal(0, 0.4, n_regions)
            reg_slope = _SLOPE.get(node, 0.0) + rng.normal(0, 0.3, n_regions)
            reg_nl = nl(3000.0, (n_regions,))
            coef[s, a, :, 0] = reg_int[region_of] + rng.normal(0, 0.4, C)
            coef[s, a, :, 1] = reg_slope[region_of] + rng.normal(0, 0.3, C)
            coef[s, a, :, 2:] = reg_nl[region_of] + nl(8000.0, (C,))
    trend = coef @ D.T
    log_phi = np.log(phi_median) + rng.normal(0, 0.3, (S, 2, C))

    start = rng.uniform(0.2, 0.5, C)
    rise = rng.uniform(0.05, 0.2, C)
    P = np.clip(start[:, None] + rise[:, None] * np.linspace(0, 1, T)[None, :], 0.01, 0.99)
    un = UnUrbanSeries({c: P[i] for i, c in enumerate(countries)}, years)
    kappa0 = rng.normal(0, 0.15, C)
    kappa1 = rng.normal(0, 0.15, C)
    t01 = basis.full_design()[:, 1]
    urban_logit = np.log(P / (1 - P)) + kappa0[:, None] + kappa1[:, None] * t01[None, :]

    records = []
    outliers = set()
    n_surveys = C * surveys_per_country
    forced = int(rng.integers(n_surveys)) if outlier_rate > 0 else -1
    k = 0
    for ci, c in enumerate(countries):
        for j in range(surveys_per_country):
            sid = f"{c}-S{j + 1:03d}"
            t = int(rng.integers(T))
            is_out = k == forced or rng.random() < outlier_rate
            k += 1
            if is_out:
                outliers.add(sid)
            u = rng.random()
            areas = ("urban", "rural") if u < 0.45 else ("overall",) if u < 0.8 else (
                "urban", "rural", "overall")
            for area in areas:
                nu, lphi = _area_parameters(h, trend, log_phi, urban_logit, area, ci, t)
                rho = np.zeros(1) if is_out else None
                v = simulate_tiers(h, N, nu[None], lphi[None], rng, rho)[0]
                props = {node: v[h.node_index[node]] / N for node in h.nodes}
                props = _apply_missingness(props, rng)
                records.append(SurveyObservation(sid, c, int(years[t]), area, props))
    return SyntheticCorpus(records, un, regions, years, trend, log_phi, urban_logit,
                           countries, outliers)


def _area_parameters(h, trend, log_phi, urban_logit, area, c, t):
    if area in ("urban", "rural"):
        a = 0 if area == "urban" else 1
        return expit(trend[:, a, c, t]), log_phi[:, a, c]
    pi = expit(urban_logit[c, t])
    mu = pi * h.absolute_means(expit(trend[:, 0, c, t])) + (1 - pi) * h.absolute_means(
        expit(trend[:, 1, c, t]))
    return h.relative_from_absolute(mu), 0.5 * (log_phi[:, 0, c] + log_phi[:, 1, c])


def _apply_missingness(props, rng):
    """Drop values the way real survey reports omit them."""
    u = rng.random()
    drop = ()
    if u < 0.15:
        drop = ("wood", "cropwaste", "dung")                 # biomass not split
    elif u < 0.25:
        drop = ("coal", "wood", "cropwaste", "dung", "biomass")  # charcoal and solid only
    elif u < 0.33:
        drop = ("kerosene", "gas")                           # gap inside the top tier
    elif u < 0.38:
        drop = ("cropwaste", "dung")                         # lower tier tail missing
    return {k: v for k, v in props.items() if k not in drop}
