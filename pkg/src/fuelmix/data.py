"""Survey records: CSV schema, selection, floor counts and UN offsets.

Survey CSV, one row per survey x area::

    survey_id,country,year,area,wood,cropwaste,dung,charcoal,coal,biomass,
    solid,kerosene,gas,electricity,others,nonresponse,total,flags

Empty cells are missing values.  ``flags`` is a ``;``-separated list.
UN urban CSV: ``country,year,urban_proportion``.  Region CSV:
``country,region,super_region``.
"""

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import CountVector
from .hierarchy import RegionMap

log = logging.getLogger(__name__)

FUEL_COLUMNS = ("wood", "cropwaste", "dung", "charcoal", "coal", "biomass", "solid",
                "kerosene", "gas", "electricity", "others")
SURVEY_COLUMNS = ("survey_id", "country", "year", "area") + FUEL_COLUMNS + (
    "nonresponse", "total", "flags")
AREAS = ("urban", "rural", "overall")
INDIVIDUAL_FUELS = ("wood", "cropwaste", "dung", "charcoal", "coal",
                    "kerosene", "gas", "electricity")
UNSUITABLE_FLAG = "unsuitable"


class SchemaError(ValueError):
    """Malformed input file."""


class RangeError(ValueError):
    """Value outside its admissible range."""


class InconsistentCountsError(ValueError):
    """Child categories exceed their parent."""


class MissingOffsetError(KeyError):
    """No UN urban estimate for a modelled country."""


@dataclass(frozen=True)
class SurveyObservation:
    survey_id: str
    country: str
    year: int
    area: str
    proportions: dict
    respondent_total: int | None = None
    nonresponse: float | None = None
    flags: frozenset = field(default_factory=frozenset)

    def value(self, node):
        return self.proportions.get(node)


# -- survey CSV ------------------------------------------------------------

def _parse_float(text, row, column):
    try:
        x = float(text)
    except ValueError:
        raise SchemaError(f"row {row}: column {column!r} is not a number: {text!r}") from None
    if not math.isfinite(x):
        raise RangeError(f"row {row}: column {column!r} is not finite")
    return x


def load_surveys(path, year_range=None):
    """Read survey records; raises :class:`SchemaError` / :class:`RangeError`
    naming the offending (1-based, header = row 1) row."""
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("empty file: missing header") from None
        header = [h.strip() for h in header]
        unknown = [h for h in header if h not in SURVEY_COLUMNS]
        if unknown:
            raise SchemaError(f"row 1: unknown columns {unknown}")
        missing = [h for h in SURVEY_COLUMNS if h not in header]
        if missing:
            raise SchemaError(f"row 1: missing columns {missing}")
        for rownum, raw in enumerate(reader, start=2):
            if not raw or all(not c.strip() for c in raw):
                continue
            if len(raw) != len(header):
                raise SchemaError(f"row {rownum}: expected {len(header)} fields, got {len(raw)}")
            row = dict(zip(header, (c.strip() for c in raw)))
            records.append(_record_from_row(row, rownum, year_range))
    return records


def _record_from_row(row, rownum, year_range):
    if not row["survey_id"] or not row["country"]:
        raise SchemaError(f"row {rownum}: survey_id and country are required")
    try:
        year = int(row["year"])
    except ValueError:
        raise SchemaError(f"row {rownum}: year {row['year']!r} is not an integer") from None
    if year_range is not None and not year_range[0] <= year <= year_range[1]:
        raise RangeError(f"row {rownum}: year {year} outside {year_range}")
    area = row["area"]
    if area not in AREAS:
        raise SchemaError(f"row {rownum}: area must be one of {AREAS}, got {area!r}")
    props = {}
    for col in FUEL_COLUMNS:
        if row[col] == "":
            continue
        x = _parse_float(row[col], rownum, col)
        if not 0.0 <= x <= 1.0:
            raise RangeError(f"row {rownum}: proportion {col}={x} outside [0, 1]")
        props[col] = x
    nonresp = None
    if row["nonresponse"] != "":
        nonresp = _parse_float(row["nonresponse"], rownum, "nonresponse")
        if not 0.0 <= nonresp < 1.0:
            raise RangeError(f"row {rownum}: nonresponse={nonresp} outside [0, 1)")
    total = None
    if row["total"] != "":
        try:
            total = int(row["total"])
        except ValueError:
            raise SchemaError(f"row {rownum}: total {row['total']!r} is not an integer") from None
        if total <= 0:
            raise RangeError(f"row {rownum}: total must be positive")
    flags = frozenset(f.strip() for f in row["flags"].split(";") if f.strip())
    _check_tier_sums(props, rownum)
    return SurveyObservation(row["survey_id"], row["country"], year, area, props,
                             total, nonresp, flags)


_GROUPS = (
    (None, ("solid", "kerosene", "gas", "electricity", "others")),
    ("solid", ("biomass", "charcoal", "coal")),
    ("biomass", ("wood", "cropwaste", "dung")),
)


def _check_tier_sums(props, rownum):
    for parent, children in _GROUPS:
        present = [props[c] for c in children if c in props]
        s = sum(present)
        if parent is None and s > 1.0 + 1e-9:
            raise RangeError(f"row {rownum}: top-level proportions sum to {s:.6g} > 1")
        if parent is not None and parent in props:
            if s > props[parent] + 1e-9:
                raise RangeError(f"row {rownum}: {children} sum to {s:.6g} > {parent}={props[parent]:.6g}")
            if len(present) == len(children) and abs(s - props[parent]) > 1e-6:
                raise RangeError(f"row {rownum}: {children} sum to {s:.6g}, "
                                 f"but {parent}={props[parent]:.6g}")


def write_surveys(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SURVEY_COLUMNS)
        for r in records:
            row = [r.survey_id, r.country, str(r.year), r.area]
            row += [repr(float(r.proportions[c])) if c in r.proportions else "" for c in FUEL_COLUMNS]
            row.append("" if r.nonresponse is None else repr(float(r.nonresponse)))
            row.append("" if r.respondent_total is None else str(r.respondent_total))
            row.append(";".join(sorted(r.flags)))
            w.writerow(row)


# -- selection ---------------------------------------------------------------

RULE_SOLID_ONLY = "solid_only"
RULE_NONRESPONSE = "nonresponse_over_threshold"
RULE_FLAGGED = "flagged_unsuitable"


def select_surveys(records, threshold=0.15):
    """Apply the exclusion rules; returns ``(kept, [(record, rule_id), ...])``.

    Rules, checked in order: only the solid-fuel aggregate reported (no
    individual fuel); unlisted/no-cooking/non-response share above
    ``threshold``; flagged unsuitable.
    """
    kept, excluded = [], []
    for r in records:
        if not any(f in r.proportions for f in INDIVIDUAL_FUELS):
            excluded.append((r, RULE_SOLID_ONLY))
        elif r.nonresponse is not None and r.nonresponse > threshold:
            excluded.append((r, RULE_NONRESPONSE))
        elif UNSUITABLE_FLAG in r.flags:
            excluded.append((r, RULE_FLAGGED))
        else:
            kept.append(r)
    return kept, excluded


# -- counts ----------------------------------------------------------------------

_FLOOR_SLACK = 1e-7


def floor_counts(N, x):
    """``floor(N x)`` robust to float noise: a product within ``1e-7`` below an
    integer (``0.1 + 0.2`` style round-off) is taken as that integer."""
    return np.floor(N * np.asarray(x, dtype=float) + _FLOOR_SLACK).astype(np.int64)


def to_counts(proportions, N):
    """Floor counts ``v_i = floor(N x_i)``; the final category takes the
    remainder so that the counts sum to ``N`` exactly."""
    x = np.asarray(proportions, dtype=float)
    if np.any(x < 0) or np.any(x > 1):
        raise RangeError("proportions must lie in [0, 1]")
    v = floor_counts(N, x[:-1])
    rest = int(N) - int(v.sum())
    if rest < 0:
        raise InconsistentCountsError(f"floor counts {v.tolist()} exceed total {N}")
    return CountVector(np.append(v, rest), int(N))


@dataclass
class TierCounts:
    """Counts of one tier of one observation.

    ``counts`` holds ``-1`` where a count is unknown.  ``terms`` lists the
    positions whose Beta-Binomial conditional enters the likelihood;
    ``latent`` the positions imputed by MCMC (their sum is fixed).
    """

    tier: int
    total: int
    counts: np.ndarray
    observed: np.ndarray
    terms: list
    latent: list


def renormalized(record):
    """Drop the unlisted/no-cooking/non-response share by rescaling."""
    props = dict(record.proportions)
    nr = record.nonresponse or 0.0
    if nr > 0:
        props = {k: min(1.0, v / (1.0 - nr)) for k, v in props.items()}
    return props


def complete_proportions(props, hierarchy):
    """Fill values implied by the tree: a parent equal to the sum of fully
    reported children, and a single missing child equal to its parent minus
    its siblings (the top tier's parent is 1)."""
    props = {k: v for k, v in props.items() if k in hierarchy.node_index}
    changed = True
    while changed:
        changed = False
        for tier in hierarchy.tiers:
            kids = tier.children
            if tier.parent is not None and tier.parent not in props and all(c in props for c in kids):
                props[tier.parent] = sum(props[c] for c in kids)
                changed = True
            parent_val = 1.0 if tier.parent is None else props.get(tier.parent)
            missing = [c for c in kids if c not in props]
            if parent_val is not None and len(missing) == 1:
                props[missing[0]] = max(0.0, parent_val - sum(props[c] for c in kids if c in props))
                changed = True
    return props


def tier_counts(record, hierarchy, N):
    """Convert one record to per-tier counts out of ``N``.

    Tiers whose parent count is not determined by the data are skipped (with
    a log message when they hold reported values).
    """
    props = complete_proportions(renormalized(record), hierarchy)
    known = {}  # node -> count, only for determined counts
    out = []
    for ti, tier in enumerate(hierarchy.tiers):
        if tier.parent is None:
            total = int(N)
        elif tier.parent in known:
            total = known[tier.parent]
        else:
            if any(c in props for c in tier.children):
                log.info("survey %s/%s: %s tier dropped (parent count undetermined)",
                         record.survey_id, record.area, tier.name)
            continue
        k = tier.k
        observed = np.array([c in props for c in tier.children])
        counts = np.full(k, -1, dtype=np.int64)
        named = observed.copy()
        if observed.all():
            named[-1] = False
        idx = np.flatnonzero(named)
        counts[idx] = floor_counts(N, [props[tier.children[i]] for i in idx])
        _trim_excess(counts, idx, total, record)
        if observed.all():
            counts[-1] = total - counts[:-1].sum()
        missing = np.flatnonzero(~observed)
        last_obs = np.flatnonzero(observed).max() if observed.any() else -1
        if missing.size == 0:
            terms, latent = list(range(k - 1)), []
        elif missing.min() > last_obs:
            # unobserved tail marginalizes out of the sequential factorization
            terms, latent = list(range(min(last_obs + 1, k - 1))), []
        else:
            terms, latent = list(range(k - 1)), missing.tolist()
            rest = total - counts[observed].sum()
            share = np.full(missing.size, rest // missing.size, dtype=np.int64)
            share[: rest - share.sum()] += 1
            counts[missing] = share
        out.append(TierCounts(ti, total, counts, observed, terms, latent))
        for pos, c in enumerate(tier.children):
            if observed[pos]:
                known[c] = int(counts[pos])
    return out


def _trim_excess(counts, idx, total, record):
    """Floor counts of reported categories can overshoot the parent count by
    float round-off; trim such slop in place, reject real inconsistencies."""
    excess = int(counts[idx].sum()) - int(total)
    if excess <= 0:
        return
    if excess > counts.size:
        raise InconsistentCountsError(
            f"survey {record.survey_id}/{record.area}: child counts {counts.tolist()} exceed {total}")
    for _ in range(excess):
        j = idx[np.argmax(counts[idx])]
        counts[j] -= 1


# -- UN urban offsets ------------------------------------------------------------

class UnUrbanSeries:
    """UN urban population share per country on a year grid."""

    def __init__(self, values, years, clamp=1e-6):
        self.years = np.asarray(years)
        self.clamp = clamp
        self.values = {c: np.clip(np.asarray(v, dtype=float), clamp, 1 - clamp)
                       for c, v in values.items()}

    def countries(self):
        return sorted(self.values)

    def value(self, country, year):
        """Share for any year; beyond the grid the end values are held."""
        try:
            series = self.values[country]
        except KeyError:
            raise MissingOffsetError(f"no UN urban estimate for {country!r}") from None
        return np.interp(np.asarray(year, dtype=float), self.years, series)

    def require(self, countries):
        missing = sorted(set(countries) - set(self.values))
        if missing:
            raise MissingOffsetError(f"UN urban estimates required for: {', '.join(missing)}")


def load_un_urban(path, year_min=1990, year_max=2017, clamp=1e-6, countries=None):
    """Read ``country,year,urban_proportion`` rows onto ``year_min..year_max``.

    Values are clamped to ``[clamp, 1 - clamp]``, gaps are interpolated
    linearly and the grid ends are filled with the nearest available year.
    """
    raw = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"country", "year", "urban_proportion"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise SchemaError(f"row 1: UN urban file needs columns {sorted(need)}")
        for rownum, row in enumerate(reader, start=2):
            if not row["urban_proportion"].strip():
                continue
            try:
                year = int(row["year"])
                p = float(row["urban_proportion"])
            except ValueError:
                raise SchemaError(f"row {rownum}: bad year or proportion") from None
            if not 0.0 <= p <= 1.0:
                raise RangeError(f"row {rownum}: urban proportion {p} outside [0, 1]")
            raw.setdefault(row["country"], {})[year] = p
    grid = np.arange(year_min, year_max + 1)
    values = {}
    for country, series in raw.items():
        yrs = np.array(sorted(series))
        vals = np.clip(np.array([series[y] for y in yrs]), clamp, 1 - clamp)
        values[country] = np.interp(grid, yrs, vals)
    out = UnUrbanSeries(values, grid, clamp)
    if countries is not None:
        out.require(countries)
    return out


def write_un_urban(path, series):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["country", "year", "urban_proportion"])
        for c in series.countries():
            for y, p in zip(series.years, series.values[c]):
                w.writerow([c, int(y), repr(float(p))])


# -- region map ---------------------------------------------------------------------

def load_region_map(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"country", "region", "super_region"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise SchemaError(f"row 1: region file needs columns {sorted(need)}")
        rows = [(r["country"], r["region"], r["super_region"]) for r in reader]
    return RegionMap.from_rows(rows)


def write_region_map(path, regions):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["country", "region", "super_region"])
        for row in regions.rows():
            w.writerow(row)
