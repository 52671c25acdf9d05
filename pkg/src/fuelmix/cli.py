"""Command-line interface.

Every command writes CSV tables and exactly one ``manifest.json`` into its
output directory.  Tables are pure functions of the inputs and the seed, so
reruns reproduce them byte for byte; only the manifest timestamps differ.

Commands
--------
synth                 simulate a survey corpus (surveys, UN urban shares, regions, truth)
fit                   select surveys, build counts, run the chains, save draws
predict               quantiles of fitted trends (optionally with survey variability)
check                 in-sample posterior predictive replicates and coverage
diagnostics           potential scale reduction factors of the monitored parameters
forecast-experiment   fit up to a cutoff year and score later urban/rural surveys
simulate-appendix-a   the artificial-sample-size study over a grid of N
"""

import argparse
import csv
import hashlib
import json
import logging
import shutil
import sys
import time
from pathlib import Path
from types import SimpleNamespace

import numpy as np
from scipy.special import expit

from .config import Config
from .data import (AREAS, load_region_map, load_surveys, load_un_urban, select_surveys,
                   write_region_map, write_surveys, write_un_urban)
from .experiments import DEFAULT_N_GRID, forecast_check, sample_size_study
from .mcmc import (PosteriorDraws, monitored_traces, observed_items, posterior_replicates, psrf,
                   run_chains, simulate_tiers)
from .model import FuelModel
from .synth import synthesize_corpus

log = logging.getLogger("fuelmix")

PROPORTION = "proportion of households"
PSRF_BINS = (0.0, 1.01, 1.02, 1.05, 1.1, 1.2, 1.5, 2.0, np.inf)

SURVEYS, UN_URBAN, REGIONS, CONFIG, DRAWS = ("surveys.csv", "un_urban.csv", "regions.csv",
                                             "config.json", "draws.npz")


class CliError(Exception):
    """A user-facing failure: printed without traceback, exit status 2."""


# -- output helpers ---------------------------------------------------------------------

def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def file_digest(paths):
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).name.encode())
        h.update(Path(p).read_bytes())
    return h.hexdigest()


class Run:
    """Bookkeeping for one command: output directory, declared outputs and
    the manifest."""

    def __init__(self, args, config, inputs=()):
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.command = args.command
        self.seed = config.mcmc.seed
        self.config = config
        self.inputs = [str(p) for p in inputs]
        self.outputs = {}
        self.started = time.time()

    def path(self, name, units=None):
        self.outputs[name] = units
        return self.out / name

    def finish(self, summary=None):
        missing = [n for n in self.outputs if not (self.out / n).exists()]
        manifest = {
            "command": self.command,
            "seed": self.seed,
            "config_hash": self.config.digest(),
            "data_hash": file_digest(self.inputs) if self.inputs else None,
            "inputs": self.inputs,
            "outputs": sorted(self.outputs),
            "units": {k: v for k, v in sorted(self.outputs.items()) if v},
            "started": _iso(self.started),
            "finished": _iso(time.time()),
            "summary": summary or {},
        }
        write_json(self.out / "manifest.json", manifest)
        if missing:
            raise CliError(f"declared outputs missing: {', '.join(missing)}")
        return 0


def _iso(t):
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


# -- inputs ---------------------------------------------------------------------------

def load_config(args):
    cfg = Config.load(args.config) if getattr(args, "config", None) else Config()
    if getattr(args, "seed", None) is not None:
        cfg.mcmc.seed = args.seed
    return cfg


def _data_paths(args, cfg):
    regions = args.regions or cfg.region_map
    if not regions:
        raise CliError("a region map is required (--regions or region_map in the config)")
    return Path(args.surveys), Path(args.un_urban), Path(regions)


def load_inputs(surveys, un_urban, regions, cfg):
    records = load_surveys(surveys, (cfg.model.year_min, cfg.model.year_max))
    regions_map = load_region_map(regions)
    un = load_un_urban(un_urban, cfg.model.year_min, cfg.model.year_max,
                       cfg.model.urban_clamp)
    return records, un, regions_map


def build_model(records, un, regions_map, cfg):
    kept, excluded = select_surveys(records, cfg.model.nonresponse_threshold)
    countries = sorted(set(regions_map.country_region) & set(un.values))
    model = FuelModel(kept, un, regions_map, cfg.model, cfg.fuel_hierarchy(),
                      extra_countries=countries)
    return model, excluded


class Fit:
    """A fitted run directory: config, copied inputs and draws."""

    def __init__(self, path):
        self.dir = Path(path)
        for name in (CONFIG, SURVEYS, UN_URBAN, REGIONS, DRAWS):
            if not (self.dir / name).exists():
                raise CliError(f"{self.dir} is not a fit directory (missing {name})")
        self.config = Config.load(self.dir / CONFIG)
        records, un, rm = load_inputs(self.dir / SURVEYS, self.dir / UN_URBAN,
                                      self.dir / REGIONS, self.config)
        self.model, _ = build_model(records, un, rm, self.config)
        self.draws = PosteriorDraws.load(self.dir / DRAWS)
        if self.draws.addresses != self.model.addresses():
            raise CliError("draws do not match the model rebuilt from the fit directory")

    def inputs(self):
        return [self.dir / n for n in (CONFIG, SURVEYS, UN_URBAN, REGIONS, DRAWS)]


def _thin_pooled(draws, max_draws):
    pooled = draws.pooled()
    if pooled.shape[0] > max_draws:
        pooled = pooled[np.linspace(0, pooled.shape[0] - 1, max_draws).round().astype(int)]
    return pooled


def _parse_years(text, cfg):
    if not text:
        return np.arange(cfg.model.year_min, cfg.model.year_max + 1)
    out = []
    for part in text.split(","):
        if ":" in part:
            a, b = part.split(":")
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return np.array(sorted(set(out)))


def _parse_grid(text):
    try:
        grid = tuple(int(float(x)) for x in text.split(","))
    except ValueError:
        raise CliError(f"bad --n-grid {text!r}") from None
    if not grid or min(grid) < 1:
        raise CliError("--n-grid needs positive integers")
    return grid


# -- commands -----------------------------------------------------------------------------

def cmd_synth(args):
    cfg = load_config(args)
    run = Run(args, cfg)
    rng = np.random.default_rng(cfg.mcmc.seed)
    m = cfg.model
    corpus = synthesize_corpus(rng, n_countries=args.countries, n_regions=args.n_regions,
                               surveys_per_country=args.surveys_per_country, N=m.N,
                               year_min=m.year_min, year_max=m.year_max, K=m.K,
                               outlier_rate=args.outlier_rate,
                               hierarchy=cfg.fuel_hierarchy())
    write_surveys(run.path(SURVEYS, PROPORTION), corpus.records)
    write_un_urban(run.path(UN_URBAN, PROPORTION), corpus.un_urban)
    write_region_map(run.path(REGIONS), corpus.regions)
    h = cfg.fuel_hierarchy()
    rows = []
    for s, node in enumerate(h.nu_nodes):
        for a, area in enumerate(("urban", "rural")):
            for c, country in enumerate(corpus.countries):
                for t, year in enumerate(corpus.years):
                    rows.append((country, area, node, int(year),
                                 float(expit(corpus.trend[s, a, c, t])),
                                 float(np.exp(corpus.log_phi[s, a, c]))))
    write_csv(run.path("truth.csv", "relative mean (share among the remaining households); "
                       "dispersion"),
              ["country", "area", "fuel", "year", "relative_mean", "dispersion"], rows)
    write_csv(run.path("outliers.csv"), ["survey_id"], [(u,) for u in sorted(corpus.outlier_surveys)])
    return run.finish({"records": len(corpus.records), "countries": len(corpus.countries),
                       "outlier_surveys": len(corpus.outlier_surveys)})


def cmd_fit(args):
    cfg = load_config(args)
    paths = _data_paths(args, cfg)
    run = Run(args, cfg, paths)
    records, un, rm = load_inputs(*paths, cfg)
    model, excluded = build_model(records, un, rm, cfg)
    if model.U == 0:
        raise CliError("no surveys left after selection")
    for src, name in zip(paths, (SURVEYS, UN_URBAN, REGIONS)):
        shutil.copyfile(src, run.path(name, PROPORTION if name != REGIONS else None))
    cfg.dump(run.path(CONFIG))
    log.info("fitting %d surveys in %d countries", model.U, model.C)
    draws = run_chains(model, cfg.mcmc)
    draws.save(run.path(DRAWS))

    acc = draws.meta["acceptance"]
    write_csv(run.path("acceptance.csv", "fraction of accepted proposals"),
              ["chain", "block", "acceptance_rate"],
              [(ch, k, v) for ch, a in enumerate(acc) for k, v in sorted(a.items())])

    idx = [draws.index(f"rho[{u}]") for u in model.surveys]
    rho = draws.pooled()[:, idx]
    q = np.quantile(rho, [0.025, 0.975], axis=0)
    write_csv(run.path("rho.csv", "posterior weight on the Beta-Binomial component"),
              ["survey_id", "rho_mean", "rho_lower_95", "rho_upper_95"],
              [(u, rho[:, i].mean(), q[0, i], q[1, i]) for i, u in enumerate(model.surveys)])
    write_csv(run.path("excluded.csv"), ["survey_id", "country", "year", "area", "rule"],
              [(r.survey_id, r.country, r.year, r.area, rule) for r, rule in excluded])
    return run.finish({"surveys": model.U, "countries": model.C, "excluded": len(excluded),
                       "chains": draws.n_chains, "draws_per_chain": draws.n_draws})


def trend_quantiles(model, draws, countries, years, rng, max_draws=500,
                    with_survey_variability=False, un_offsets_only=False):
    """Posterior quantiles of every node's population share.

    Returns rows ``(country, area, fuel, year, kind, lower, median, upper)``
    where ``kind`` is ``"mean"`` for the trend itself and ``"replicate"`` for
    a new survey at that year (Beta-Binomial sampling variability with the
    model's artificial sample size).
    """
    h, N = model.h, model.cfg.N
    c = np.array([model.c_index[x] for x in countries])
    years = np.asarray(years)
    pooled = _thin_pooled(draws, max_draws)
    D, C, T, S, nodes = pooled.shape[0], c.size, years.size, model.S, len(h.nodes)
    mean = np.empty((D, C, 3, T, nodes))
    reps = np.empty_like(mean) if with_survey_variability else None
    for d, flat in enumerate(pooled):
        st = model.unflatten(flat)
        tr = model.trend(st, years)[:, :, c, :]                         # (S, 2, C, T)
        nu = model.clamp_nu(expit(np.moveaxis(tr, 0, -1)))              # (2, C, T, S)
        pi = expit(model.logit_pi(st, years, un_offsets_only)[c])       # (C, T)
        nu_o = model.mix_relative(nu[0], nu[1], pi)
        allnu = np.stack([nu[0], nu[1], nu_o], axis=1)                  # (C, 3, T, S)
        mean[d] = h.absolute_means(allnu)
        if with_survey_variability:
            lphi = np.moveaxis(st.log_phi[:, :, c], 0, -1)              # (2, C, S)
            lphi = np.stack([lphi[0], lphi[1], 0.5 * (lphi[0] + lphi[1])], axis=1)
            lphi = np.broadcast_to(lphi[:, :, None, :], (C, 3, T, S))
            sim = simulate_tiers(h, N, allnu.reshape(-1, S), lphi.reshape(-1, S), rng)
            reps[d] = sim.reshape(C, 3, T, nodes) / N
    rows = []
    for kind, arr in (("mean", mean), ("replicate", reps)):
        if arr is None:
            continue
        q = np.quantile(arr, [0.025, 0.5, 0.975], axis=0)
        for ci, country in enumerate(countries):
            for a, area in enumerate(AREAS):
                for j, node in enumerate(h.nodes):
                    for ti, year in enumerate(years):
                        rows.append((country, area, node, int(year), kind,
                                     q[0, ci, a, ti, j], q[1, ci, a, ti, j], q[2, ci, a, ti, j]))
    return rows


def cmd_predict(args):
    fit = Fit(args.draws)
    cfg = fit.config
    if args.seed is not None:
        cfg.mcmc.seed = args.seed
    run = Run(args, cfg, fit.inputs())
    model = fit.model
    countries = args.countries.split(",") if args.countries else list(model.countries)
    unknown = [x for x in countries if x not in model.c_index]
    if unknown:
        raise CliError(f"unknown country: {', '.join(unknown)}")
    years = _parse_years(args.years, cfg)
    rng = np.random.default_rng([cfg.mcmc.seed, 11])
    rows = trend_quantiles(model, fit.draws, countries, years, rng, args.max_draws,
                           args.with_survey_variability, args.un_offsets_only)
    write_csv(run.path("predictions.csv", PROPORTION),
              ["country", "area", "fuel", "year", "kind", "lower_95", "median", "upper_95"], rows)
    return run.finish({"rows": len(rows), "countries": countries,
                       "years": [int(years[0]), int(years[-1])],
                       "un_offsets_only": args.un_offsets_only,
                       "with_survey_variability": args.with_survey_variability})


def cmd_check(args):
    fit = Fit(args.draws)
    cfg = fit.config
    if args.seed is not None:
        cfg.mcmc.seed = args.seed
    run = Run(args, cfg, fit.inputs())
    model = fit.model
    rng = np.random.default_rng([cfg.mcmc.seed, 13])
    oi, ni, val = observed_items(model)
    rep = posterior_replicates(fit.draws, model, rng, max_draws=args.max_draws)[:, oi, ni]
    lo, hi = np.quantile(rep, [0.025, 0.975], axis=0)
    inside = (val >= lo) & (val <= hi)
    mean = rep.mean(axis=0)
    obs = model.observations
    rows = [(obs[o].survey_id, obs[o].country, obs[o].year, obs[o].area, model.h.nodes[n],
             v, m, a, b, i) for o, n, v, m, a, b, i in zip(oi, ni, val, mean, lo, hi, inside)]
    write_csv(run.path("replicates.csv", PROPORTION),
              ["survey_id", "country", "year", "area", "fuel", "observed", "replicate_mean",
               "lower_95", "upper_95", "inside"], rows)
    panel = {}
    for r in rows:
        panel.setdefault((r[4], r[3]), []).append(r[9])
    cov_rows = [(fuel, area, len(v), float(np.mean(v))) for (fuel, area), v in sorted(panel.items())]
    cov_rows.append(("all", "all", int(inside.size), float(inside.mean())))
    write_csv(run.path("coverage.csv", "fraction of observations inside the 95% interval"),
              ["fuel", "area", "n_observations", "coverage_95"], cov_rows)
    return run.finish({"coverage_95": float(inside.mean()), "n_observations": int(inside.size)})


def cmd_diagnostics(args):
    fit = Fit(args.draws)
    cfg = fit.config
    run = Run(args, cfg, fit.inputs())
    if fit.draws.n_chains < 2:
        raise CliError("diagnostics need at least two chains")
    tr = monitored_traces(fit.draws, fit.model)
    vals = {k: psrf(v, cfg.mcmc.split_psrf) for k, v in tr.items()}
    names = sorted(vals)
    write_csv(run.path("psrf.csv", "potential scale reduction factor"), ["parameter", "psrf"],
              [(k, vals[k]) for k in names])
    arr = np.array([vals[k] for k in names])
    counts, _ = np.histogram(arr, bins=PSRF_BINS)
    write_csv(run.path("psrf_histogram.csv", "number of parameters"),
              ["bin_lower", "bin_upper", "count"],
              [(PSRF_BINS[i], PSRF_BINS[i + 1], int(n)) for i, n in enumerate(counts)])
    thr = cfg.psrf_threshold
    frac = float(np.mean(arr < thr)) if arr.size else 1.0
    worst = sorted(vals.items(), key=lambda kv: (-kv[1], kv[0]))[:20]
    return run.finish({"threshold": thr, "fraction_below": frac, "passed": frac >= 0.95,
                       "n_parameters": int(arr.size), "max": float(arr.max()),
                       "worst": [[k, v] for k, v in worst]})


def cmd_forecast_experiment(args):
    cfg = load_config(args)
    paths = _data_paths(args, cfg)
    run = Run(args, cfg, paths)
    records, un, rm = load_inputs(*paths, cfg)
    years = [r.year for r in records]
    if not years or not min(years) <= args.cutoff_year < max(years):
        raise CliError(f"cutoff year {args.cutoff_year} outside the data range "
                       f"{min(years, default='-')}..{max(years, default='-')}")
    corpus = SimpleNamespace(records=records, un_urban=un, regions=rm,
                             countries=sorted(set(rm.country_region) & set(un.values)))
    res = forecast_check(corpus, cfg.mcmc, args.cutoff_year, args.horizon, cfg.model,
                         seed=cfg.mcmc.seed, max_draws=args.max_draws)
    cols = ["survey_id", "country", "year", "area", "fuel", "lead", "observed",
            "predicted_mean", "lower", "upper", "inside"]
    write_csv(run.path("forecast_items.csv", PROPORTION), cols,
              [[it[k] for k in cols] for it in res.items])
    write_csv(run.path("forecast_leads.csv", "lead in years; coverage fraction; interval width "
                       "as a proportion"),
              ["lead", "n_items", "coverage_95", "median_width_95"],
              [(k, res.lead_count[k], res.lead_coverage[k], res.lead_median_width[k])
               for k in sorted(res.lead_coverage)])
    status = "ok" if res.n_items else "empty: no held-out urban/rural surveys"
    return run.finish({"status": status, "cutoff_year": args.cutoff_year,
                       "horizon": args.horizon, "coverage_95": res.coverage,
                       "n_items": res.n_items,
                       "widths_non_decreasing": res.widths_non_decreasing,
                       "series_monotone_fraction": res.series_monotone_fraction()})


def cmd_simulate_appendix_a(args):
    cfg = load_config(args)
    inputs = [args.n_values] if args.n_values else []
    run = Run(args, cfg, inputs)
    grid = _parse_grid(args.n_grid)
    n_values = None
    if args.n_values:
        n_values = np.loadtxt(args.n_values, delimiter=",", ndmin=1, comments="#")
        n_values = np.round(n_values[np.isfinite(n_values)]).astype(np.int64)
    study = sample_size_study(seed=cfg.mcmc.seed, n_grid=grid, n_countries=args.countries,
                              n_surveys=args.surveys, k=args.categories,
                              iterations=args.iterations, burn_in=args.iterations // 3,
                              thin=2, n_values=n_values)
    table = study.table()
    cols = ["N", "median_sd", "median_mse", "mse_q025", "mse_q975", "sd_discrepancy",
            "mse_discrepancy"]
    write_csv(run.path("sample_size_summary.csv", "posterior SD and MSE of marginal means "
                       "(proportion scale)"), cols, [[r[k] for k in cols] for r in table])
    keys = ("baseline",) + grid
    write_csv(run.path("sample_size_sd.csv", "posterior SD of marginal means"),
              ["N", "country", "component", "posterior_sd"],
              [(k, c, j, study.sd[k][c, j]) for k in keys
               for c in range(study.sd[k].shape[0]) for j in range(study.sd[k].shape[1])])
    write_csv(run.path("sample_size_mse.csv", "posterior mean squared error of marginal means"),
              ["N", "country", "mse"],
              [(k, c, study.mse[k][c]) for k in keys for c in range(study.mse[k].size)])
    qn = args.qq_n if args.qq_n in grid else grid[-1]
    qa, qb = study.quantiles[qn], study.quantiles["baseline"]
    levels = (0.025, 0.5, 0.975)
    write_csv(run.path("sample_size_quantiles.csv", "marginal mean quantiles"),
              ["N", "country", "component", "level", "baseline", "approximate"],
              [(qn, c, j, levels[i], qb[i, c, j], qa[i, c, j]) for i in range(3)
               for c in range(qa.shape[1]) for j in range(qa.shape[2])])
    sd_disc = [study.sd_discrepancy(n) for n in grid]
    mse_disc = [study.mse_discrepancy(n) for n in grid]
    return run.finish({"n_grid": list(grid), "sd_discrepancy": sd_disc,
                       "mse_discrepancy": mse_disc,
                       "quantile_correlation": {str(n): study.quantile_correlation(n)
                                                for n in grid}})


# -- argument parsing ------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="fuelmix", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        if config:
            sp.add_argument("--config", help="JSON configuration file")

    def data(sp):
        sp.add_argument("--surveys", required=True, help="survey CSV")
        sp.add_argument("--un-urban", required=True, help="UN urban share CSV")
        sp.add_argument("--regions", help="region map CSV (default: from the config)")

    sp = sub.add_parser("synth", help="simulate a survey corpus")
    common(sp)
    sp.add_argument("--countries", type=int, default=8)
    sp.add_argument("--n-regions", type=int, default=2)
    sp.add_argument("--surveys-per-country", type=int, default=30)
    sp.add_argument("--outlier-rate", type=float, default=0.02)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("fit", help="fit the model and save posterior draws")
    common(sp)
    data(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("predict", help="trend quantiles from a fit")
    common(sp, config=False)
    sp.add_argument("--draws", required=True, help="fit output directory")
    sp.add_argument("--countries", help="comma-separated countries (default: all)")
    sp.add_argument("--years", help="years as 'a:b' ranges or a comma list (default: grid)")
    sp.add_argument("--max-draws", type=int, default=500)
    sp.add_argument("--with-survey-variability", action="store_true",
                    help="add quantiles of a new survey's observed shares")
    sp.add_argument("--un-offsets-only", action="store_true",
                    help="overall values use the UN urban shares without the country spline")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("check", help="posterior predictive coverage of the fitted data")
    common(sp, config=False)
    sp.add_argument("--draws", required=True, help="fit output directory")
    sp.add_argument("--max-draws", type=int, default=1000)
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("diagnostics", help="PSRF of monitored parameters")
    common(sp, config=False)
    sp.add_argument("--draws", required=True, help="fit output directory")
    sp.set_defaults(func=cmd_diagnostics)

    sp = sub.add_parser("forecast-experiment", help="out-of-sample check after a cutoff year")
    common(sp)
    data(sp)
    sp.add_argument("--cutoff-year", type=int, default=2012)
    sp.add_argument("--horizon", type=int, default=5)
    sp.add_argument("--max-draws", type=int, default=1000)
    sp.set_defaults(func=cmd_forecast_experiment)

    sp = sub.add_parser("simulate-appendix-a", help="artificial-sample-size study")
    common(sp)
    sp.add_argument("--n-grid", default=",".join(str(n) for n in DEFAULT_N_GRID))
    sp.add_argument("--n-values", help="CSV/text file of survey sample sizes")
    sp.add_argument("--countries", type=int, default=50)
    sp.add_argument("--surveys", type=int, default=150)
    sp.add_argument("--categories", type=int, default=4)
    sp.add_argument("--iterations", type=int, default=6000)
    sp.add_argument("--qq-n", type=int, default=10000,
                    help="N for the quantile-vs-quantile table")
    sp.set_defaults(func=cmd_simulate_appendix_a)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"fuelmix {args.command}: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as exc:
        print(f"fuelmix {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
