import csv
import json

import numpy as np
import pytest

from fuelmix import cli
from fuelmix.mcmc import PosteriorDraws

TINY = {"mcmc": {"chains": 2, "iterations": 40, "burn_in": 20, "thin": 2}}


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def manifest(d):
    return json.loads((d / "manifest.json").read_text())


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    syn = root / "syn"
    assert cli.main(["synth", "--out", str(syn), "--seed", "4", "--countries", "3",
                     "--surveys-per-country", "6", "--config", str(cfg)]) == 0
    fit = root / "fit"
    args = ["fit", "--out", str(fit), "--config", str(cfg), "--surveys", str(syn / "surveys.csv"),
            "--un-urban", str(syn / "un_urban.csv"), "--regions", str(syn / "regions.csv")]
    assert cli.main(args) == 0
    return root, cfg, syn, fit, args


class TestFit:
    def test_declared_outputs(self, workspace):
        _, _, syn, fit, _ = workspace
        for d in (syn, fit):
            m = manifest(d)
            assert m["outputs"]
            for name in m["outputs"]:
                assert (d / name).exists()
            assert sorted(p.name for p in d.glob("manifest*")) == ["manifest.json"]
        m = manifest(fit)
        assert m["command"] == "fit" and m["seed"] == 1 and len(m["data_hash"]) == 64

    def test_rho_table(self, workspace):
        _, _, _, fit, _ = workspace
        rows = read_csv(fit / "rho.csv")
        assert len(rows) == manifest(fit)["summary"]["surveys"]
        for r in rows:
            assert 0 <= float(r["rho_lower_95"]) <= float(r["rho_mean"]) <= 1
            assert float(r["rho_mean"]) <= float(r["rho_upper_95"]) <= 1

    def test_rerun_identical(self, workspace, tmp_path):
        _, _, _, fit, args = workspace
        again = tmp_path / "again"
        args = list(args)
        args[args.index("--out") + 1] = str(again)
        assert cli.main(args) == 0
        for name in ("draws.npz", "rho.csv", "acceptance.csv", "excluded.csv", "config.json"):
            assert (fit / name).read_bytes() == (again / name).read_bytes()

    def test_missing_region_map(self, workspace, tmp_path, capsys):
        _, cfg, syn, _, _ = workspace
        code = cli.main(["fit", "--out", str(tmp_path / "x"), "--config", str(cfg),
                         "--surveys", str(syn / "surveys.csv"),
                         "--un-urban", str(syn / "un_urban.csv")])
        assert code == 2
        assert "region map" in capsys.readouterr().err


@pytest.fixture(scope="module")
def rows(workspace):
    root, _, _, fit, _ = workspace
    out = root / "pred"
    assert cli.main(["predict", "--draws", str(fit), "--out", str(out), "--countries", "C01",
                     "--years", "2000:2002,2016", "--with-survey-variability"]) == 0
    return read_csv(out / "predictions.csv")


class TestPredict:
    def test_quantiles_ordered(self, rows):
        assert rows
        for r in rows:
            lo, mid, hi = float(r["lower_95"]), float(r["median"]), float(r["upper_95"])
            assert 0 <= lo <= mid <= hi <= 1
        assert {r["kind"] for r in rows} == {"mean", "replicate"}
        assert {r["year"] for r in rows} == {"2000", "2001", "2002", "2016"}

    def test_leaf_medians_within_simplex(self, rows):
        from fuelmix.hierarchy import FuelHierarchy
        h = FuelHierarchy.default()
        med = {}
        for r in rows:
            if r["kind"] == "mean":
                med[(r["area"], r["year"], r["fuel"])] = float(r["median"])
        for area in ("urban", "rural", "overall"):
            for tier in h.tiers:
                total = sum(med[(area, "2001", c)] for c in tier.children)
                assert total <= 1 + 1e-9

    def test_unknown_country(self, workspace, tmp_path, capsys):
        _, _, _, fit, _ = workspace
        assert cli.main(["predict", "--draws", str(fit), "--out", str(tmp_path / "p"),
                         "--countries", "ZZ"]) == 2
        assert "unknown country: ZZ" in capsys.readouterr().err

    def test_overall_equals_area_when_trends_agree(self, workspace):
        _, _, _, fit, _ = workspace
        f = cli.Fit(fit)
        model, draws = f.model, f.draws
        beta_idx = [i for i, a in enumerate(draws.addresses) if a.startswith("beta[")]
        shape = (draws.n_chains, draws.n_draws, model.S, 2, model.C, model.P)
        B = draws.values[:, :, beta_idx].reshape(shape)
        B[:, :, :, 1] = B[:, :, :, 0]
        values = draws.values.copy()
        values[:, :, beta_idx] = B.reshape(shape[:2] + (-1,))
        same = PosteriorDraws(draws.addresses, values, draws.iterations)
        rows = cli.trend_quantiles(model, same, ["C02"], [2005], np.random.default_rng(0),
                                   max_draws=10, un_offsets_only=True)
        by = {(r[1], r[2]): r[5:] for r in rows}
        for node in model.h.nodes:
            np.testing.assert_allclose(by[("overall", node)], by[("urban", node)], atol=1e-12)


class TestCheckAndDiagnostics:
    def test_check(self, workspace):
        root, _, _, fit, _ = workspace
        out = root / "chk"
        assert cli.main(["check", "--draws", str(fit), "--out", str(out), "--max-draws", "20"]) == 0
        cov = read_csv(out / "coverage.csv")
        reps = read_csv(out / "replicates.csv")
        assert cov[-1]["fuel"] == "all" and int(cov[-1]["n_observations"]) == len(reps)
        assert sum(int(r["n_observations"]) for r in cov[:-1]) == len(reps)
        inside = np.mean([r["inside"] == "1" for r in reps])
        assert float(cov[-1]["coverage_95"]) == pytest.approx(inside)

    def test_diagnostics_outputs(self, workspace):
        root, _, _, fit, _ = workspace
        out = root / "diag"
        assert cli.main(["diagnostics", "--draws", str(fit), "--out", str(out)]) == 0
        s = manifest(out)["summary"]
        hist = read_csv(out / "psrf_histogram.csv")
        assert sum(int(r["count"]) for r in hist) == s["n_parameters"]
        assert len(s["worst"]) == min(20, s["n_parameters"])
        assert s["worst"][0][1] == pytest.approx(s["max"])

    def _with_draws(self, fit, tmp_path, values):
        d = tmp_path / "fit"
        d.mkdir()
        for name in (cli.CONFIG, cli.SURVEYS, cli.UN_URBAN, cli.REGIONS):
            (d / name).write_bytes((fit / name).read_bytes())
        draws = PosteriorDraws.load(fit / cli.DRAWS)
        PosteriorDraws(draws.addresses, values(draws.values), draws.iterations).save(d / cli.DRAWS)
        return d

    def test_duplicated_chain(self, workspace, tmp_path):
        _, _, _, fit, _ = workspace
        d = self._with_draws(fit, tmp_path, lambda v: np.stack([v[0], v[0]]))
        assert cli.main(["diagnostics", "--draws", str(d), "--out", str(tmp_path / "o")]) == 0
        vals = np.array([float(r["psrf"]) for r in read_csv(tmp_path / "o" / "psrf.csv")])
        # identical chains: B = 0, so the classic estimate is sqrt((n - 1) / n)
        n = PosteriorDraws.load(d / cli.DRAWS).n_draws
        np.testing.assert_allclose(vals, np.sqrt((n - 1) / n), rtol=1e-12)

    def test_single_chain_rejected(self, workspace, tmp_path, capsys):
        _, _, _, fit, _ = workspace
        d = self._with_draws(fit, tmp_path, lambda v: v[:1])
        assert cli.main(["diagnostics", "--draws", str(d), "--out", str(tmp_path / "o")]) == 2
        assert "two chains" in capsys.readouterr().err


class TestExperiments:
    def test_forecast(self, workspace):
        root, cfg, syn, _, _ = workspace
        out = root / "fc"
        assert cli.main(["forecast-experiment", "--out", str(out), "--config", str(cfg),
                         "--surveys", str(syn / "surveys.csv"), "--un-urban",
                         str(syn / "un_urban.csv"), "--regions", str(syn / "regions.csv"),
                         "--cutoff-year", "2010", "--horizon", "5", "--max-draws", "20"]) == 0
        s = manifest(out)["summary"]
        items = read_csv(out / "forecast_items.csv")
        assert s["status"] == "ok" and s["n_items"] == len(items)
        assert all(1 <= int(r["lead"]) <= 5 for r in items)
        assert {r["area"] for r in items} <= {"urban", "rural"}
        leads = read_csv(out / "forecast_leads.csv")
        assert sum(int(r["n_items"]) for r in leads) == len(items)

    def test_forecast_empty_and_bad_cutoff(self, workspace, tmp_path):
        _, cfg, syn, _, _ = workspace
        base = ["forecast-experiment", "--config", str(cfg), "--surveys",
                str(syn / "surveys.csv"), "--un-urban", str(syn / "un_urban.csv"),
                "--regions", str(syn / "regions.csv"), "--max-draws", "10"]
        assert cli.main(base + ["--out", str(tmp_path / "a"), "--cutoff-year", "2040"]) == 2
        # a horizon of zero years leaves nothing to score
        assert cli.main(base + ["--out", str(tmp_path / "b"), "--cutoff-year", "2010",
                                "--horizon", "0"]) == 0
        s = manifest(tmp_path / "b")["summary"]
        assert s["status"].startswith("empty") and s["n_items"] == 0

    def test_sample_size_verb(self, tmp_path):
        out = tmp_path / "aa"
        sizes = tmp_path / "n.txt"
        sizes.write_text("\n".join(str(n) for n in [1200, 5000, 30000, 800, 20000, 9000]))
        assert cli.main(["simulate-appendix-a", "--out", str(out), "--n-grid", "10,1000",
                         "--n-values", str(sizes), "--countries", "3", "--iterations", "150",
                         "--qq-n", "1000"]) == 0
        rows = read_csv(out / "sample_size_summary.csv")
        assert [r["N"] for r in rows] == ["baseline", "10", "1000"]
        q = read_csv(out / "sample_size_quantiles.csv")
        assert len(q) == 3 * 3 * 4 and {r["N"] for r in q} == {"1000"}
        assert len(read_csv(out / "sample_size_mse.csv")) == 3 * 3

    def test_bad_grid(self, tmp_path):
        assert cli.main(["simulate-appendix-a", "--out", str(tmp_path), "--n-grid", "ten"]) == 2
