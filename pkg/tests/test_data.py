import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fuelmix.data import (
    RULE_FLAGGED, RULE_NONRESPONSE, RULE_SOLID_ONLY, InconsistentCountsError,
    MissingOffsetError, RangeError, SchemaError, SurveyObservation, UnUrbanSeries,
    complete_proportions, floor_counts, load_region_map, load_surveys, load_un_urban,
    renormalized, select_surveys, tier_counts, to_counts, write_region_map, write_surveys,
    write_un_urban)
from fuelmix.hierarchy import FuelHierarchy, RegionMap
from fuelmix.synth import synthesize_corpus

HEADER = ("survey_id,country,year,area,wood,cropwaste,dung,charcoal,coal,biomass,solid,"
          "kerosene,gas,electricity,others,nonresponse,total,flags\n")


def obs(props, nonresponse=None, flags=(), area="urban"):
    return SurveyObservation("S1", "C1", 2000, area, props, None, nonresponse, frozenset(flags))


class TestLoadSurveys:
    def test_header_only(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text(HEADER)
        assert load_surveys(p) == []

    def test_out_of_range_names_row(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text(HEADER + "A,C1,2000,urban,,,,,,,0.3,0.2,,,,,,\n"
                     + "B,C1,2001,urban,,,,,,,1.2,,,,,,,\n")
        with pytest.raises(RangeError, match="row 3"):
            load_surveys(p)

    def test_unknown_column(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text(HEADER.strip() + ",peat\n")
        with pytest.raises(SchemaError):
            load_surveys(p)

    def test_bad_area(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text(HEADER + "A,C1,2000,suburban,,,,,,,0.3,,,,,,,\n")
        with pytest.raises(SchemaError, match="row 2"):
            load_surveys(p)

    def test_parent_children_disagree(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text(HEADER + "A,C1,2000,rural,0.2,0.1,0.1,,,0.5,0.6,,,,,,,\n")
        with pytest.raises(RangeError, match="row 2"):
            load_surveys(p)

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        corpus = synthesize_corpus(rng, n_countries=3, surveys_per_country=5)
        records = [SurveyObservation(r.survey_id, r.country, r.year, r.area, r.proportions,
                                     1234, 0.031, frozenset({"x", "y"})) for r in corpus.records]
        p = tmp_path / "s.csv"
        write_surveys(p, records)
        assert load_surveys(p) == records


class TestSelection:
    def test_solid_only(self):
        kept, excl = select_surveys([obs({"solid": 0.6})])
        assert kept == [] and excl[0][1] == RULE_SOLID_ONLY

    def test_nonresponse_over(self):
        _, excl = select_surveys([obs({"wood": 0.3}, nonresponse=0.16)])
        assert excl[0][1] == RULE_NONRESPONSE

    @pytest.mark.parametrize("nr", [0.149, 0.15])
    def test_nonresponse_boundary_kept(self, nr):
        kept, _ = select_surveys([obs({"wood": 0.3}, nonresponse=nr)])
        assert len(kept) == 1

    def test_flagged(self):
        _, excl = select_surveys([obs({"wood": 0.3}, flags=["unsuitable"])])
        assert excl[0][1] == RULE_FLAGGED

    def test_rule_order(self):
        _, excl = select_surveys([obs({"solid": 0.3}, nonresponse=0.5, flags=["unsuitable"])])
        assert excl[0][1] == RULE_SOLID_ONLY

    @given(st.lists(st.tuples(st.booleans(), st.floats(0, 0.5), st.booleans()), max_size=20))
    def test_idempotent_and_order_preserving(self, spec):
        recs = [SurveyObservation(f"S{i}", "C", 2000, "urban",
                                  {"wood": 0.2} if w else {"solid": 0.2}, None, nr,
                                  frozenset({"unsuitable"} if f else ()))
                for i, (w, nr, f) in enumerate(spec)]
        kept, excl = select_surveys(recs)
        assert select_surveys(kept) == (kept, [])
        assert [r.survey_id for r in kept] == [r.survey_id for r in recs if r in kept]
        assert len(kept) + len(excl) == len(recs)


class TestCounts:
    def test_exact_floor(self):
        np.testing.assert_array_equal(to_counts([0.333, 0.333, 0.334], 1000).v, [333, 333, 334])

    def test_remainder_to_last(self):
        np.testing.assert_array_equal(to_counts([0.5, 0.5], 3).v, [1, 2])

    def test_float_noise(self):
        assert floor_counts(100000, 0.1 + 0.2) == 30000
        assert floor_counts(100000, 0.29) == 29000

    def test_overshoot_rejected(self):
        with pytest.raises(InconsistentCountsError):
            to_counts([0.7, 0.7, 0.0], 100)

    def test_range(self):
        with pytest.raises(RangeError):
            to_counts([-0.1, 1.1], 10)

    @given(st.lists(st.floats(0, 1), min_size=2, max_size=6), st.integers(1, 10**6))
    def test_floor_property(self, raw, N):
        x = np.array(raw)
        if x[:-1].sum() > 1:
            x = x / max(x.sum(), 1e-300)
        x = np.append(x[:-1], max(0.0, 1 - x[:-1].sum()))
        if N * x[:-1].sum() - N > -1e-6 * N:
            return
        cv = to_counts(x, N)
        assert cv.v.sum() == N
        d = N * x[:-1] - cv.v[:-1]
        assert np.all(d > -1e-6) and np.all(d < 1)

    def test_corpus_scale(self):
        corpus = synthesize_corpus(np.random.default_rng(1), n_countries=3, surveys_per_country=8)
        h = FuelHierarchy.default()
        for r in corpus.records:
            for tc in tier_counts(r, h, 100000):
                if tc.tier == 0:
                    for pos, c in enumerate(h.tiers[0].children[:-1]):
                        if tc.observed[pos] and c in r.proportions:
                            assert abs(tc.counts[pos] / 100000 - r.proportions[c]) <= 1e-5


class TestTierCounts:
    h = FuelHierarchy.default()

    def test_full_record(self):
        props = {"solid": 0.5, "kerosene": 0.1, "gas": 0.2, "electricity": 0.1, "others": 0.1,
                 "biomass": 0.3, "charcoal": 0.15, "coal": 0.05,
                 "wood": 0.2, "cropwaste": 0.06, "dung": 0.04}
        tcs = tier_counts(obs(props), self.h, 1000)
        assert [t.tier for t in tcs] == [0, 1, 2]
        np.testing.assert_array_equal(tcs[0].counts, [500, 100, 200, 100, 100])
        np.testing.assert_array_equal(tcs[1].counts, [300, 150, 50])
        np.testing.assert_array_equal(tcs[2].counts, [200, 60, 40])
        assert all(t.latent == [] for t in tcs)
        for t in tcs:
            assert t.counts.sum() == t.total

    def test_top_only_terms(self):
        props = {"solid": 0.5, "kerosene": 0.1, "gas": 0.2, "electricity": 0.1}
        tcs = [t for t in tier_counts(obs(props), self.h, 1000) if t.terms]
        assert len(tcs) == 1 and tcs[0].terms == [0, 1, 2, 3]
        assert tcs[0].counts[-1] == 100

    def test_gap_becomes_latent(self):
        props = {"solid": 0.5, "electricity": 0.1, "others": 0.1}
        tc = tier_counts(obs(props), self.h, 1000)[0]
        assert tc.latent == [1, 2]
        assert tc.counts[1] + tc.counts[2] == 300

    def test_tail_marginalized(self):
        props = {"solid": 0.6, "kerosene": 0.1, "gas": 0.2, "electricity": 0.05, "others": 0.05,
                 "wood": 0.3}
        tcs = tier_counts(obs(props), self.h, 1000)
        # mid tier has no biomass value, so the lower tier parent count is unknown
        assert [t.tier for t in tcs if t.terms] == [0]
        assert 2 not in [t.tier for t in tcs]

    def test_renormalization(self):
        r = obs({"wood": 0.45}, nonresponse=0.1)
        assert renormalized(r)["wood"] == pytest.approx(0.5)

    def test_complete_parent_from_children(self):
        p = complete_proportions({"wood": 0.1, "cropwaste": 0.2, "dung": 0.05}, self.h)
        assert p["biomass"] == pytest.approx(0.35)


class TestUnUrban:
    def test_clamp_and_interpolate(self, tmp_path):
        p = tmp_path / "un.csv"
        p.write_text("country,year,urban_proportion\nA,1990,0.0\nA,1992,0.6\n"
                     "B,1990,0.4\nB,1992,0.6\n")
        un = load_un_urban(p, 1990, 1995)
        assert un.value("A", 1990) == pytest.approx(1e-6)
        assert un.value("B", 1991) == pytest.approx(0.5)
        assert un.value("B", 1995) == pytest.approx(0.6)

    def test_missing_country(self, tmp_path):
        p = tmp_path / "un.csv"
        p.write_text("country,year,urban_proportion\nA,1990,0.3\n")
        with pytest.raises(MissingOffsetError, match="B, C"):
            load_un_urban(p, countries=["A", "B", "C"])
        with pytest.raises(MissingOffsetError):
            UnUrbanSeries({}, np.arange(1990, 1992)).value("Z", 1990)

    def test_round_trip(self, tmp_path):
        years = np.arange(1990, 2018)
        un = UnUrbanSeries({"A": np.linspace(0.2, 0.5, years.size)}, years)
        p = tmp_path / "un.csv"
        write_un_urban(p, un)
        back = load_un_urban(p)
        np.testing.assert_array_equal(back.values["A"], un.values["A"])


class TestRegionMap:
    def test_round_trip(self, tmp_path):
        rm = RegionMap.from_rows([("A", "R1", "S1"), ("B", "R2", "S1")])
        p = tmp_path / "r.csv"
        write_region_map(p, rm)
        assert load_region_map(p).rows() == rm.rows()

    def test_conflicts(self):
        with pytest.raises(ValueError):
            RegionMap.from_rows([("A", "R1", "S1"), ("A", "R2", "S1")])
        with pytest.raises(ValueError):
            RegionMap.from_rows([("A", "R1", "S1"), ("B", "R1", "S2")])
        with pytest.raises(KeyError):
            RegionMap.from_rows([("A", "R1", "S1")]).region("B")
