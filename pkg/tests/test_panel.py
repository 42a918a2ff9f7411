import math
import os

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lingermort.errors import (
    AgeOutOfRangeError,
    EmptyExportError,
    InconsistentExposureError,
    MalformedRowError,
    MissingCellError,
    NegativeDeathsError,
    NonPositiveExposureError,
    RaggedYearsError,
    UnknownEraError,
    YearOutOfRangeError,
    ZeroBaselineRateError,
    ZeroRateError,
)
from lingermort.panel import (
    SIX_CAUSE_AXIS,
    AgeAxis,
    CauseAxis,
    ImprovementTensor,
    MortalityPanel,
    excess_log_mortality,
    improvement_tensor,
    load_canonical_csv,
    load_wonder_export,
    map_icd_code,
    pct_change,
    period_life_expectancy,
    log_rate_interpolator,
    single_age_hazards,
    write_canonical_csv,
)

from conftest import make_panel


# ---------------------------------------------------------------------------
# Age axis
# ---------------------------------------------------------------------------

class TestAgeAxis:
    def test_closed_bands(self):
        ax = AgeAxis.from_labels(["35-44", "45-54", "55-64"])
        assert ax.bounds == ((35.0, 45.0), (45.0, 55.0), (55.0, 65.0))
        assert ax.midpoints == (40.0, 50.0, 60.0)

    def test_infant_and_open_bands(self):
        ax = AgeAxis.from_labels(["<1", "1-4", "5-14", "15+"])
        assert ax.bounds[0] == (0.0, 1.0)
        assert ax.bounds[1] == (1.0, 5.0)
        assert ax.bounds[-1] == (15.0, None)
        assert ax.midpoints[-1] == 20.0  # lower bound + offset

    def test_non_contiguous_rejected(self):
        with pytest.raises(ValueError):
            AgeAxis.from_labels(["35-44", "55-64"])

    def test_open_band_not_last_rejected(self):
        with pytest.raises(ValueError):
            AgeAxis.from_labels(["35+", "45-54"])

    def test_unparseable_label(self):
        with pytest.raises(ValueError):
            AgeAxis.from_labels(["thirty-five"])

    def test_index_of_age(self):
        ax = AgeAxis.from_labels(["35-44", "45-54", "55+"])
        assert ax.index_of_age(35) == 0
        assert ax.index_of_age(44.9) == 0
        assert ax.index_of_age(45) == 1
        assert ax.index_of_age(90) == 2
        with pytest.raises(AgeOutOfRangeError):
            ax.index_of_age(20)


class TestCauseAxis:
    def test_residual_resolution(self):
        cx = CauseAxis(("A", "B", "C"))
        assert cx.residual == 2        # -1 wraps to the last cause

    def test_duplicate_labels_rejected(self):
        with pytest.raises(ValueError):
            CauseAxis(("A", "A"))


# ---------------------------------------------------------------------------
# ICD mapping
# ---------------------------------------------------------------------------

class TestIcdMapping:
    @pytest.mark.parametrize("code,cause", [
        ("A15.0", 0), ("B99", 0),
        ("C50.9", 1), ("D48", 1), ("C00", 1),
        ("I21.4", 2), ("I99", 2),
        ("J12.9", 3), ("J98", 3),
        ("V02", 4), ("X72", 4), ("Y89", 4),
        ("J99", 5), ("D49", 5), ("E11.9", 5), ("U07.1", 5), ("R99", 5),
    ])
    def test_icd10_chapters(self, code, cause):
        assert map_icd_code(code, "icd10") == cause

    @pytest.mark.parametrize("code,cause", [
        ("001", 0), ("139", 0),
        ("140", 1), ("239", 1),
        ("390", 2), ("437", 2),
        ("460", 3), ("519", 3),
        ("E800", 4), ("E999", 4),
        ("438", 5), ("250", 5), ("799.9", 5),
    ])
    def test_icd9_ranges(self, code, cause):
        assert map_icd_code(code, "icd9") == cause

    def test_icd8_differs_on_circulatory_tail(self):
        assert map_icd_code("440", "icd8") == 2     # in 390-458
        assert map_icd_code("440", "icd9") == 5     # above 437
        assert map_icd_code("E805", "icd8") == 5    # below the icd8 E range
        assert map_icd_code("E805", "icd9") == 4

    def test_unknown_era(self):
        with pytest.raises(UnknownEraError):
            map_icd_code("A00", "icd7")

    def test_era_spelling_normalized(self):
        assert map_icd_code("A00", "ICD-10") == 0


# ---------------------------------------------------------------------------
# Panel validation
# ---------------------------------------------------------------------------

class TestMortalityPanel:
    def _pieces(self):
        ax = AgeAxis.from_labels(["35-44", "45-54"])
        cx = CauseAxis(("A", "B"))
        years = np.arange(2001, 2004)
        deaths = np.ones((2, 3, 2))
        expo = np.full((2, 3), 100.0)
        return ax, cx, years, deaths, expo

    def test_valid_panel(self):
        ax, cx, years, deaths, expo = self._pieces()
        pn = MortalityPanel(ax, cx, years, deaths, expo)
        assert pn.shape == (2, 3, 2)
        assert np.allclose(pn.rates, 0.01)
        assert not pn.rates.flags.writeable

    def test_gap_in_years(self):
        ax, cx, years, deaths, expo = self._pieces()
        with pytest.raises(RaggedYearsError):
            MortalityPanel(ax, cx, np.array([2001, 2002, 2004]), deaths, expo)

    def test_zero_exposure(self):
        ax, cx, years, deaths, expo = self._pieces()
        expo = expo.copy()
        expo[0, 1] = 0.0
        with pytest.raises(NonPositiveExposureError):
            MortalityPanel(ax, cx, years, deaths, expo)

    def test_negative_deaths(self):
        ax, cx, years, deaths, expo = self._pieces()
        deaths = deaths.copy()
        deaths[1, 2, 0] = -3.0
        with pytest.raises(NegativeDeathsError):
            MortalityPanel(ax, cx, years, deaths, expo)

    def test_year_index_and_window(self):
        ax, cx, years, deaths, expo = self._pieces()
        pn = MortalityPanel(ax, cx, years, deaths, expo)
        assert pn.year_index(2002) == 1
        with pytest.raises(YearOutOfRangeError):
            pn.year_index(1999)
        w = pn.window(2002, 2003)
        assert list(w.years) == [2002, 2003]
        assert w.deaths.shape == (2, 2, 2)

    def test_aggregate_deaths(self):
        ax, cx, years, deaths, expo = self._pieces()
        pn = MortalityPanel(ax, cx, years, deaths, expo)
        assert np.allclose(pn.aggregate_deaths(), 2.0)


# ---------------------------------------------------------------------------
# Improvement tensor stacking
# ---------------------------------------------------------------------------

class TestImprovementTensor:
    def test_improvements_match_log_differences(self, rng):
        pn = make_panel(rng, X=3, T=6, C=2)
        zt = improvement_tensor(pn)
        logm = np.log(pn.rates)
        assert np.allclose(zt.z, logm[:, 1:, :] - logm[:, :-1, :])
        assert list(zt.years) == list(pn.years[1:])

    def test_zero_rate_reports_coordinates(self):
        ax = AgeAxis.from_labels(["35-44"])
        cx = CauseAxis(("A", "B"))
        deaths = np.ones((1, 3, 2))
        deaths[0, 1, 1] = 0.0
        pn = MortalityPanel(ax, cx, np.arange(2001, 2004), deaths,
                            np.full((1, 3), 10.0))
        with pytest.raises(ZeroRateError):
            improvement_tensor(pn)

    @given(x=st.integers(0, 3), t=st.integers(0, 4), c=st.integers(0, 2))
    def test_flat_index_matches_stacking(self, x, t, c):
        X, S, C = 4, 5, 3
        z = np.arange(X * S * C, dtype=float).reshape(X, S, C)
        zt = ImprovementTensor(z, np.arange(2001, 2001 + S))
        assert zt.stacked()[zt.flat_index(x, t, c)] == z[x, t, c]

    def test_stack_round_trip(self, rng):
        z = rng.normal(size=(4, 5, 3))
        zt = ImprovementTensor(z, np.arange(2001, 2006))
        back = ImprovementTensor.from_stacked(zt.stacked(), 4, 3, zt.years)
        assert np.array_equal(back.z, z)

    def test_stacking_is_age_fastest(self):
        # consecutive stacked entries at fixed (t, c) step through ages
        z = np.zeros((3, 2, 2))
        z[:, 0, 0] = [1.0, 2.0, 3.0]
        zt = ImprovementTensor(z, np.arange(2001, 2003))
        assert list(zt.stacked()[:3]) == [1.0, 2.0, 3.0]


# ---------------------------------------------------------------------------
# Canonical CSV round trip
# ---------------------------------------------------------------------------

class TestCanonicalCsv:
    def _write(self, pn, path):
        rows = []
        for x, lab in enumerate(pn.age_axis.labels):
            for t, year in enumerate(pn.years):
                for c, cause in enumerate(pn.cause_axis.causes):
                    rows.append({"age_group": lab, "year": int(year),
                                 "cause": cause,
                                 "deaths": pn.deaths[x, t, c],
                                 "population": pn.exposures[x, t]})
        write_canonical_csv(rows, path)

    def test_round_trip(self, rng, tmp_path):
        pn = make_panel(rng, X=3, T=5, C=2)
        path = tmp_path / "panel.csv"
        self._write(pn, path)
        back = load_canonical_csv(path)
        assert back.age_axis.labels == pn.age_axis.labels
        assert np.allclose(back.deaths, pn.deaths)
        assert np.allclose(back.exposures, pn.exposures)

    def test_missing_cell_reported(self, rng, tmp_path):
        pn = make_panel(rng, X=2, T=3, C=2)
        path = tmp_path / "panel.csv"
        rows = []
        for x, lab in enumerate(pn.age_axis.labels):
            for t, year in enumerate(pn.years):
                for c, cause in enumerate(pn.cause_axis.causes):
                    if (x, t, c) == (1, 1, 0):
                        continue
                    rows.append({"age_group": lab, "year": int(year),
                                 "cause": cause, "deaths": 1.0,
                                 "population": 10.0})
        write_canonical_csv(rows, path)
        with pytest.raises(MissingCellError) as err:
            load_canonical_csv(path)
        assert ("45-54", int(pn.years[1]), "A") in err.value.cells

    def test_inconsistent_population(self, tmp_path):
        path = tmp_path / "panel.csv"
        rows = [
            {"age_group": "35-44", "year": 2001, "cause": "A",
             "deaths": 1.0, "population": 10.0},
            {"age_group": "35-44", "year": 2001, "cause": "B",
             "deaths": 1.0, "population": 11.0},
        ]
        write_canonical_csv(rows, path)
        with pytest.raises(InconsistentExposureError):
            load_canonical_csv(path)

    def test_missing_columns(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("age_group,year\n35-44,2001\n")
        with pytest.raises(MalformedRowError):
            load_canonical_csv(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("age_group,year,cause,deaths,population\n")
        with pytest.raises(EmptyExportError):
            load_canonical_csv(path)

    def test_six_cause_labels_adopt_standard_axis(self, tmp_path):
        path = tmp_path / "panel.csv"
        rows = []
        for cause in ("Cancer", "Other"):
            rows.append({"age_group": "35-44", "year": 2001, "cause": cause,
                         "deaths": 1.0, "population": 10.0})
        # standard axis requires all six causes; give the remaining four too
        for cause in ("Infectious", "Circulatory", "Respiratory", "External"):
            rows.append({"age_group": "35-44", "year": 2001, "cause": cause,
                         "deaths": 1.0, "population": 10.0})
        write_canonical_csv(rows, path)
        pn = load_canonical_csv(path)
        assert pn.cause_axis is SIX_CAUSE_AXIS


# ---------------------------------------------------------------------------
# WONDER adapter
# ---------------------------------------------------------------------------

WONDER_HEADER = "Notes\tAge Group\tYear\tICD Code\tDeaths\tPopulation\n"


class TestWonderExport:
    def _lines(self):
        rows = [
            ("", "35-44", "2001", "C50", "5", "1000"),
            ("", "35-44", "2001", "I21", "3", "1000"),
            ("", "35-44", "2002", "C34", "4", "1100"),
            ("", "45-54", "2001", "J18", "2", "900"),
            ("", "45-54", "2002", "R99", "1", "950"),
        ]
        return WONDER_HEADER + "".join("\t".join(r) + "\n" for r in rows)

    def test_grouping_and_densification(self, tmp_path):
        path = tmp_path / "export.txt"
        path.write_text(self._lines())
        rows = load_wonder_export(path, era="icd10")
        # dense grid: 2 ages x 2 years x 6 causes
        assert len(rows) == 24
        by = {(r["age_group"], r["year"], r["cause"]): r for r in rows}
        assert by[("35-44", 2001, "Cancer")]["deaths"] == 5.0
        assert by[("35-44", 2001, "Circulatory")]["deaths"] == 3.0
        assert by[("45-54", 2002, "Other")]["deaths"] == 1.0
        assert by[("35-44", 2001, "External")]["deaths"] == 0.0
        assert by[("45-54", 2001, "Respiratory")]["population"] == 900.0

    def test_codes_summed_within_cause(self, tmp_path):
        path = tmp_path / "export.txt"
        body = (("", "35-44", "2001", "C50", "5", "1000"),
                ("", "35-44", "2001", "C34", "7", "1000"))
        path.write_text(WONDER_HEADER
                        + "".join("\t".join(r) + "\n" for r in body))
        rows = load_wonder_export(path, era="icd10")
        by = {(r["age_group"], r["year"], r["cause"]): r for r in rows}
        assert by[("35-44", 2001, "Cancer")]["deaths"] == 12.0

    def test_notes_footer_skipped(self, tmp_path):
        path = tmp_path / "export.txt"
        path.write_text(self._lines()
                        + "Notes: query produced by somebody\n")
        rows = load_wonder_export(path, era="icd10")
        assert len(rows) == 24

    def test_empty_export(self, tmp_path):
        path = tmp_path / "export.txt"
        path.write_text(WONDER_HEADER)
        with pytest.raises(EmptyExportError):
            load_wonder_export(path)

    def test_malformed_row(self, tmp_path):
        path = tmp_path / "export.txt"
        path.write_text(WONDER_HEADER + "\t35-44\tnot-a-year\tC50\t5\t1000\n")
        with pytest.raises(MalformedRowError):
            load_wonder_export(path)

    def test_population_conflict(self, tmp_path):
        path = tmp_path / "export.txt"
        body = (("", "35-44", "2001", "C50", "5", "1000"),
                ("", "35-44", "2001", "I21", "5", "1001"))
        path.write_text(WONDER_HEADER
                        + "".join("\t".join(r) + "\n" for r in body))
        with pytest.raises(InconsistentExposureError):
            load_wonder_export(path)


# ---------------------------------------------------------------------------
# Descriptive statistics
# ---------------------------------------------------------------------------

class TestExcessLogMortality:
    def test_flat_rates_give_zero(self):
        ax = AgeAxis.from_labels(["35-44", "45-54"])
        cx = CauseAxis(("A",))
        deaths = np.ones((2, 4, 1)) * 5.0
        pn = MortalityPanel(ax, cx, np.arange(2001, 2005), deaths,
                            np.full((2, 4), 100.0))
        em, years, std = excess_log_mortality(pn, 2002)
        assert np.allclose(em, 0.0)
        assert list(years) == [2003, 2004]
        assert np.allclose(std, 0.0)

    def test_standardization_uses_baseline_exposures(self):
        ax = AgeAxis.from_labels(["35-44", "45-54"])
        cx = CauseAxis(("A",))
        deaths = np.ones((2, 2, 1))
        deaths[0, 1, 0] = math.e       # em = 1 for age 0, 0 for age 1
        expo = np.array([[100.0, 100.0], [300.0, 300.0]])
        pn = MortalityPanel(ax, cx, np.arange(2001, 2003), deaths, expo)
        _, _, std = excess_log_mortality(pn, 2001)
        assert np.allclose(std, 0.25)  # weight 100/400 on the shifted age

    def test_bad_baseline_year(self, rng):
        pn = make_panel(rng, X=2, T=4, C=2)
        from lingermort.errors import BaselineOutOfRangeError
        with pytest.raises(BaselineOutOfRangeError):
            excess_log_mortality(pn, 1900)


class TestPctChange:
    def test_doubling_is_plus_100(self):
        ax = AgeAxis.from_labels(["35-44"])
        cx = CauseAxis(("A",))
        deaths = np.array([[[2.0], [4.0]]])
        pn = MortalityPanel(ax, cx, np.arange(2001, 2003), deaths,
                            np.full((1, 2), 100.0))
        assert np.allclose(pct_change(pn, 2001, 2002), 100.0)

    def test_zero_baseline(self):
        ax = AgeAxis.from_labels(["35-44"])
        cx = CauseAxis(("A",))
        deaths = np.array([[[0.0], [4.0]]])
        pn = MortalityPanel(ax, cx, np.arange(2001, 2003), deaths,
                            np.full((1, 2), 100.0))
        with pytest.raises(ZeroBaselineRateError):
            pct_change(pn, 2001, 2002)


class TestInterpolation:
    def test_weights_reproduce_node_values(self):
        mids = np.array([40.0, 50.0, 60.0, 70.0])
        W = log_rate_interpolator(mids, mids)
        assert np.allclose(W, np.eye(4), atol=1e-12)

    def test_matches_direct_spline(self, rng):
        from scipy.interpolate import CubicSpline
        mids = np.array([40.0, 50.0, 60.0, 70.0])
        y = rng.normal(size=4)
        ages = np.linspace(40, 70, 31)
        W = log_rate_interpolator(mids, ages)
        cs = CubicSpline(mids, y, bc_type="natural")
        assert np.allclose(W @ y, cs(ages), atol=1e-12)

    def test_linear_extrapolation(self):
        mids = np.array([40.0, 50.0])
        y = np.array([0.0, 1.0])   # straight line with slope 0.1
        ages = np.array([30.0, 60.0])
        W = log_rate_interpolator(mids, ages)
        assert np.allclose(W @ y, [-1.0, 2.0], atol=1e-12)


class TestLifeExpectancy:
    def _flat_panel(self, rate):
        ax = AgeAxis.from_labels(["35-44", "45-54", "55-64", "65-74"])
        cx = CauseAxis(("A",))
        expo = np.full((4, 1), 1000.0)
        deaths = np.full((4, 1, 1), rate * 1000.0)
        return MortalityPanel(ax, cx, np.array([2001]), deaths, expo)

    def test_zero_hazard_reaches_closure(self):
        ax = AgeAxis.from_labels(["35-44", "45-54"])
        cx = CauseAxis(("A", "B"))
        deaths = np.zeros((2, 1, 2))
        pn = MortalityPanel(ax, cx, np.array([2001]), deaths,
                            np.full((2, 1), 10.0))
        # everyone survives to the closure age and dies there exactly
        assert period_life_expectancy(pn, 35, 2001) == pytest.approx(75.0)

    def test_constant_hazard_closed_form(self):
        h = 0.02
        pn = self._flat_panel(h)
        K = 110 - 35
        surv = np.exp(-h * np.arange(1, K + 1))
        expected = surv.sum() + 0.5 * (1.0 - surv[-1])
        assert period_life_expectancy(pn, 35, 2001) == pytest.approx(
            expected, rel=1e-10)

    def test_hazards_sum_over_causes(self):
        ax = AgeAxis.from_labels(["35-44", "45-54"])
        cx = CauseAxis(("A", "B"))
        deaths = np.full((2, 1, 2), 5.0)
        pn = MortalityPanel(ax, cx, np.array([2001]), deaths,
                            np.full((2, 1), 1000.0))
        total = single_age_hazards(pn, 2001, np.array([40.0]))
        assert total[0] == pytest.approx(0.01, rel=1e-12)

    def test_age_bounds_checked(self, rng):
        pn = make_panel(rng, X=3, T=2, C=2)
        with pytest.raises(AgeOutOfRangeError):
            period_life_expectancy(pn, 20, pn.years[0])
        with pytest.raises(AgeOutOfRangeError):
            period_life_expectancy(pn, 110, pn.years[0])

    def test_higher_mortality_lower_expectancy(self):
        lo = period_life_expectancy(self._flat_panel(0.01), 35, 2001)
        hi = period_life_expectancy(self._flat_panel(0.05), 35, 2001)
        assert hi < lo
