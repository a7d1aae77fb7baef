"""Batch runner: config parsing, report round-trips, the fit contest,
and end-to-end runs over simulated data.

The end-to-end fixtures run the pipeline twice into separate
directories so byte-level determinism can be checked directly.
"""

import datetime as dt
import json
import math

import pytest

from eventsynth import (
    CellResult,
    DataError,
    RunConfig,
    RunReport,
    emit_csvs,
    emit_mspe_contest,
    event_dates,
    read_report,
    run_pipeline,
)
from eventsynth.pipeline import _write_report_csv

from conftest import sim_truth


def require(tmp, **kwargs):
    """RunConfig with the mandatory paths filled in from a tmp dir."""
    defaults = dict(
        returns=tmp / "returns.csv",
        fundamentals=tmp / "fundamentals.csv",
        membership=tmp / "membership.csv",
        output_dir=tmp / "out",
    )
    defaults.update(kwargs)
    return RunConfig(**defaults)


def rows_match(a: CellResult, b: CellResult) -> bool:
    # fit statistics are written with 6 decimals, so allow that much loss
    def feq(x, y):
        if math.isnan(x) and math.isnan(y):
            return True
        return abs(x - y) <= 1e-6

    return (
        a.key == b.key
        and a.n_treated == b.n_treated
        and a.n_control == b.n_control
        and feq(a.capm_mspe, b.capm_mspe)
        and feq(a.gsynth_mspe, b.gsynth_mspe)
        and a.r_chosen == b.r_chosen
        and a.feasible == b.feasible
        and a.note == b.note
    )


class TestRunConfigValidation:
    def test_estimator_order_is_canonical(self, tmp_path):
        cfg = require(tmp_path, estimators=("gsynth", "capm", "capm"))
        assert cfg.estimators == ("capm", "gsynth")

    def test_direction_and_variant_order(self, tmp_path):
        cfg = require(
            tmp_path, directions=["delist", "join"], variants=["base", "full"]
        )
        assert cfg.directions == ("join", "delist")
        assert cfg.variants == ("full", "base")

    def test_empty_estimators_rejected(self, tmp_path):
        with pytest.raises(DataError, match="estimators must be non-empty"):
            require(tmp_path, estimators=())

    def test_unknown_direction_rejected(self, tmp_path):
        with pytest.raises(DataError, match="unknown directions entry 'exit'"):
            require(tmp_path, directions=("exit",))

    def test_unknown_variant_rejected(self, tmp_path):
        with pytest.raises(DataError, match="unknown variants entry"):
            require(tmp_path, variants=("tiny",))

    def test_years_sorted_and_deduplicated(self, tmp_path):
        cfg = require(tmp_path, years=[2014, 2013, 2013])
        assert cfg.years == (2013, 2014)

    def test_negative_year_rejected(self, tmp_path):
        with pytest.raises(DataError, match="years entries must be >= 0"):
            require(tmp_path, years=[-1])

    def test_negative_r_rejected(self, tmp_path):
        with pytest.raises(DataError, match="r must be >= 0"):
            require(tmp_path, r=-1)

    def test_r_candidates_must_be_non_negative(self, tmp_path):
        with pytest.raises(DataError, match="r_candidates entries must be >= 0"):
            require(tmp_path, r_candidates=(-1, 2))

    @pytest.mark.parametrize(
        "kwargs, pattern",
        [
            ({"b1": 0}, "b1 must be >= 1"),
            ({"b2": 1}, "b2 must be >= 2"),
            ({"confidence": 1.0}, r"confidence must be in \[0, 1\)"),
            ({"confidence": -0.1}, r"confidence must be in \[0, 1\)"),
            ({"max_retries": -1}, "max_retries must be >= 0"),
        ],
    )
    def test_bootstrap_knob_bounds(self, tmp_path, kwargs, pattern):
        with pytest.raises(DataError, match=pattern):
            require(tmp_path, **kwargs)

    @pytest.mark.parametrize("field", ["demean", "plots"])
    def test_flags_must_be_actual_booleans(self, tmp_path, field):
        with pytest.raises(DataError, match=f"{field} must be true or false"):
            require(tmp_path, **{field: "yes"})

    def test_grid_days_below_one_rejected(self, tmp_path):
        with pytest.raises(DataError, match="grid from_days entries must be >= 1"):
            require(tmp_path, grid_from_days=(0, 5))

    def test_grid_days_sorted_and_deduplicated(self, tmp_path):
        cfg = require(tmp_path, grid_to_days=[36, 5, 5, 10])
        assert cfg.grid_to_days == (5, 10, 36)

    def test_year_block_span_must_be_ordered(self, tmp_path):
        with pytest.raises(DataError, match=r"\(3, 2\) is not a valid day span"):
            require(tmp_path, year_blocks=[(3, 2)])

    def test_year_block_needs_two_entries(self, tmp_path):
        with pytest.raises(DataError, match="year_blocks entries must be"):
            require(tmp_path, year_blocks=[(1,)])

    def test_year_blocks_sorted_and_deduplicated(self, tmp_path):
        cfg = require(tmp_path, year_blocks=[[15, 22], [1, 14], [15, 22]])
        assert cfg.year_blocks == ((1, 14), (15, 22))

    def test_firm_industries_must_be_two_digit(self, tmp_path):
        with pytest.raises(DataError, match="two-digit code"):
            require(tmp_path, firm_industries={"F1": "7"})

    def test_announcement_mapping_form_parses_dates(self, tmp_path):
        cfg = require(
            tmp_path,
            announcements={
                "2013": {"announcement": "2013-02-20", "effective": "2013-02-27"}
            },
        )
        assert cfg.announcements[2013] == (
            dt.date(2013, 2, 20),
            dt.date(2013, 2, 27),
        )

    def test_announcement_pair_form_parses_dates(self, tmp_path):
        cfg = require(tmp_path, announcements={2014: ["2014-02-19", "2014-02-26"]})
        assert cfg.announcements[2014] == (
            dt.date(2014, 2, 19),
            dt.date(2014, 2, 26),
        )

    def test_announcement_key_must_be_a_year(self, tmp_path):
        with pytest.raises(DataError, match="not a year"):
            require(tmp_path, announcements={"soon": ["2013-02-20", "2013-02-27"]})

    def test_announcement_mapping_needs_exact_keys(self, tmp_path):
        with pytest.raises(DataError, match="exactly the keys"):
            require(
                tmp_path,
                announcements={2013: {"announcement": "2013-02-20", "eff": "x"}},
            )

    def test_announcement_pair_needs_two_dates(self, tmp_path):
        with pytest.raises(DataError, match="must hold two dates"):
            require(tmp_path, announcements={2013: ["2013-02-20"]})

    def test_announcement_bad_date_names_the_field(self, tmp_path):
        with pytest.raises(DataError, match=r"announcements\[2013\].announcement"):
            require(tmp_path, announcements={2013: ["not-a-date", "2013-02-27"]})


class TestRunConfigFromFile:
    def write(self, tmp_path, payload, name="config.json"):
        path = tmp_path / name
        path.write_text(json.dumps(payload), encoding="utf-8")
        return path

    def minimal(self, **extra):
        payload = {
            "returns": "returns.csv",
            "fundamentals": "fundamentals.csv",
            "membership": "membership.csv",
            "output_dir": "results",
        }
        payload.update(extra)
        return payload

    def test_relative_paths_resolve_against_config_dir(self, tmp_path):
        nested = tmp_path / "cfg"
        nested.mkdir()
        cfg = RunConfig.from_file(self.write(nested, self.minimal()))
        assert cfg.returns == nested / "returns.csv"
        assert cfg.output_dir == nested / "results"

    def test_absolute_paths_kept_verbatim(self, tmp_path):
        abs_ret = tmp_path / "elsewhere" / "returns.csv"
        cfg = RunConfig.from_file(
            self.write(tmp_path, self.minimal(returns=str(abs_ret)))
        )
        assert cfg.returns == abs_ret

    def test_gsynth_section_maps_onto_fields(self, tmp_path):
        payload = self.minimal(
            gsynth={"r": 3, "b2": 64, "confidence": 0.9, "demean": True}
        )
        cfg = RunConfig.from_file(self.write(tmp_path, payload))
        assert (cfg.r, cfg.b2, cfg.confidence, cfg.demean) == (3, 64, 0.9, True)

    def test_grid_section_maps_onto_fields(self, tmp_path):
        payload = self.minimal(grid={"from_days": [1, 6], "to_days": [5, 10]})
        cfg = RunConfig.from_file(self.write(tmp_path, payload))
        assert cfg.grid_from_days == (1, 6)
        assert cfg.grid_to_days == (5, 10)

    def test_announcements_parse_from_json(self, tmp_path):
        payload = self.minimal(
            announcements={
                "2013": {"announcement": "2013-02-20", "effective": "2013-02-27"}
            }
        )
        cfg = RunConfig.from_file(self.write(tmp_path, payload))
        assert cfg.announcements[2013][1] == dt.date(2013, 2, 27)

    def test_overrides_win_over_file_values(self, tmp_path):
        cfg = RunConfig.from_file(
            self.write(tmp_path, self.minimal(seed=1)), seed=99
        )
        assert cfg.seed == 99

    def test_unknown_top_level_key_rejected(self, tmp_path):
        path = self.write(tmp_path, self.minimal(colour="red"))
        with pytest.raises(DataError, match="unknown config keys: colour"):
            RunConfig.from_file(path)

    def test_unknown_gsynth_key_rejected(self, tmp_path):
        path = self.write(tmp_path, self.minimal(gsynth={"rank": 2}))
        with pytest.raises(DataError, match="unknown gsynth keys: rank"):
            RunConfig.from_file(path)

    def test_unknown_grid_key_rejected(self, tmp_path):
        path = self.write(tmp_path, self.minimal(grid={"days": [1]}))
        with pytest.raises(DataError, match="unknown grid keys: days"):
            RunConfig.from_file(path)

    def test_gsynth_section_must_be_an_object(self, tmp_path):
        path = self.write(tmp_path, self.minimal(gsynth=[1, 2]))
        with pytest.raises(DataError, match="gsynth section must be an object"):
            RunConfig.from_file(path)

    def test_missing_required_keys_listed(self, tmp_path):
        payload = {"returns": "returns.csv", "fundamentals": "fundamentals.csv"}
        path = self.write(tmp_path, payload)
        with pytest.raises(
            DataError, match="missing config keys: membership, output_dir"
        ):
            RunConfig.from_file(path)

    def test_override_can_supply_missing_key(self, tmp_path):
        payload = {
            "returns": "returns.csv",
            "fundamentals": "fundamentals.csv",
            "membership": "membership.csv",
        }
        cfg = RunConfig.from_file(
            self.write(tmp_path, payload), output_dir=tmp_path / "out"
        )
        assert cfg.output_dir == tmp_path / "out"

    def test_invalid_json_reported(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(DataError, match="invalid JSON"):
            RunConfig.from_file(path)

    def test_non_object_json_rejected(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("[1, 2]", encoding="utf-8")
        with pytest.raises(DataError, match="config must be a JSON object"):
            RunConfig.from_file(path)

    def test_missing_file_reported(self, tmp_path):
        with pytest.raises(DataError, match="config file not found"):
            RunConfig.from_file(tmp_path / "nope.json")


class TestReportStructures:
    def test_cell_result_defaults(self):
        row = CellResult(year=2013, industry="33", direction="join")
        assert row.key == (2013, "33", "join")
        assert (row.n_treated, row.n_control) == (0, 0)
        assert math.isnan(row.capm_mspe) and math.isnan(row.gsynth_mspe)
        assert row.r_chosen is None
        assert row.feasible is True and row.note == ""

    def test_duplicate_rows_rejected(self):
        row = CellResult(year=2013, industry="33", direction="join")
        with pytest.raises(DataError, match="duplicate"):
            RunReport(rows=(row, row))

    def test_row_lookup(self):
        row = CellResult(year=2013, industry="33", direction="join")
        report = RunReport(rows=(row,))
        assert report.row(2013, "33", "join") is row
        with pytest.raises(DataError, match=r"no report row for \(2014, 33, join\)"):
            report.row(2014, "33", "join")


class TestReportCsvRoundTrip:
    def test_values_survive_write_and_read(self, tmp_path):
        rows = (
            CellResult(
                year=2013, industry="33", direction="join",
                n_treated=3, n_control=12,
                capm_mspe=1.25, gsynth_mspe=0.5,
                r_chosen=2, feasible=True, note="",
            ),
            CellResult(
                year=2014, industry="42", direction="delist",
                feasible=False, note="no announcement dates configured for 2014",
            ),
        )
        path = tmp_path / "run_report.csv"
        _write_report_csv(RunReport(rows=rows), path)
        back = read_report(path)
        assert len(back.rows) == 2
        assert all(rows_match(a, b) for a, b in zip(rows, back.rows))

    def test_missing_report_file(self, tmp_path):
        with pytest.raises(DataError, match="report file not found"):
            read_report(tmp_path / "run_report.csv")

    def test_empty_report_file(self, tmp_path):
        path = tmp_path / "run_report.csv"
        path.write_text("", encoding="utf-8")
        with pytest.raises(DataError, match="file is empty"):
            read_report(path)

    def test_wrong_header_rejected(self, tmp_path):
        path = tmp_path / "run_report.csv"
        path.write_text("a,b,c\n1,2,3\n", encoding="utf-8")
        with pytest.raises(DataError, match="not a run report"):
            read_report(path)

    def test_short_row_rejected(self, tmp_path):
        path = tmp_path / "run_report.csv"
        path.write_text(
            "year,industry,direction,n_treated,n_control,capm_mspe,"
            "gsynth_mspe,r,feasible,note\n2013,33,join\n",
            encoding="utf-8",
        )
        with pytest.raises(DataError, match="line 2: expected 10 fields"):
            read_report(path)

    def test_unparseable_number_names_the_line(self, tmp_path):
        path = tmp_path / "run_report.csv"
        path.write_text(
            "year,industry,direction,n_treated,n_control,capm_mspe,"
            "gsynth_mspe,r,feasible,note\n2013,33,join,x,0,,,,true,\n",
            encoding="utf-8",
        )
        with pytest.raises(DataError, match="line 2"):
            read_report(path)


def contest_row(year, capm, gsynth, direction="join", industry="33"):
    return CellResult(
        year=year, industry=industry, direction=direction,
        n_treated=2, n_control=8,
        capm_mspe=capm, gsynth_mspe=gsynth, r_chosen=2,
    )


class TestMspeContest:
    def test_paired_test_favors_the_tighter_fit(self, tmp_path):
        report = RunReport(rows=(
            contest_row(2013, 2.0, 1.0),
            contest_row(2014, 3.0, 1.5),
            contest_row(2015, 4.0, 2.0),
        ))
        (result,) = emit_mspe_contest(report, tmp_path)
        assert result.direction == "join"
        assert (result.n_cells, result.gsynth_wins, result.capm_wins) == (3, 3, 0)
        assert result.ties == 0
        assert result.estimate == pytest.approx(1.5)
        # diffs (1, 1.5, 2): t = 1.5 / (0.5 / sqrt(3))
        assert result.t_stat == pytest.approx(1.5 / (0.5 / math.sqrt(3)))
        assert result.p_value < 0.05
        assert result.stars == "*"
        assert result.note == ""

    def test_contest_csv_contents(self, tmp_path):
        report = RunReport(rows=(
            contest_row(2014, 1.0, 2.0),
            contest_row(2013, 2.0, 1.0),
            contest_row(2015, 1.0, 1.0),
        ))
        emit_mspe_contest(report, tmp_path)
        lines = (tmp_path / "contest_join.csv").read_text().splitlines()
        assert lines[0] == (
            "year,industry,n_treated,n_control,capm_mspe,gsynth_mspe,better"
        )
        # rows come back sorted by year even though the report was not
        assert [ln.split(",")[0] for ln in lines[1:]] == ["2013", "2014", "2015"]
        assert [ln.split(",")[-1] for ln in lines[1:]] == ["gsynth", "capm", "tie"]

    def test_constant_differences_keep_estimate_without_test(self, tmp_path):
        report = RunReport(rows=(
            contest_row(2013, 2.0, 1.5),
            contest_row(2014, 3.0, 2.5),
        ))
        (result,) = emit_mspe_contest(report, tmp_path)
        assert result.estimate == pytest.approx(0.5)
        assert math.isnan(result.t_stat) and math.isnan(result.p_value)
        assert result.note == "constant differences; no test"

    def test_identical_columns_are_all_ties(self, tmp_path):
        report = RunReport(rows=(
            contest_row(2013, 2.0, 2.0),
            contest_row(2014, 3.0, 3.0),
        ))
        (result,) = emit_mspe_contest(report, tmp_path)
        assert result.ties == 2 and result.estimate == pytest.approx(0.0)
        assert result.note == "constant differences; no test"

    def test_rows_missing_a_fit_statistic_are_excluded(self, tmp_path):
        report = RunReport(rows=(
            contest_row(2013, 2.0, 1.0),
            contest_row(2014, 3.0, 1.5),
            contest_row(2015, float("nan"), 1.0),
        ))
        (result,) = emit_mspe_contest(report, tmp_path)
        assert result.n_cells == 2

    def test_direction_with_one_row_is_skipped(self, tmp_path):
        report = RunReport(rows=(
            contest_row(2013, 2.0, 1.0),
            contest_row(2014, 3.0, 1.5),
            contest_row(2013, 2.0, 1.0, direction="delist"),
        ))
        results = emit_mspe_contest(report, tmp_path)
        assert [r.direction for r in results] == ["delist", "join"]
        assert results[0].note == "skipped: fewer than 2 comparable rows"
        assert not (tmp_path / "contest_delist.csv").exists()
        assert (tmp_path / "contest_join.csv").exists()

    def test_no_qualifying_direction_is_an_error(self, tmp_path):
        report = RunReport(rows=(contest_row(2013, 2.0, 1.0),))
        with pytest.raises(DataError, match="at least 2 industry-year rows"):
            emit_mspe_contest(report, tmp_path)

    def test_summary_csv_lists_every_direction(self, tmp_path):
        report = RunReport(rows=(
            contest_row(2013, 2.0, 1.0),
            contest_row(2014, 3.0, 1.5),
            contest_row(2013, 2.0, 1.0, direction="delist"),
        ))
        emit_mspe_contest(report, tmp_path)
        lines = (tmp_path / "contest_summary.csv").read_text().splitlines()
        assert lines[0] == (
            "direction,n_cells,gsynth_wins,capm_wins,ties,"
            "estimate,t_stat,p_value,stars,note"
        )
        assert lines[1].startswith("delist,1,0,0,0,,,")
        assert lines[2].startswith("join,2,2,0,0,")


def merge_csvs(dest, sources):
    """Concatenate wire-format CSVs that share a header."""
    header = None
    rows = []
    for src in sources:
        lines = src.read_text(encoding="utf-8").splitlines()
        if header is None:
            header = lines[0]
        rows.extend(lines[1:])
    dest.write_text("\n".join([header, *rows]) + "\n", encoding="utf-8")


@pytest.fixture(scope="module")
def two_year_run(tmp_path_factory):
    """Two simulated industry-years merged into one input set, run twice."""
    root = tmp_path_factory.mktemp("pipeline")
    announcements = {}
    sim_dirs = []
    for year, seed in ((2013, 5), (2014, 6)):
        truth = sim_truth(
            n_control=10, n_treated=2, t_control=50, t_treatment=36,
            r_true=2, att=1.0, seed=seed, year=year,
        )
        d = root / f"sim{year}"
        emit_csvs(truth, d)
        ann, eff = event_dates(truth)
        announcements[year] = (ann, eff)
        sim_dirs.append(d)

    data = root / "data"
    data.mkdir()
    for name in ("returns.csv", "fundamentals.csv", "membership.csv"):
        merge_csvs(data / name, [d / name for d in sim_dirs])

    def config(out):
        return RunConfig(
            returns=data / "returns.csv",
            fundamentals=data / "fundamentals.csv",
            membership=data / "membership.csv",
            output_dir=out,
            announcements=announcements,
            r=2,
            b2=8,
            seed=3,
            grid_from_days=(1, 6),
            grid_to_days=(5, 10, 36),
            year_blocks=((1, 14), (15, 22)),
            plots=True,
        )

    out1, out2 = root / "out1", root / "out2"
    report1 = run_pipeline(config(out1))
    report2 = run_pipeline(config(out2))
    return {
        "data": data,
        "announcements": announcements,
        "out1": out1,
        "out2": out2,
        "report": report1,
        "report2": report2,
    }


class TestRunPipelineTwoYears:
    def test_every_cell_feasible(self, two_year_run):
        report = two_year_run["report"]
        assert len(report.rows) == 2
        for year in (2013, 2014):
            row = report.row(year, "33", "join")
            assert row.feasible
            assert row.n_treated == 2
            assert row.n_control == 10
            assert row.r_chosen == 2
            assert math.isfinite(row.capm_mspe) and row.capm_mspe > 0
            assert math.isfinite(row.gsynth_mspe) and row.gsynth_mspe > 0
            assert row.note == ""

    def test_expected_files_exist(self, two_year_run):
        out = two_year_run["out1"]
        for year in (2013, 2014):
            for variant in ("full", "base"):
                stem = f"{year}_33_join_{variant}"
                assert (out / f"car_capm_{stem}.csv").exists()
                assert (out / f"car_gsynth_{stem}.csv").exists()
                assert (out / f"att_{stem}.csv").exists()
                assert (out / f"gaps_{stem}.svg").exists()
        assert (out / "run_report.csv").exists()
        assert (out / "summary.md").exists()
        assert (out / "year_comparison_join.csv").exists()
        assert (out / "contest_join.csv").exists()
        assert (out / "contest_summary.csv").exists()

    def test_no_failure_notices(self, two_year_run):
        # both years ran, the contest ran, the comparison ran
        assert two_year_run["report"].notices == ()

    def test_base_variant_drops_small_controls(self, two_year_run):
        # the 2013 draw leaves 9 of 10 controls above the asset floor
        out = two_year_run["out1"]
        full = (out / "att_2013_33_join_full.csv").read_text()
        base = (out / "att_2013_33_join_base.csv").read_text()
        assert full != base

    def test_grid_csv_is_upper_triangular(self, two_year_run):
        path = two_year_run["out1"] / "car_gsynth_2013_33_join_full.csv"
        lines = path.read_text().splitlines()
        assert lines[0] == "from_day,5,10,36"
        rows = {ln.split(",")[0]: ln.split(",") for ln in lines[1:]}
        assert set(rows) == {"1", "6"}
        # start day 6 cannot end on day 5
        assert rows["6"][1] == ""
        for cell in (rows["1"][1], rows["1"][3], rows["6"][2], rows["6"][3]):
            float(cell.rstrip("*"))

    def test_att_csv_shape_and_bands(self, two_year_run):
        path = two_year_run["out1"] / "att_2013_33_join_full.csv"
        lines = path.read_text().splitlines()
        assert lines[0] == "day,att,se,ci_low,ci_high,perc_low,perc_high"
        assert len(lines) == 37
        for ln in lines[1:]:
            day, att_v, se, lo, hi, plo, phi = ln.split(",")
            assert 1 <= int(day) <= 36
            assert float(se) > 0
            assert float(lo) <= float(att_v) <= float(hi)
            assert float(plo) <= float(phi)

    def test_treatment_effect_visible_in_att(self, two_year_run):
        # the simulation plants a +1 effect; the mean estimate should be
        # near it even with a small panel
        path = two_year_run["out1"] / "att_2013_33_join_full.csv"
        lines = path.read_text().splitlines()[1:]
        values = [float(ln.split(",")[1]) for ln in lines]
        assert 0.5 < sum(values) / len(values) < 1.5

    def test_contest_compares_both_years(self, two_year_run):
        out = two_year_run["out1"]
        lines = (out / "contest_join.csv").read_text().splitlines()
        assert len(lines) == 3
        summary = (out / "contest_summary.csv").read_text().splitlines()
        fields = summary[1].split(",")
        assert fields[0] == "join"
        assert fields[1] == "2"
        assert int(fields[2]) + int(fields[3]) + int(fields[4]) == 2

    def test_year_comparison_table(self, two_year_run):
        path = two_year_run["out1"] / "year_comparison_join.csv"
        lines = path.read_text().splitlines()
        assert lines[0] == "year,2013,2014"
        rows = {ln.split(",")[0]: ln.split(",") for ln in lines[1:]}
        assert rows["2013"][2] != ""
        assert rows["2013"][1] == "" and rows["2014"][1] == ""

    def test_summary_markdown_sections(self, two_year_run):
        text = (two_year_run["out1"] / "summary.md").read_text()
        assert text.startswith("# Event study run")
        for heading in (
            "## Fit statistics",
            "## Fit contest",
            "## CAR grids",
            "## Year comparisons",
        ):
            assert heading in text
        assert "| 2013 | 33 | join |" in text
        assert "Stars: * p < 0.05, ** p < 0.01, *** p < 0.001." in text

    def test_report_round_trips_through_csv(self, two_year_run):
        back = read_report(two_year_run["out1"] / "run_report.csv")
        rows = two_year_run["report"].rows
        assert len(back.rows) == len(rows)
        assert all(rows_match(a, b) for a, b in zip(rows, back.rows))

    def test_same_seed_runs_are_byte_identical(self, two_year_run):
        out1, out2 = two_year_run["out1"], two_year_run["out2"]
        names1 = sorted(p.name for p in out1.iterdir())
        names2 = sorted(p.name for p in out2.iterdir())
        assert names1 == names2
        for name in names1:
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name

    def test_returned_reports_agree(self, two_year_run):
        a, b = two_year_run["report"], two_year_run["report2"]
        assert len(a.rows) == len(b.rows)
        assert all(rows_match(x, y) for x, y in zip(a.rows, b.rows))


@pytest.fixture(scope="module")
def single_year_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("solo")
    truth = sim_truth(
        n_control=10, n_treated=2, t_control=50, t_treatment=36,
        r_true=2, att=1.0, seed=5,
    )
    emit_csvs(truth, root)
    ann, eff = event_dates(truth)
    return {"dir": root, "announcements": {2013: (ann, eff)}}


def solo_config(data, out, **kwargs):
    base = dict(
        returns=data["dir"] / "returns.csv",
        fundamentals=data["dir"] / "fundamentals.csv",
        membership=data["dir"] / "membership.csv",
        output_dir=out,
        announcements=data["announcements"],
        r=2,
        b2=4,
        seed=11,
        grid_from_days=(1,),
        grid_to_days=(10,),
    )
    base.update(kwargs)
    return RunConfig(**base)


class TestRunPipelineEdges:
    def test_single_year_reports_why_comparisons_skip(
        self, single_year_data, tmp_path
    ):
        report = run_pipeline(
            solo_config(single_year_data, tmp_path / "out", variants=("full",))
        )
        assert len(report.rows) == 1 and report.rows[0].feasible
        assert any(
            n.startswith("year comparison (join):") for n in report.notices
        )
        assert any(n.startswith("fit contest skipped:") for n in report.notices)

    def test_plots_off_and_single_variant(self, single_year_data, tmp_path):
        out = tmp_path / "out"
        run_pipeline(
            solo_config(single_year_data, out, variants=("full",))
        )
        names = {p.name for p in out.iterdir()}
        assert not any(n.endswith(".svg") for n in names)
        assert not any("_base" in n for n in names)
        assert "att_2013_33_join_full.csv" in names

    def test_capm_only_run_skips_synthetic_outputs(
        self, single_year_data, tmp_path
    ):
        out = tmp_path / "out"
        report = run_pipeline(
            solo_config(
                single_year_data, out,
                estimators=("capm",), variants=("full",),
            )
        )
        row = report.rows[0]
        assert math.isfinite(row.capm_mspe)
        assert math.isnan(row.gsynth_mspe) and row.r_chosen is None
        names = {p.name for p in out.iterdir()}
        assert "car_capm_2013_33_join_full.csv" in names
        assert not any(n.startswith(("car_gsynth", "att_", "contest")) for n in names)
        # the contest needs both estimators, so no skip notice either
        assert not any("fit contest" in n for n in report.notices)

    def test_missing_announcements_fail_only_that_cell(
        self, single_year_data, tmp_path
    ):
        report = run_pipeline(
            solo_config(
                single_year_data, tmp_path / "out",
                announcements={}, variants=("full",),
            )
        )
        row = report.rows[0]
        assert not row.feasible
        assert row.note == "no announcement dates configured for 2013"
        assert (tmp_path / "out" / "run_report.csv").exists()
        assert not any(
            n.startswith("year comparison") for n in report.notices
        )

    def test_infeasible_rows_round_trip(self, single_year_data, tmp_path):
        run_pipeline(
            solo_config(
                single_year_data, tmp_path / "out",
                announcements={}, variants=("full",),
            )
        )
        back = read_report(tmp_path / "out" / "run_report.csv")
        assert back.rows[0].feasible is False
        assert back.rows[0].note == "no announcement dates configured for 2013"

    def test_year_filter_can_exclude_everything(self, single_year_data, tmp_path):
        report = run_pipeline(
            solo_config(single_year_data, tmp_path / "out", years=(1999,))
        )
        assert report.rows == ()
        assert (
            "no events match the configured years/directions; nothing to estimate"
            in report.notices
        )
        text = (tmp_path / "out" / "summary.md").read_text()
        assert "No cells were attempted." in text

    def test_unwritable_output_dir(self, single_year_data, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("file, not a directory", encoding="utf-8")
        with pytest.raises(DataError, match="cannot create output directory"):
            run_pipeline(
                solo_config(single_year_data, blocker / "out")
            )

    def test_direction_without_events_produces_no_rows(
        self, single_year_data, tmp_path
    ):
        report = run_pipeline(
            solo_config(
                single_year_data, tmp_path / "out",
                directions=("delist",), variants=("full",),
            )
        )
        assert report.rows == ()
        assert any(n.startswith("no events match") for n in report.notices)
