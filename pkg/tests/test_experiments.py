import csv
import io
import json
import math

import pytest

from psenet.experiments import (
    ExperimentSpec,
    SpecError,
    aggregate,
    expand_cells,
    load_runs,
    parse_spec,
    robust_median,
    run_cell,
    run_experiment,
    run_hp_sweep,
    run_table1,
    run_table2,
    write_outputs,
)


def tiny(**kw):
    base = dict(family="table1-1d", targets=[3], architectures=["pse2"], widths=[4], depths=[1], seeds=[0], epochs=5)
    base.update(kw)
    return ExperimentSpec(**base)


class TestSpecParsing:
    def test_roundtrip(self):
        spec = tiny()
        assert parse_spec(json.dumps(spec.to_dict())) == spec

    def test_syntax_error_names_line(self):
        with pytest.raises(SpecError, match="line 4, column 2"):
            parse_spec('{\n "family": "table1-1d",\n "targets": [3]\n "seeds": [0]}')

    @pytest.mark.parametrize(
        "patch,field",
        [
            ({"family": "table9"}, "family"),
            ({"architectures": ["cnn"]}, "architectures"),
            ({"seeds": []}, "seeds"),
            ({"targets": []}, "targets"),
            ({"bogus": 1}, "bogus"),
            ({"epochs": -1}, "epochs"),
            ({"optimizer": {"nesterov": True}}, "optimizer"),
            ({"widths": [0]}, "widths"),
        ],
    )
    def test_field_errors_name_the_field(self, patch, field):
        raw = tiny().to_dict()
        raw.update(patch)
        with pytest.raises(SpecError, match=field):
            parse_spec(json.dumps(raw))

    def test_hp_arch_only_for_singular(self):
        with pytest.raises(SpecError):
            tiny(architectures=["hp3"])


def test_cell_count_is_full_product():
    spec = tiny(targets=[3, 4], depths=[1, 2], architectures=["fc", "pse1", "pse3"], seeds=[0, 1])
    assert len(expand_cells(spec)) == 2 * 2 * 3 * 2


class TestMedian:
    def test_plain(self):
        assert robust_median([3.0, 1.0, 2.0]) == 2.0

    def test_minority_nan_ignored_as_large(self):
        assert robust_median([1.0, None, 2.0, 3.0, math.nan]) == 3.0

    def test_majority_nan(self):
        assert math.isnan(robust_median([1.0, None, math.nan]))

    def test_half_nan_even(self):
        assert math.isnan(robust_median([1.0, math.nan]))


class TestTables:
    def test_one_cell(self):
        table, runs = run_table1(tiny())
        assert len(table.cells) == 1 and len(runs) == 1
        cell = table.cells[0]
        assert cell.target == "sin(3pi*x)" and cell.best_flag and math.isfinite(cell.median_loss)

    def test_csv_columns_exact(self):
        table, _ = run_table1(tiny())
        rows = list(csv.reader(io.StringIO(table.to_csv())))
        assert rows[0] == ["target", "depth", "architecture", "median_loss", "nan_count", "best_flag"]
        assert len(rows) == 2

    def test_nan_cells_serialize(self):
        runs = [
            {"config": {"target": "t", "depth": 1, "width": 2, "architecture": "reluk5", "seed": s},
             "final_loss": None, "nan": True, "extra": {}}
            for s in range(3)
        ]
        table = aggregate(runs, "table2-singular")
        assert table.to_csv().splitlines()[1] == "t,1,reluk5,NaN,3,false"
        assert json.loads(table.to_json())["cells"][0]["median_loss"] is None

    def test_best_flag_among_pse_columns(self):
        mk = lambda arch, v: {  # noqa: E731
            "config": {"target": "t", "depth": 1, "width": 2, "architecture": arch, "seed": 0},
            "final_loss": v, "nan": False, "extra": {},
        }
        table = aggregate([mk("fc", 1e-9), mk("pse1", 0.5), mk("pse3", 0.1)], "table1-1d")
        flags = {c.architecture: c.best_flag for c in table.cells}
        assert flags == {"fc": False, "pse1": False, "pse3": True}

    def test_crashed_cell_recorded(self):
        cell = expand_cells(tiny())[0]
        cell["mesh"] = -1.0
        out = run_cell(cell)
        assert "error" in out["extra"] and out["final_loss"] is None
        table = aggregate([out], "table1-1d")
        assert table.cells[0].failed_count == 1 and table.cells[0].nan_count == 0

    def test_medians_recomputable_from_files(self, tmp_path):
        spec = tiny(architectures=["fc", "pse1"], seeds=[0, 1, 2])
        kind, table, runs = run_experiment(spec)
        write_outputs(tmp_path, kind, table, runs)
        again = aggregate(load_runs(tmp_path / "runs"), spec.family)
        by_key = {(c.architecture): c.median_loss for c in again.cells}
        for c in table.cells:
            assert by_key[c.architecture] == c.median_loss
        assert len(list((tmp_path / "runs").glob("*.json"))) == 6

    def test_parallel_matches_serial(self):
        spec = tiny(architectures=["fc", "pse2"], seeds=[0, 1])
        serial, _ = run_table1(spec, workers=1)
        parallel, _ = run_table1(spec, workers=2)
        assert serial.to_csv() == parallel.to_csv()
        assert serial.to_json() == parallel.to_json()

    def test_rerun_identical(self):
        spec = tiny(architectures=["pse3"], seeds=[0, 1])
        assert run_table1(spec)[0].to_csv() == run_table1(spec)[0].to_csv()

    def test_pse1_tracks_resnet_within_seed_spread(self):
        spec = tiny(architectures=["resnet", "pse1"], widths=[10], seeds=[0, 1, 2, 3, 4], epochs=300)
        table, _ = run_table1(spec)
        r, p = table.cell("sin(3pi*x)", 1, "resnet"), table.cell("sin(3pi*x)", 1, "pse1")
        spread = max(max(r.losses) - min(r.losses), max(p.losses) - min(p.losses))
        assert abs(r.median_loss - p.median_loss) <= spread

    def test_two_dimensional_target(self):
        spec = tiny(family="table1-2d", mesh=0.25, depths=[2])
        table, runs = run_table1(spec)
        assert table.cells[0].target == "sin(3pi*(x1+x2))"
        assert math.isfinite(runs[0]["final_loss"])


class TestSingular:
    def test_exact_anchor_cell(self):
        spec = ExperimentSpec("table2-singular", [1.0], ["hp3"], [20], [1], [0], epochs=0)
        table, runs = run_table2(spec)
        assert table.cells[0].median_loss <= 1e-10
        assert runs[0]["extra"]["h1_loss_fine"] <= 1e-10

    def test_reports_both_losses(self):
        spec = ExperimentSpec("table2-singular", [2 / 3], ["reluk1"], [5], [1], [0], epochs=20)
        _, runs = run_table2(spec)
        extra = runs[0]["extra"]
        assert extra["h1_loss_fine"] > 0
        assert extra["h1_value_part"] + extra["h1_slope_part"] == pytest.approx(extra["h1_loss_fine"])


def test_hp_sweep_shape():
    rep = run_hp_sweep(2 / 3, (2, 6))
    assert rep.strictly_decreasing
    assert rep.slope_vs_n < 0 and rep.r2_vs_n >= 0.9
    assert rep.neurons[0] == 4 and rep.m_bounded


def test_hp_sweep_rejects_nonintegrable_alpha():
    with pytest.raises(ValueError):
        run_hp_sweep(0.4)
