import json

import pytest

from psenet.cli import main
from psenet.models import load_model


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def write_spec(path, **kw):
    spec = dict(family="table1-1d", targets=[3], architectures=["pse2"], widths=[4], depths=[1], seeds=[0], epochs=5)
    spec.update(kw)
    path.write_text(json.dumps(spec))
    return path


class TestConstruct:
    def test_polynomial_product(self, capsys):
        code, out, _ = run(capsys, "construct", "polynomial", "--d", "2", "--coeffs", "1,1:1.0")
        report = json.loads(out)
        assert code == 0 and report["passed"]
        assert report["neurons"] == 6 and report["neurons"] <= report["neuron_bound"]
        assert report["max_dev"] <= 1e-8

    def test_bspline_hat(self, capsys):
        code, out, _ = run(capsys, "construct", "bspline", "--n", "1", "--k", "1", "--coeffs", "0,1,0")
        assert code == 0 and json.loads(out)["max_dev"] <= 1e-12

    @pytest.mark.parametrize("kind", ["lower", "piecewise", "singular"])
    def test_defaults_pass(self, capsys, kind):
        code, out, _ = run(capsys, "construct", kind)
        assert code == 0 and json.loads(out)["passed"]

    def test_singular_reports_h1(self, capsys):
        _, out, _ = run(capsys, "construct", "singular", "--alpha", "0.6667", "--n", "4")
        report = json.loads(out)
        assert 0 < report["h1_error"] < 1 and report["degrees"] == [1, 2, 3, 4]

    def test_decreasing_degrees_is_usage_error(self, capsys):
        code, _, err = run(capsys, "construct", "piecewise", "--degrees", "3,1")
        assert code == 2 and "--degrees" in err

    def test_wrong_coefficient_count(self, capsys):
        code, _, err = run(capsys, "construct", "bspline", "--n", "2", "--k", "1", "--coeffs", "1,2")
        assert code == 2 and "k+n+1=4" in err

    def test_tolerance_failure_exits_1(self, capsys):
        code, out, _ = run(capsys, "construct", "singular", "--tol", "-1")
        assert code == 1 and not json.loads(out)["passed"]

    def test_out_writes_loadable_model(self, capsys, tmp_path):
        run(capsys, "construct", "piecewise", "--degrees", "1,2", "--out", str(tmp_path))
        net = load_model(tmp_path / "model.json")
        assert net.d_in == 1
        assert json.loads((tmp_path / "report.json").read_text())["kind"] == "piecewise"

    def test_byte_identical_reruns(self, capsys, tmp_path):
        for sub in ("a", "b"):
            run(capsys, "construct", "polynomial", "--d", "3", "--degree", "3", "--seed", "7", "--out", str(tmp_path / sub))
        for name in ("model.json", "report.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_bad_kind_rejected_by_parser(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["construct", "fourier"])
        assert exc.value.code == 2


class TestFit:
    def test_minimal_spec(self, capsys, tmp_path):
        spec = write_spec(tmp_path / "s.json")
        code, out, _ = run(capsys, "fit", str(spec), "--out", str(tmp_path / "o"))
        assert code == 0
        assert len(out.strip().splitlines()) == 2
        assert len(list((tmp_path / "o" / "runs").glob("*.json"))) == 1
        assert (tmp_path / "o" / "table.csv").read_text() == out

    def test_rerun_byte_identical(self, capsys, tmp_path):
        spec = write_spec(tmp_path / "s.json", architectures=["fc", "pse3"], seeds=[0, 1])
        for sub in ("a", "b"):
            run(capsys, "fit", str(spec), "--out", str(tmp_path / sub))
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.json"))
        assert len(files) == 5
        for rel in files:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_seed_and_epoch_override(self, capsys, tmp_path):
        spec = write_spec(tmp_path / "s.json", seeds=[0, 1, 2])
        run(capsys, "fit", str(spec), "--seed", "9", "--epochs", "2", "--out", str(tmp_path / "o"))
        (only,) = (tmp_path / "o" / "runs").glob("*.json")
        record = json.loads(only.read_text())
        assert record["config"]["seed"] == 9 and record["epochs_run"] == 2

    def test_malformed_json_names_line(self, capsys, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{\n "family": "table1-1d",\n "targets": [3],\n}')
        code, _, err = run(capsys, "fit", str(bad))
        assert code == 2 and "line 4" in err

    def test_bad_field_named(self, capsys, tmp_path):
        spec = write_spec(tmp_path / "s.json", architectures=["transformer"])
        code, _, err = run(capsys, "fit", str(spec))
        assert code == 2 and "architectures" in err

    def test_missing_spec_file(self, capsys, tmp_path):
        code, _, err = run(capsys, "fit", str(tmp_path / "nope.json"))
        assert code == 2 and "cannot read" in err

    def test_workers_must_be_positive(self, capsys, tmp_path):
        code, _, _ = run(capsys, "fit", str(write_spec(tmp_path / "s.json")), "--workers", "0")
        assert code == 2


class TestEval:
    def test_exact_model_values(self, capsys, tmp_path):
        run(capsys, "construct", "bspline", "--n", "1", "--k", "0", "--coeffs", "0,1", "--out", str(tmp_path))
        code, out, _ = run(capsys, "eval", str(tmp_path / "model.json"), "--x", "0,0.5,1", "--derivative")
        report = json.loads(out)
        assert code == 0
        assert report["y"] == pytest.approx([0.0, 0.5, 1.0], abs=1e-14)
        assert report["dy"][1] == pytest.approx(1.0)

    def test_h1_against_power(self, capsys, tmp_path):
        run(capsys, "construct", "singular", "--alpha", "0.75", "--n", "5", "--out", str(tmp_path))
        _, out, _ = run(capsys, "eval", str(tmp_path / "model.json"), "--h1-alpha", "0.75")
        assert 0 < json.loads(out)["h1_loss"] < 0.1

    def test_unreadable_model(self, capsys, tmp_path):
        junk = tmp_path / "m.json"
        junk.write_text('{"model": "cnn"}')
        code, _, err = run(capsys, "eval", str(junk))
        assert code == 2 and "model" in err


class TestCheck:
    def test_all_groups_pass(self, capsys):
        code, out, _ = run(capsys, "check")
        groups = json.loads(out)
        assert code == 0 and len(groups) >= 5
        assert all(g["passed"] for g in groups)

    def test_perturbed_golden_fails(self, capsys, tmp_path):
        from importlib import resources

        raw = json.loads(resources.files("psenet").joinpath("data", "golden_model.json").read_text())
        raw["c0"] += 1e-9
        golden = tmp_path / "golden.json"
        golden.write_text(json.dumps(raw))
        code, out, _ = run(capsys, "check", "--golden", str(golden))
        by_name = {g["group"]: g for g in json.loads(out)}
        assert code == 1 and not by_name["serialization"]["passed"]


def test_bench_hp(capsys, tmp_path):
    code, out, _ = run(capsys, "bench", "hp", "--out", str(tmp_path))
    report = json.loads(out)
    assert code == 0 and report["strictly_decreasing"]
    assert (tmp_path / "hp_sweep.json").exists()
