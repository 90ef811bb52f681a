import csv
import io
import json

import pytest

from critpoints.cli import RGrid, RunConfig, main
from critpoints.io import format_csv, format_json, write_table


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


class TestFormats:
    def test_csv_twelve_digits(self):
        text = format_csv([{"x": 1 / 3, "flag": True, "name": "rwm"}])
        assert text.splitlines()[1] == "0.333333333333,true,rwm"

    def test_json_round_trips(self):
        value = 0.1 + 0.2
        payload = json.loads(format_json({"records": [{"x": value, "bad": float("nan")}]}))
        assert payload["records"][0] == {"x": value, "bad": None}

    def test_write_table_meta(self, tmp_path):
        path = tmp_path / "t.json"
        write_table([{"a": 1}], "json", path, meta={"model": "bf"})
        assert json.loads(path.read_text()) == {"model": "bf", "records": [{"a": 1}]}
        with pytest.raises(ValueError):
            write_table([], "xml", io.StringIO())


class TestGrid:
    def test_parse(self):
        g = RGrid.parse("0.1:0.5:5")
        assert list(g.values()) == pytest.approx([0.1, 0.2, 0.3, 0.4, 0.5])
        assert RGrid.parse("0.01:1:3", log=True).values()[1] == pytest.approx(0.1)
        assert str(g) == "0.1:0.5:5"

    @pytest.mark.parametrize("text", ["0.1:0.5", "0:1:3", "0.5:0.1:3", "0.1:0.5:0"])
    def test_rejects(self, text):
        with pytest.raises(ValueError):
            RGrid.parse(text)

    def test_run_config_round_trip(self):
        cfg = RunConfig("k2", model="rwm", r="0.1:0.2:3", typed="min,max", threads=2)
        assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


class TestCoeffs:
    def test_rwm(self, capsys):
        code, out, _ = run(["coeffs", "--model", "rwm"], capsys)
        (row,) = rows(out)
        assert code == 0
        assert float(row["g4"]) == pytest.approx(0.25)
        assert float(row["density"]) == pytest.approx(0.36755, abs=1e-5)
        assert float(row["phi"]) == pytest.approx(1 / 64)
        assert row["degenerate"] == "false"

    def test_boundary_model_flagged(self, capsys):
        code, out, _ = run(["coeffs", "--model", "poly:1,0.4,0.1"], capsys)
        assert code == 0
        assert rows(out)[0]["degenerate"] == "true"

    def test_inadmissible_exit_code(self, capsys):
        code, _, err = run(["coeffs", "--model", "poly:1,0.3,0.1"], capsys)
        assert code == 2
        assert "inadmissible" in err

    @pytest.mark.parametrize("argv", [["coeffs", "--model", "nope"], ["k2", "--r", "1:0:3"], ["frobnicate"]])
    def test_parse_errors(self, argv, capsys):
        assert run(argv, capsys)[0] == 1

    def test_json(self, capsys):
        code, out, _ = run(["coeffs", "--model", "bf", "--format", "json"], capsys)
        payload = json.loads(out)
        assert code == 0
        assert payload["records"][0]["B"] == pytest.approx((2 / 3) ** 0.5)


class TestK2Command:
    def test_rows_and_asymptotes(self, capsys):
        code, out, _ = run(["k2", "--model", "rwm", "--r", "0.1:0.3:3", "--samples", "20000"], capsys)
        table = rows(out)
        assert code == 0
        assert [t["tag"] for t in table] == ["k2"] * 3 + ["asymptote", "asymptote_ordered"]
        a_f = float(table[3]["value"])
        assert float(table[4]["value"]) == pytest.approx(2 * a_f)

    def test_typed_fit_row(self, capsys):
        code, out, _ = run(["k2", "--model", "rwm", "--r", "0.1:0.3:4", "--log", "--samples", "20000",
                            "--typed", "saddle,saddle"], capsys)
        assert code == 0
        assert rows(out)[-1]["tag"] == "fit_exponent"

    def test_rtol_exit_code(self, capsys):
        code, _, _ = run(["k2", "--model", "rwm", "--r", "0.3:0.3:1", "--samples", "1000", "--rtol", "1e-6"],
                         capsys)
        assert code == 3


@pytest.mark.filterwarnings("ignore::critpoints.exceptions.EmptyBin")
class TestSimulateCommand:
    ARGS = ["simulate", "--model", "rwm", "--L", "10", "--n", "4", "--r", "0:1:4", "--seed", "3"]

    def test_byte_identical_across_runs_and_threads(self, capsys):
        _, first, _ = run(self.ARGS + ["--threads", "1"], capsys)
        _, second, _ = run(self.ARGS + ["--threads", "1"], capsys)
        _, threaded, _ = run(self.ARGS + ["--threads", "3"], capsys)
        assert first == second == threaded

    def test_sections(self, capsys, tmp_path):
        pts = tmp_path / "points.csv"
        code, out, _ = run(self.ARGS + ["--points-out", str(pts)], capsys)
        sections = {r["section"] for r in rows(out)}
        assert code == 0
        assert {"density", "bin"} <= sections
        assert pts.read_text().startswith("sample_id,x,y,type")

    def test_mode_budget_exit_code(self, capsys):
        assert run(self.ARGS[:5] + ["--model", "bf", "--mode-budget", "3"], capsys)[0] == 4


class TestValidateCommand:
    def test_group(self, capsys):
        code, out, _ = run(["validate", "--only", "eigen"], capsys)
        table = rows(out)
        assert code == 0
        assert table and all(r["group"] == "eigen" and r["passed"] == "true" for r in table)

    def test_fault_is_detected(self, capsys):
        code, out, _ = run(["validate", "--only", "delta", "--fault-gamma2", "1e-3"], capsys)
        assert code == 5
        assert any(r["passed"] == "false" for r in rows(out))
