import json

import numpy as np
import pytest

from gcalc.cli import main


def write_cfg(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


@pytest.fixture
def derived_linstab_cfg(tmp_path):
    return write_cfg(tmp_path, "ex_ri.json", {
        "n": 1, "F": [-3.0], "H": [-1.0], "C": [1.0],
        "band": [1.0, 2.0], "P": [1.0], "mode": "stable",
    })


@pytest.fixture
def square_cfg(tmp_path):
    return write_cfg(tmp_path, "square.json", {
        "band": [1.0, 2.0], "payoff": "x^2",
        "grid": {"x_lo": -12.0, "x_hi": 12.0, "nx": 401, "T": 1.0},
    })


@pytest.fixture
def duffing_cfg(tmp_path):
    def make(c_ly):
        return write_cfg(tmp_path, f"duffing_{c_ly}.json", {
            "system": {
                "n": 2, "d": 1, "band": [1.0, 2.0],
                "f": ["0", "0"], "h": ["x2", "-x1 - x1^3 - x2"], "g": ["0", "1"],
            },
            "V": "1 + 0.5*x2^2 + 0.5*x1^2 + 0.25*x1^4",
            "mode": "finite_difference",
            "region": {"t": [0, 5], "box": [[-5, 5, 21], [-5, 5, 21]]},
            "condition": "growth", "params": {"c_ly": c_ly},
        })

    return make


class TestExitCodes:
    def test_linstab_derived_passes(self, derived_linstab_cfg, tmp_path, capsys):
        out = tmp_path / "cert.json"
        assert main(["linstab", "--config", derived_linstab_cfg, "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert doc["kind"] == "ms_stable"
        assert doc["margin"] == pytest.approx(5.5, abs=1e-9)

    def test_lyapunov_below_threshold_exits_two(self, duffing_cfg, tmp_path):
        cfg = duffing_cfg(0.0)
        out = tmp_path / "rep.json"
        assert main(["lyapunov", "--config", cfg, "--out", str(out)]) == 2
        assert json.loads(out.read_text())["verdict"] == "fail"

    def test_lyapunov_at_derived_constant_passes(self, duffing_cfg, tmp_path):
        assert main(["lyapunov", "--config", duffing_cfg(1.0),
                     "--out", str(tmp_path / "ok.json")]) == 0

    def test_usage_errors_exit_one(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == 1
        bad = write_cfg(tmp_path, "bad.json", {"band": [1.0, 2.0]})
        assert main(["simulate", "--config", bad]) == 1

    def test_unknown_subcommand(self):
        assert main(["frobnicate", "--config", "x"]) == 1

    def test_schema_violation_names_pointer(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, "c.json", {
            "band": [1.0, 2.0], "policy": {"kind": "constant", "value": 2.0},
            "grid": {"t_end": 1.0},
        })
        assert main(["simulate", "--config", cfg]) == 1
        err = capsys.readouterr().err
        assert "/grid/n_steps" in err


class TestGHeat:
    def test_square_value_and_csv(self, square_cfg, tmp_path, capsys):
        out = tmp_path / "u.csv"
        assert main(["gheat", "--config", square_cfg, "--out", str(out)]) == 0
        lines = [l for l in out.read_text().splitlines() if not l.startswith("#")]
        assert lines[0] == "x,u"
        rows = {float(l.split(",")[0]): float(l.split(",")[1]) for l in lines[1:]}
        assert rows[0.0] == pytest.approx(2.0, abs=1e-3)
        assert "u(0, 0)" in capsys.readouterr().err

    def test_cfl_violation_is_usage_error(self, tmp_path):
        cfg = write_cfg(tmp_path, "bad_nt.json", {
            "band": [1.0, 2.0], "payoff": "x^2",
            "grid": {"x_lo": -12.0, "x_hi": 12.0, "nx": 401, "T": 1.0, "nt": 5},
        })
        assert main(["gheat", "--config", cfg]) == 1


class TestOutputs:
    def test_overwrite_needs_force(self, square_cfg, tmp_path):
        out = tmp_path / "u.csv"
        assert main(["gheat", "--config", square_cfg, "--out", str(out)]) == 0
        assert main(["gheat", "--config", square_cfg, "--out", str(out)]) == 1
        assert main(["gheat", "--config", square_cfg, "--out", str(out), "--force"]) == 0

    def test_byte_identical_reruns(self, square_cfg, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        assert main(["gheat", "--config", square_cfg, "--out", str(a)]) == 0
        assert main(["gheat", "--config", square_cfg, "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_output_embeds_hash_and_seed(self, square_cfg, tmp_path):
        out = tmp_path / "u.csv"
        main(["gheat", "--config", square_cfg, "--out", str(out), "--seed", "7"])
        text = out.read_text()
        assert "# config_hash=" in text and "# seed=7" in text

    def test_format_flag_crosses_both_ways(self, derived_linstab_cfg, square_cfg, tmp_path):
        cert_csv = tmp_path / "cert.csv"
        assert main(["linstab", "--config", derived_linstab_cfg, "--format", "csv",
                     "--out", str(cert_csv)]) == 0
        lines = [l for l in cert_csv.read_text().splitlines() if not l.startswith("#")]
        assert lines[0] == "key,value"
        assert any(l.startswith("margin,") for l in lines)
        table_json = tmp_path / "u.json"
        assert main(["gheat", "--config", square_cfg, "--format", "json",
                     "--out", str(table_json)]) == 0
        doc = json.loads(table_json.read_text())
        assert doc["header"] == ["x", "u"]
        assert len(doc["rows"]) == 401


class TestSimulateAndGsde:
    def test_simulate_csv_shape(self, tmp_path):
        cfg = write_cfg(tmp_path, "sim.json", {
            "band": [1.0, 2.0],
            "grid": {"t_end": 1.0, "n_steps": 16},
            "policy": {"kind": "bangbang_threshold", "theta": 0.0},
            "n_paths": 2,
        })
        out = tmp_path / "paths.csv"
        assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
        lines = [l for l in out.read_text().splitlines() if not l.startswith("#")]
        assert lines[0] == "path,t,b_1,qvar_11,policy_choice"
        assert len(lines) == 1 + 2 * 17

    def test_gsde_localized_run(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, "dvp.json", {
            "n": 2, "d": 1, "band": [1.0, 2.0],
            "f": ["0", "0"], "h": ["x2", "-x1 - x1^3 - x2"], "g": ["0", "1"],
            "lipschitz_tag": "local",
            "x0": [1.0, 0.0],
            "grid": {"t_end": 5.0, "n_steps": 500},
            "policy": {"kind": "bangbang_threshold", "theta": 0.0},
        })
        out = tmp_path / "sol.csv"
        assert main(["gsde", "--config", cfg, "--out", str(out)]) == 0
        lines = [l for l in out.read_text().splitlines() if not l.startswith("#")]
        assert lines[0] == "t,x1,x2"
        assert len(lines) == 502
        assert "localization settled" in capsys.readouterr().err

    def test_upper_json_report(self, tmp_path):
        cfg = write_cfg(tmp_path, "up.json", {
            "band": [1.0, 2.0],
            "grid": {"t_end": 1.0, "n_steps": 32},
            "payoff": "b1^2",
            "family": {"kind": "extreme_constants"},
            "n_paths": 4000,
        })
        out = tmp_path / "rep.json"
        assert main(["upper", "--config", cfg, "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert doc["value"] == pytest.approx(2.0, rel=0.05)
        assert len(doc["policies"]) == 2

    def test_experiment_pass_and_plot_data(self, tmp_path):
        cfg = write_cfg(tmp_path, "exp.json", {
            "kind": "bt_over_t", "band": [1.0, 2.0],
            "family": {"kind": "extreme_constants"},
            "t_values": [10.0, 1000.0], "n_paths": 200,
        })
        out = tmp_path / "bt.csv"
        assert main(["experiment", "--config", cfg, "--out", str(out)]) == 0
        long_out = tmp_path / "bt_long.csv"
        assert main(["experiment", "--config", cfg, "--out", str(long_out),
                     "--emit-plot-data"]) == 0
        lines = [l for l in long_out.read_text().splitlines() if not l.startswith("#")]
        assert lines[0] == "row,variable,value"

    def test_experiment_bound_violation_exits_two(self, tmp_path):
        # decreasing-quantile check cannot hold with a single tiny horizon pair
        cfg = write_cfg(tmp_path, "exp2.json", {
            "kind": "moment_decay", "band": [1.0, 2.0],
            "model": {"alpha": -0.1, "beta": 0.5, "gamma": 1.0, "x0": 1.0},
            "p": 0.5, "T": 4.0, "dt": 0.01, "lambda": 2.0,
            "family": {"kind": "extreme_constants"}, "n_paths": 400,
        })
        assert main(["experiment", "--config", cfg]) == 2
