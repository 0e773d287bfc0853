import json
from pathlib import Path

import numpy as np
import pytest

from fastswitch.cli import main
from fastswitch.config import ConfigError, load_config

REPO = Path(__file__).resolve().parent.parent
MODEL_A = REPO / "configs" / "model_a.json"


def small_config(tmp_path, **overrides) -> Path:
    """A cheap variant of the two-state exponential config for CLI tests."""
    with open(MODEL_A) as fh:
        doc = json.load(fh)
    doc["grid"]["n_points"] = 65
    doc["grid"]["u_min"] = -6.0
    doc["grid"]["u_max"] = 6.0
    doc["time"] = {"horizon": 0.5, "h_t": 0.005}
    doc["layer"] = {"h_tau": 0.02, "tau_max": 16.0}
    doc["order"] = 1
    doc["epsilons"] = [0.2, 0.1]
    doc["oracle"] = {"method": "direct", "n_samples": 2000, "seed": 3,
                     "h_s": 0.05, "u_stride": 8, "t_eval": [0.25, 0.5]}
    doc["output"] = {"t_stride": 20, "tau_stride": 100, "u_stride": 8}
    for key, val in overrides.items():
        doc[key] = val
    path = tmp_path / "config.json"
    with open(path, "w") as fh:
        json.dump(doc, fh)
    return path


class TestConfig:
    def test_load_model_a(self):
        cfg = load_config(MODEL_A)
        assert cfg.model.n_states == 2
        assert cfg.order == 2
        assert cfg.oracle.method == "direct"

    def test_missing_key(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"model": {"states": ["a"]}}')
        with pytest.raises(ConfigError):
            load_config(path)

    def test_bad_epsilon(self, tmp_path):
        path = small_config(tmp_path, epsilons=[1.5])
        with pytest.raises(ConfigError):
            load_config(path)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{this is not json")
        with pytest.raises(ConfigError):
            load_config(path)


class TestValidateCommand:
    def test_valid_exits_zero(self, tmp_path, capsys):
        path = small_config(tmp_path)
        assert main(["validate", "--config", str(path)]) == 0
        assert "usable" in capsys.readouterr().out

    def test_bad_row_sum_exits_one(self, tmp_path, capsys):
        bad_model = {
            "states": ["a", "b"],
            "transitions": [[0.5, 0.4], [0.5, 0.5]],
            "sojourns": [{"family": "exponential", "rate": 1.0}] * 2,
        }
        path = small_config(tmp_path, model=bad_model)
        assert main(["validate", "--config", str(path)]) == 1
        assert "row" in capsys.readouterr().out

    def test_missing_sojourn_params_exits_two(self, tmp_path):
        bad_model = {
            "states": ["a", "b"],
            "transitions": [[0.0, 1.0], [1.0, 0.0]],
            "sojourns": [{"family": "exponential"}, {"family": "exponential", "rate": 2.0}],
        }
        path = small_config(tmp_path, model=bad_model)
        assert main(["validate", "--config", str(path)]) == 2


class TestExpandCommand:
    def test_writes_series_and_diagnostics(self, tmp_path):
        path = small_config(tmp_path)
        out = tmp_path / "out"
        assert main(["expand", "--config", str(path), "--out", str(out)]) == 0
        for name in ("c_0.csv", "c_1.csv", "U_0.csv", "U_1.csv", "W_1.csv",
                     "diagnostics.json"):
            assert (out / name).exists(), name
        with open(out / "diagnostics.json") as fh:
            diag = json.load(fh)
        assert "orders" in diag and "1" in diag["orders"]
        assert "adjudications" in diag
        header = (out / "U_1.csv").read_text().splitlines()[0]
        assert header == "quantity,k,time,state,u,value"

    def test_grid_metadata_consistent(self, tmp_path):
        path = small_config(tmp_path)
        out = tmp_path / "out"
        main(["expand", "--config", str(path), "--out", str(out)])
        with open(out / "diagnostics.json") as fh:
            diag = json.load(fh)
        assert diag["grids"]["n_points"] == 65
        assert diag["grids"]["h_t"] == pytest.approx(0.005)

    def test_residual_keys_each_present_once(self, tmp_path):
        path = small_config(tmp_path)
        out = tmp_path / "out"
        main(["expand", "--config", str(path), "--out", str(out)])
        with open(out / "diagnostics.json") as fh:
            diag = json.load(fh)
        expected = {"solvability_sup", "range_projection_defect",
                    "system15_residual", "ck0_sup", "ck0_tail_bound",
                    "ck0_alt_extra_mhat_division_sup", "eq21_residual",
                    "ck0_projection_loop_residual", "w_t0_residual",
                    "w_decay_ratio", "w_monotone_tail", "w_sup", "u_sup",
                    "regularity_PI", "regularity_I_minus_Pi", "renewal_t0",
                    "jump_identity_k1"}
        assert expected <= set(diag["orders"]["1"].keys())

    def test_partial_diagnostics_on_failure(self, tmp_path):
        # a second-order build with a far-too-short layer window fails its
        # tail bound but still leaves an error record behind
        path = small_config(tmp_path, order=2,
                            layer={"h_tau": 0.02, "tau_max": 2.0})
        out = tmp_path / "out"
        code = main(["expand", "--config", str(path), "--out", str(out)])
        assert code == 1
        with open(out / "diagnostics.json") as fh:
            diag = json.load(fh)
        assert "error" in diag

    def test_exponential_ck0_reported_zero(self, tmp_path):
        path = small_config(tmp_path)
        out = tmp_path / "out"
        main(["expand", "--config", str(path), "--out", str(out)])
        with open(out / "diagnostics.json") as fh:
            diag = json.load(fh)
        assert diag["orders"]["1"]["ck0_sup"] < 1e-10


class TestCompareCommand:
    def test_writes_remainder_files(self, tmp_path):
        path = small_config(tmp_path)
        out = tmp_path / "out"
        assert main(["compare", "--config", str(path), "--out", str(out)]) == 0
        for name in ("remainder.csv", "slopes.csv", "plotdata.csv", "remainder.json"):
            assert (out / name).exists(), name
        with open(out / "remainder.json") as fh:
            doc = json.load(fh)
        orders = {s["order"] for s in doc["slopes"]}
        assert orders == {0, 1}

    def test_epsilon_override(self, tmp_path):
        path = small_config(tmp_path)
        out = tmp_path / "out"
        main(["compare", "--config", str(path), "--out", str(out),
              "--epsilon", "0.2"])
        with open(out / "remainder.json") as fh:
            doc = json.load(fh)
        assert {r["eps"] for r in doc["rows"]} == {0.2}


class TestReportCommand:
    def test_aggregates_without_recompute(self, tmp_path, capsys):
        path = small_config(tmp_path)
        out = tmp_path / "out"
        main(["expand", "--config", str(path), "--out", str(out)])
        main(["compare", "--config", str(path), "--out", str(out)])
        assert main(["report", "--out", str(out)]) == 0
        text = capsys.readouterr().out
        assert "adjudications" in text
        assert "slope" in text
        assert (out / "summary.txt").exists()

    def test_missing_inputs_exit_one(self, tmp_path):
        assert main(["report", "--out", str(tmp_path / "empty")]) == 1

    def test_rerun_identical_bytes(self, tmp_path):
        path = small_config(tmp_path)
        out = tmp_path / "out"
        main(["expand", "--config", str(path), "--out", str(out)])
        main(["compare", "--config", str(path), "--out", str(out)])
        main(["report", "--out", str(out)])
        first = (out / "summary.txt").read_bytes()
        main(["report", "--out", str(out)])
        assert (out / "summary.txt").read_bytes() == first


class TestUsageErrors:
    def test_unknown_subcommand(self):
        assert main(["frobnicate"]) == 2

    def test_config_parse_error_exit_two(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{nope")
        assert main(["validate", "--config", str(path)]) == 2
