import csv
import json
import math

import pytest

from bottleneck_lab.cli import main

CONSTANT_SIG = {"kind": "constant", "level": 1.0, "period": 1.0}
TWO_LEVEL_SIG = {
    "kind": "piecewise_constant",
    "breakpoints": [0.0, 1.0, 2.0],
    "levels": [0.0, 2.0],
    "periodic": True,
}


def write_json(path, data):
    path.write_text(json.dumps(data, indent=1))
    return str(path)


class TestSimulate:
    def test_constant_signal_reaches_steady_state(self, tmp_path):
        cfg = write_json(tmp_path / "cfg.json", {
            "signal": CONSTANT_SIG,
            "lambda": 1.0,
            "x0": 0.0,
            "horizon": 20.0,
            "out": str(tmp_path / "traj.csv"),
        })
        assert main(["simulate", "--config", cfg]) == 0
        with open(tmp_path / "traj.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert abs(float(rows[-1]["x"]) - 0.5) <= 1e-6

    def test_zero_signal_pure_decay(self, tmp_path):
        cfg = write_json(tmp_path / "cfg.json", {
            "signal": {"kind": "constant", "level": 0.0, "period": 1.0},
            "lambda": 2.0,
            "x0": 1.0,
            "horizon": 3.0,
            "out": str(tmp_path / "traj.csv"),
        })
        assert main(["simulate", "--config", cfg]) == 0
        with open(tmp_path / "traj.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert float(rows[-1]["x"]) == pytest.approx(math.exp(-6.0), abs=1e-10)

    def test_signal_file_flag(self, tmp_path):
        sig = write_json(tmp_path / "sig.json", CONSTANT_SIG)
        out = tmp_path / "t.csv"
        code = main(["simulate", "--signal", sig, "--lambda", "1.0",
                     "--horizon", "1.0", "--out", str(out)])
        assert code == 0
        assert out.exists()

    def test_malformed_config_is_line_anchored(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"signal": {},\n "lambda": 1.0,\n')
        assert main(["simulate", "--config", str(bad)]) == 2
        err = capsys.readouterr().err
        assert f"{bad}:3:1" in err

    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "cfg.json", {
            "signal": CONSTANT_SIG, "lambda": 1.0, "horizon": 1.0, "bogus": 1,
        })
        assert main(["simulate", "--config", cfg]) == 2
        assert "bogus" in capsys.readouterr().err

    def test_missing_required_key(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "cfg.json", {"signal": CONSTANT_SIG, "lambda": 1.0})
        assert main(["simulate", "--config", cfg]) == 2
        assert "horizon" in capsys.readouterr().err

    def test_bad_signal_payload(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "cfg.json", {
            "signal": {"kind": "constant", "level": -1.0},
            "lambda": 1.0,
            "horizon": 1.0,
        })
        assert main(["simulate", "--config", cfg]) == 2
        assert "non-negative" in capsys.readouterr().err


class TestPeriodicCommand:
    def test_json_report(self, tmp_path):
        cfg = write_json(tmp_path / "cfg.json", {
            "signal": TWO_LEVEL_SIG,
            "lambda": 1.0,
            "out": str(tmp_path / "rep.json"),
        })
        assert main(["periodic", "--config", cfg]) == 0
        rep = json.loads((tmp_path / "rep.json").read_text())
        assert rep["sigma_bar"] == 1.0
        assert rep["w_sigma"] < rep["w_const"]
        assert rep["residuals"]["gap_identity"] <= 1e-8

    def test_csv_report(self, tmp_path):
        cfg = write_json(tmp_path / "cfg.json", {
            "signal": TWO_LEVEL_SIG,
            "lambda": 1.0,
            "format": "csv",
            "out": str(tmp_path / "rep.csv"),
        })
        assert main(["periodic", "--config", cfg]) == 0
        with open(tmp_path / "rep.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1
        assert float(rows[0]["gap"]) > 0.0


class TestVerify:
    def test_default_suite_passes(self, tmp_path):
        out = tmp_path / "report.json"
        cfg = write_json(tmp_path / "cfg.json", {
            "seed": 0, "n_signals": 40, "n_asymptotic": 10, "out": str(out),
        })
        assert main(["verify", "--config", cfg]) == 0
        rep = json.loads(out.read_text())
        assert rep["passed"] is True
        assert sum(rep["residual_histogram"]["counts"]) == 3 * 40
        assert rep["max_residuals"]["gap_identity"] <= 1e-8

    def test_tolerance_is_load_bearing(self, tmp_path):
        out = tmp_path / "report.json"
        cfg = write_json(tmp_path / "cfg.json", {
            "seed": 0, "n_signals": 40, "n_asymptotic": 5, "out": str(out),
        })
        code = main(["verify", "--config", cfg, "--tolerance", "1e-17"])
        assert code == 1
        rep = json.loads(out.read_text())
        assert rep["passed"] is False
        assert rep["failures"]
        # every failing case carries its signal for replay
        assert all("signal" in f and "lam" in f for f in rep["failures"])

    def test_replay_is_bit_for_bit(self, tmp_path):
        # run a small suite at a failing tolerance, then replay the first
        # serialized case twice and compare outputs byte for byte
        out = tmp_path / "report.json"
        cfg = write_json(tmp_path / "cfg.json", {
            "seed": 3, "n_signals": 10, "n_asymptotic": 2, "out": str(out),
        })
        main(["verify", "--config", cfg, "--tolerance", "1e-17"])
        failing = json.loads(out.read_text())["failures"][0]
        replay_cfg = write_json(tmp_path / "replay.json", {
            "cases": [{"signal": failing["signal"], "lam": failing["lam"]}],
            "out": str(tmp_path / "replay1.json"),
        })
        assert main(["verify", "--config", replay_cfg, "--tolerance", "1e-17"]) == 1
        replay_cfg2 = write_json(tmp_path / "replay2.json", {
            "cases": [{"signal": failing["signal"], "lam": failing["lam"]}],
            "out": str(tmp_path / "replay2out.json"),
        })
        assert main(["verify", "--config", replay_cfg2, "--tolerance", "1e-17"]) == 1
        b1 = (tmp_path / "replay1.json").read_bytes()
        b2 = (tmp_path / "replay2out.json").read_bytes()
        assert b1 == b2

    def test_identical_seed_identical_bytes(self, tmp_path):
        outs = []
        for name in ("a.json", "b.json"):
            out = tmp_path / name
            cfg = write_json(tmp_path / f"cfg_{name}", {
                "seed": 11, "n_signals": 15, "n_asymptotic": 5, "out": str(out),
            })
            assert main(["verify", "--config", cfg]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]


class TestAsymptoticCommand:
    def test_table_and_estimates(self, tmp_path):
        out = tmp_path / "table.csv"
        cfg = write_json(tmp_path / "cfg.json", {
            "signal": TWO_LEVEL_SIG,
            "lambda": 1.0,
            "x0": 0.0,
            "tau_max": 200.0,
            "n_checkpoints": 16,
            "out": str(out),
        })
        assert main(["asymptotic", "--config", cfg]) == 0
        with open(out) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 16
        assert {"tau", "mean_input", "mean_state", "lhs", "rhs", "slack"} <= set(rows[0])
        assert all(float(r["slack"]) >= -1e-9 for r in rows)


class TestOptimizeCommand:
    def test_single_segment_family_gap_zero(self, tmp_path):
        out = tmp_path / "res.json"
        cfg = write_json(tmp_path / "cfg.json", {
            "family": {"kind": "piecewise_free", "period": 2.0, "n_segments": 1},
            "lambda": 1.0,
            "mean": 1.0,
            "resolution": 5,
            "n_starts": 1,
            "out": str(out),
            "log": str(tmp_path / "log.csv"),
        })
        assert main(["optimize", "--config", cfg]) == 0
        res = json.loads(out.read_text())
        assert abs(res["best"]["optimality_gap"]) <= 1e-12
        assert res["max_excess_over_benchmark"] <= 1e-9
        with open(tmp_path / "log.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == res["evaluations_total"]

    def test_bang_bang_skewed_regime(self, tmp_path):
        out = tmp_path / "res.json"
        cfg = write_json(tmp_path / "cfg.json", {
            "family": {"kind": "bang_bang", "period": 0.2},
            "lambda": 10.0,
            "mean": 0.1,
            "resolution": 5,
            "n_starts": 2,
            "seed": 5,
            "out": str(out),
        })
        assert main(["optimize", "--config", cfg]) == 0
        res = json.loads(out.read_text())
        assert res["best"]["optimality_gap"] >= -1e-9
        assert res["max_excess_over_benchmark"] <= 1e-9

    def test_unknown_family_kind(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "cfg.json", {
            "family": {"kind": "triangle", "period": 1.0},
            "lambda": 1.0,
            "mean": 1.0,
        })
        assert main(["optimize", "--config", cfg]) == 2
        assert "family kind" in capsys.readouterr().err


class TestUsage:
    def test_missing_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_flag_overrides_config(self, tmp_path):
        # config says lambda 5, flag forces lambda 1: steady state 0.5
        cfg = write_json(tmp_path / "cfg.json", {
            "signal": CONSTANT_SIG,
            "lambda": 5.0,
            "horizon": 20.0,
            "out": str(tmp_path / "t.csv"),
        })
        assert main(["simulate", "--config", cfg, "--lambda", "1.0"]) == 0
        with open(tmp_path / "t.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert abs(float(rows[-1]["x"]) - 0.5) <= 1e-6

    def test_flag_not_applicable_rejected(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "cfg.json", {
            "seed": 0, "n_signals": 5, "n_asymptotic": 2,
        })
        assert main(["verify", "--config", cfg, "--horizon", "5.0"]) == 2
        assert "not applicable" in capsys.readouterr().err
