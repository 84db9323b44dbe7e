import json

import pytest

from qcs_sim.cli import EXIT_CONFIG, EXIT_INVARIANT, EXIT_OK, EXIT_PRECONDITION, run_cli
from qcs_sim.errors import InvariantError
from utils.data_processor import DataProcessor


def _read(path):
    processor = DataProcessor()
    return processor.read_header(str(path)), processor.read_table(str(path))


class TestBudget:
    def test_minimum_at_eight_rounds(self, output_env):
        out = output_env / "budget.csv"
        assert run_cli(["budget", "--f0", "0.9", "--n-pairs", "1e5", "--inv-omega-ps", "17",
                        "--out", str(out)]) == EXIT_OK
        header, table = _read(out)
        best = table.loc[table["dt_total_ps"].idxmin()]
        assert best["n"] == 8
        assert best["dt_total_ps"] == pytest.approx(1.5, abs=0.05)
        assert bool(best["optimal"])
        assert header["command"] == "budget"
        assert header["seed"] == 0

    def test_optimized_table(self, output_env):
        out = output_env / "budget.csv"
        run_cli(["budget", "--n-pairs", "1e4,1e5", "--out", str(out)])
        _, table = _read(output_env / "budget_optimized.csv")
        assert list(table["N"]) == [10_000, 100_000]
        assert "dt_total_ps" in table.columns

    def test_same_seed_same_bytes(self, output_env):
        first, second = output_env / "a.csv", output_env / "b.csv"
        run_cli(["budget", "--seed", "3", "--out", str(first)])
        run_cli(["budget", "--seed", "3", "--out", str(second)])
        assert first.read_bytes() == second.read_bytes()


class TestTwirlCheck:
    def test_residuals_small(self, output_env):
        out = output_env / "twirl.csv"
        assert run_cli(["twirl-check", "--grid", "20", "--out", str(out)]) == EXIT_OK
        _, table = _read(out)
        assert len(table) == 400
        assert table["residual_closed_form"].max() < 1e-10
        assert table["residual_fidelity"].max() < 1e-12

    def test_default_output_location(self, output_env):
        assert run_cli(["twirl-check", "--grid", "2"]) == EXIT_OK
        assert (output_env / "twirl-check.csv").exists()


class TestPurify:
    def test_both_modes(self, output_env):
        out = output_env / "purify.csv"
        code = run_cli(["purify", "--f0", "0.9", "--n-pairs", "64", "--rounds", "2",
                        "--mode", "both", "--seed", "1", "--out", str(out)])
        assert code == EXIT_OK
        _, table = _read(out)
        assert set(table["mode"]) == {"analytic", "montecarlo"}
        analytic = table[table["mode"] == "analytic"]
        assert list(analytic["pairs_remaining"]) == [64, 32, 16]

    def test_json_mirror(self, output_env):
        out = output_env / "purify.json"
        assert run_cli(["purify", "--rounds", "1", "--format", "json", "--out", str(out)]) == EXIT_OK
        document = json.loads(out.read_text())
        assert document["config"]["rounds"] == 1
        assert len(document["rows"]) == 2

    def test_config_file(self, output_env):
        config = output_env / "purify_config.json"
        config.write_text(json.dumps({"f0": 0.8, "rounds": 3}))
        out = output_env / "purify.csv"
        assert run_cli(["purify", "--config", str(config), "--rounds", "1", "--out", str(out)]) == EXIT_OK
        header, table = _read(out)
        assert header["f0"] == 0.8
        assert header["rounds"] == 1
        assert len(table) == 2


class TestQCS:
    def test_trials(self, output_env):
        out = output_env / "qcs.csv"
        code = run_cli(["qcs", "--m", "1000", "--omega", "1", "--t-true", "1.0",
                        "--trials", "20", "--method", "binomial", "--seed", "5", "--out", str(out)])
        assert code == EXIT_OK
        _, table = _read(out)
        assert list(table["trial"]) == list(range(20))
        assert table["t_hat"].mean() == pytest.approx(1.0, abs=0.05)

    def test_summary(self, output_env):
        out = output_env / "qcs.csv"
        assert run_cli(["qcs", "--m", "1e4", "--trials", "10", "--emit", "summary",
                        "--out", str(out)]) == EXIT_OK
        _, table = _read(out)
        assert len(table) == 1
        assert table["sql"][0] == pytest.approx(0.01)


class TestEndToEnd:
    def test_run_writes_summary_and_report(self, output_env):
        out = output_env / "e2e.csv"
        code = run_cli(["e2e", "--n-pairs", "256", "--rounds", "1", "--offset-alice-ps", "5",
                        "--frame-alice", "0.3,0.1", "--seeds", "2", "--seed", "10", "--out", str(out)])
        assert code == EXIT_OK
        header, table = _read(out)
        assert list(table["seed"]) == [10, 11]
        assert "frame-alice" in header
        report_path = output_env / "e2e_report.txt"
        lines = report_path.read_text().splitlines()
        assert lines[0].startswith("# ")
        assert lines[1] == "Clock synchronization run report"
        assert DataProcessor().read_header(str(report_path)) == header

    def test_json_document(self, output_env):
        out = output_env / "e2e.json"
        code = run_cli(["e2e", "--n-pairs", "128", "--rounds", "1", "--mode", "analytic",
                        "--offset-alice-ps", "5", "--format", "json", "--out", str(out)])
        assert code == EXIT_OK
        document = json.loads(out.read_text())
        assert len(document["runs"]) == 1
        kinds = [m["payload"]["kind"] for m in document["runs"][0]["messages"]]
        assert "qcs-outcomes" in kinds

    def test_precondition_refusal(self, output_env):
        assert run_cli(["e2e", "--p", "0.8", "--out", str(output_env / "e2e.csv")]) == EXIT_PRECONDITION

    def test_too_few_pairs_for_rounds(self, output_env):
        code = run_cli(["e2e", "--n-pairs", "4", "--rounds", "3", "--out", str(output_env / "e2e.csv")])
        assert code == EXIT_PRECONDITION


class TestExitCodes:
    def test_bad_value(self, output_env):
        assert run_cli(["purify", "--f0", "abc"]) == EXIT_CONFIG

    def test_out_of_range_value(self, output_env):
        assert run_cli(["purify", "--f0", "1.5"]) == EXIT_CONFIG

    def test_negative_round_limit(self, output_env):
        assert run_cli(["budget", "--n-max", "-1"]) == EXIT_CONFIG

    def test_unknown_subcommand(self, output_env):
        assert run_cli(["calibrate"]) == EXIT_CONFIG

    def test_unknown_config_key(self, output_env):
        config = output_env / "bad.json"
        config.write_text(json.dumps({"fidelity": 0.9}))
        assert run_cli(["purify", "--config", str(config)]) == EXIT_CONFIG

    def test_bad_environment(self, output_env, monkeypatch):
        monkeypatch.setenv("QCS_WORKERS", "zero")
        assert run_cli(["budget"]) == EXIT_CONFIG

    def test_invariant_failure(self, output_env, monkeypatch):
        import qcs_sim.cli as cli

        def broken(*args, **kwargs):
            raise InvariantError("trace drifted")

        monkeypatch.setattr(cli, "optimize_rounds", broken)
        assert run_cli(["budget"]) == EXIT_INVARIANT
