import json

import numpy as np
import pytest

from dhnopt.cli import (EXIT_INPUT, EXIT_NUMERICAL, EXIT_OK,
                        compute_quantiles, main)
from dhnopt.fixtures import desk_network, write_desk_fixture
from dhnopt.thermal import StateTrajectory, TimeGrid


def _run(*args):
    return main([str(a) for a in args])


def _read_lines(path):
    return path.read_text().splitlines()


@pytest.fixture()
def desk_files(tmp_path):
    return write_desk_fixture(tmp_path)


@pytest.fixture()
def small_files(tmp_path):
    # one-day, three-consumer variant keeps the optimizer runs quick
    return write_desk_fixture(tmp_path, n_consumers=3, n_days=1)


class TestSimulate:
    def test_writes_series_and_clean_balance(self, desk_files):
        rc = _run("simulate", "--config", desk_files, "--quiet")
        assert rc == EXIT_OK
        out = desk_files.parent / "out"
        report = json.loads((out / "report.json").read_text())
        assert report["max_energy_balance_residual_rel"] < 1e-6
        assert report["n_steps"] == 288
        for name in ("summary.csv", "energy_balance.csv", "stored_energy.csv"):
            lines = _read_lines(out / name)
            assert len(lines) == 1 + 288, name
        assert (out / "steady_state.csv").is_file()

    def test_missing_flow_file_exits_2(self, desk_files, capsys):
        (desk_files.parent / "flows.csv").unlink()
        rc = _run("simulate", "--config", desk_files, "--quiet")
        assert rc == EXIT_INPUT
        assert "flows.csv" in capsys.readouterr().err

    def test_invalid_config_json_exits_2(self, tmp_path, capsys):
        cfg = tmp_path / "config.json"
        cfg.write_text("{not json")
        assert _run("simulate", "--config", cfg) == EXIT_INPUT

    def test_unknown_config_key_exits_2(self, tmp_path, capsys):
        cfg = tmp_path / "config.json"
        cfg.write_text('{"no_such_key": 1}')
        assert _run("simulate", "--config", cfg) == EXIT_INPUT
        assert "no_such_key" in capsys.readouterr().err

    def test_deterministic_outputs(self, desk_files):
        base = desk_files.parent
        rc1 = _run("simulate", "--config", desk_files, "--quiet",
                   "--out-dir", base / "out_a")
        rc2 = _run("simulate", "--config", desk_files, "--quiet",
                   "--out-dir", base / "out_b")
        assert rc1 == rc2 == EXIT_OK
        for name in ("report.json", "summary.csv", "energy_balance.csv",
                     "stored_energy.csv", "steady_state.csv"):
            assert (base / "out_a" / name).read_bytes() == \
                (base / "out_b" / name).read_bytes(), name


class TestVerify:
    def test_dense_oracle_and_identity_reference(self, desk_files):
        assert _run("simulate", "--config", desk_files, "--quiet") == EXIT_OK
        out = desk_files.parent / "out"
        report = json.loads((out / "report.json").read_text())

        cfg = json.loads(desk_files.read_text())
        cfg["verify"] = {"reference_file": "out/steady_state.csv",
                         "mean_mismatch_threshold_c": 1e-9}
        cfg_path = desk_files.parent / "verify.json"
        cfg_path.write_text(json.dumps(cfg))
        rc = _run("verify", "--config", cfg_path, "--quiet",
                  "--out-dir", desk_files.parent / "vout")
        assert rc == EXIT_OK
        vreport = json.loads(
            (desk_files.parent / "vout" / "verify_report.json").read_text())
        assert vreport["dense_mismatch_c"] < 1e-8
        assert vreport["reference_mean_abs_mismatch_c"] == 0.0
        assert (desk_files.parent / "vout" / "mismatch_histogram.csv").is_file()

    def test_reference_threshold_violation_exits_1(self, desk_files):
        assert _run("simulate", "--config", desk_files, "--quiet") == EXIT_OK
        steady = desk_files.parent / "out" / "steady_state.csv"
        lines = _read_lines(steady)
        node, temp = lines[1].split(",")
        lines[1] = f"{node},{float(temp) + 5.0!r}"
        steady.write_text("\n".join(lines) + "\n")
        cfg = json.loads(desk_files.read_text())
        cfg["verify"] = {"reference_file": "out/steady_state.csv",
                         "mean_mismatch_threshold_c": 0.01}
        cfg_path = desk_files.parent / "verify.json"
        cfg_path.write_text(json.dumps(cfg))
        rc = _run("verify", "--config", cfg_path, "--quiet",
                  "--out-dir", desk_files.parent / "vout")
        assert rc == EXIT_NUMERICAL


class TestSynthDemand:
    def test_deterministic_bytes_and_target_means(self, desk_files):
        base = desk_files.parent
        rc1 = _run("synth-demand", "--config", desk_files, "--quiet",
                   "--out-dir", base / "d1")
        rc2 = _run("synth-demand", "--config", desk_files, "--quiet",
                   "--out-dir", base / "d2")
        assert rc1 == rc2 == EXIT_OK
        assert (base / "d1" / "demands.csv").read_bytes() == \
            (base / "d2" / "demands.csv").read_bytes()
        summary = _read_lines(base / "d1" / "demand_summary.csv")[1:]
        means = np.array([float(line.split(",")[1]) for line in summary])
        np.testing.assert_allclose(means, means[0], rtol=1e-9)

    def test_different_seed_changes_output(self, desk_files):
        base = desk_files.parent
        _run("synth-demand", "--config", desk_files, "--quiet",
             "--out-dir", base / "d1")
        _run("synth-demand", "--config", desk_files, "--quiet",
             "--out-dir", base / "d3", "--seed", "123")
        assert (base / "d1" / "demands.csv").read_bytes() != \
            (base / "d3" / "demands.csv").read_bytes()


class TestOptimize:
    def test_end_to_end_small(self, small_files):
        rc = _run("optimize", "--config", small_files, "--quiet")
        assert rc == EXIT_OK
        out = small_files.parent / "out"
        report = json.loads((out / "report.json").read_text())
        assert report["savings"] > 0.0
        assert report["final_max_violation_c"] < 0.1
        assert not report["aborted"]
        n = report["n_steps"]
        for name in ("controls.csv", "consumer_temps.csv",
                     "stored_energy.csv", "price.csv", "plant_power.csv",
                     "quantiles_baseline.csv", "quantiles_optimized.csv"):
            assert len(_read_lines(out / name)) == 1 + n, name
        assert len(_read_lines(out / "trace.csv")) == 1 + len(report["rounds"])

        # savings must be recomputable from the emitted series
        steps = np.loadtxt(out / "plant_power.csv", delimiter=",",
                           skiprows=1, usecols=(3, 4))
        recomputed = (steps[:, 0].sum() - steps[:, 1].sum()) / steps[:, 0].sum()
        assert recomputed == pytest.approx(report["savings"], rel=1e-12)

    def test_report_subcommand_checks_series(self, small_files, capsys):
        assert _run("optimize", "--config", small_files, "--quiet") == EXIT_OK
        out = small_files.parent / "out"
        assert _run("report", "--out-dir", out) == EXIT_OK
        assert "savings" in capsys.readouterr().out

        data = json.loads((out / "report.json").read_text())
        data["savings"] = 0.5
        (out / "report.json").write_text(json.dumps(data))
        assert _run("report", "--out-dir", out, "--quiet") == EXIT_NUMERICAL


class TestQuantiles:
    def test_identical_consumers_collapse(self):
        graph, _ = desk_network(n_consumers=4)
        grid = TimeGrid(dt_s=900.0, n_steps=3)
        y = np.full((graph.n_nodes, 4), 91.0)
        traj = StateTrajectory(values_c=y, grid=grid)
        q = compute_quantiles(traj, graph, levels=(10, 50, 90, 99))
        for key, series in q.items():
            np.testing.assert_array_equal(series, 91.0)

    def test_quantiles_are_ordered(self):
        graph, _ = desk_network(n_consumers=6)
        grid = TimeGrid(dt_s=900.0, n_steps=5)
        rng = np.random.default_rng(0)
        y = 80.0 + 20.0 * rng.random((graph.n_nodes, 6))
        traj = StateTrajectory(values_c=y, grid=grid)
        q = compute_quantiles(traj, graph, levels=(1, 10, 50, 90, 99))
        assert np.all(q["min"] <= q["p1"] + 1e-12)
        assert np.all(q["p1"] <= q["p50"])
        assert np.all(q["p50"] <= q["p99"])
        np.testing.assert_array_equal(q["median"], q["p50"])
