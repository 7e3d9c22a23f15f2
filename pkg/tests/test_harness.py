"""Experiment-runner tests: config grammar, trace files, determinism, and
the plot-table condenser."""

import csv
from pathlib import Path

import numpy as np
import pytest

from iqnlab.cli import main as cli_main
from iqnlab.errors import HarnessError
from iqnlab.harness import (
    ExperimentConfig,
    config_from_mapping,
    emit_plot_data,
    parse_config_file,
    run_experiment,
)


def quad_config(tmp_path, **overrides):
    cfg = ExperimentConfig(problem="quadratic", n=6, d=8, xi=1.0, b_max=10.0,
                           methods=("IQN", "SLIQN"), x0_scale=1.0, seed=3,
                           gstop=1e-8, max_epochs=30, out=str(tmp_path / "out"))
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestConfigParsing:
    def test_key_value_grammar(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("# comment\nproblem = quadratic\nn= 4\nd =6\n"
                        "methods = iqn, sliqn\ngstop = 1e-9\n")
        cfg = config_from_mapping(parse_config_file(path))
        assert cfg.problem == "quadratic"
        assert cfg.n == 4 and cfg.d == 6
        assert cfg.methods == ("IQN", "SLIQN")
        assert cfg.gstop == 1e-9

    def test_unknown_key_rejected(self):
        with pytest.raises(HarnessError, match="unknown config key"):
            config_from_mapping({"frobnicate": "1"})

    def test_unknown_method_rejected(self):
        with pytest.raises(HarnessError, match="unknown method"):
            config_from_mapping({"methods": "SGD"})

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(HarnessError, match="cannot read config"):
            parse_config_file(tmp_path / "absent.cfg")

    def test_bad_line_reports_location(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("problem quadratic\n")
        with pytest.raises(HarnessError, match="exp.cfg:1"):
            parse_config_file(path)


class TestRunExperiment:
    def test_writes_traces_and_summary(self, tmp_path):
        cfg = quad_config(tmp_path)
        summary = run_experiment(cfg, log=lambda *_: None)
        out = Path(cfg.out)
        assert sorted(p.name for p in out.glob("*.csv")) == [
            "IQN.csv", "SLIQN.csv", "summary.csv"]
        rows = read_csv(out / "SLIQN.csv")
        assert list(rows[0]) == ["t", "epoch", "grad_norm", "normalized_error",
                                 "sigma_max", "wall_ms"]
        assert all(row["status"] == "ok" for row in summary)

    def test_exactly_n_rows_when_never_stopping(self, tmp_path):
        cfg = quad_config(tmp_path, gstop=float("inf"), max_epochs=1,
                          methods=("SLIQN",))
        run_experiment(cfg, log=lambda *_: None)
        rows = read_csv(Path(cfg.out) / "SLIQN.csv")
        assert len(rows) == cfg.n
        assert [int(r["t"]) for r in rows] == list(range(1, cfg.n + 1))

    def test_shared_start_point_hash(self, tmp_path):
        cfg = quad_config(tmp_path)
        summary = run_experiment(cfg, log=lambda *_: None)
        hashes = {row["x0_sha256"] for row in summary}
        assert len(hashes) == 1

    def test_deterministic_up_to_wall_time(self, tmp_path):
        first = quad_config(tmp_path, out=str(tmp_path / "a"))
        second = quad_config(tmp_path, out=str(tmp_path / "b"))
        run_experiment(first, log=lambda *_: None)
        run_experiment(second, log=lambda *_: None)
        for name in ("IQN.csv", "SLIQN.csv"):
            rows_a = read_csv(tmp_path / "a" / name)
            rows_b = read_csv(tmp_path / "b" / name)
            assert len(rows_a) == len(rows_b)
            for ra, rb in zip(rows_a, rows_b):
                for col in ("t", "epoch", "grad_norm", "normalized_error",
                            "sigma_max"):
                    assert ra[col] == rb[col], (name, col)

    def test_missing_dataset_fails_before_output(self, tmp_path):
        cfg = quad_config(tmp_path, problem="logistic",
                          data=str(tmp_path / "absent.libsvm"))
        with pytest.raises(HarnessError, match="cannot read dataset"):
            run_experiment(cfg, log=lambda *_: None)
        assert not Path(cfg.out).exists()

    def test_desk_scale_race_orders_methods(self, tmp_path):
        cfg = ExperimentConfig(problem="quadratic", n=20, d=50, xi=2.0,
                               methods=("IQN", "SLIQN"), x0_scale=1.0, seed=7,
                               gstop=1e-10, max_epochs=120,
                               out=str(tmp_path / "race"))
        summary = run_experiment(cfg, log=lambda *_: None)
        by_method = {row["method"]: row for row in summary}
        assert (tmp_path / "race" / "IQN.csv").exists()
        assert (tmp_path / "race" / "SLIQN.csv").exists()
        assert by_method["SLIQN"]["status"] == "ok"
        assert by_method["IQN"]["status"] == "ok"
        assert (float(by_method["SLIQN"]["epochs_to_gstop"])
                <= float(by_method["IQN"]["epochs_to_gstop"]))

    def test_sigma_column_populated_when_tracked(self, tmp_path):
        cfg = quad_config(tmp_path, track_sigma=True, methods=("SLIQN",),
                          max_epochs=2, gstop=float("inf"))
        run_experiment(cfg, log=lambda *_: None)
        rows = read_csv(Path(cfg.out) / "SLIQN.csv")
        assert all(row["sigma_max"] != "" for row in rows)


class TestEmitPlotData:
    def test_one_row_per_epoch_last_iterate(self, tmp_path):
        trace = tmp_path / "M.csv"
        with open(trace, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "epoch", "grad_norm", "normalized_error",
                             "sigma_max", "wall_ms"])
            for t, epoch, err in [(1, 1, 0.9), (2, 1, 0.8), (3, 2, 0.5),
                                  (4, 2, 0.4), (5, 3, 0.0)]:
                writer.writerow([t, epoch, 1.0, err, "", 0.1])
        rows = emit_plot_data([trace], tmp_path / "plot.csv")
        assert rows == [("M", 1, 0.8), ("M", 2, 0.4), ("M", 3, 1e-16)]

    def test_methods_keep_input_order(self, tmp_path):
        for name, err in (("B", 0.5), ("A", 0.25)):
            with open(tmp_path / f"{name}.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["t", "epoch", "grad_norm", "normalized_error",
                                 "sigma_max", "wall_ms"])
                writer.writerow([1, 1, 1.0, err, "", 0.1])
        rows = emit_plot_data([tmp_path / "B.csv", tmp_path / "A.csv"],
                              tmp_path / "plot.csv")
        assert [r[0] for r in rows] == ["B", "A"]


class TestCli:
    def test_run_subcommand(self, tmp_path, capsys):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text("problem = quadratic\nn = 4\nd = 6\nxi = 1.0\n"
                       "b_max = 10\nmethods = SLIQN\ngstop = 1e-8\n"
                       f"max_epochs = 30\nout = {tmp_path / 'out'}\n")
        assert cli_main(["run", "--config", str(cfg)]) == 0
        assert (tmp_path / "out" / "SLIQN.csv").exists()
        assert "SLIQN" in capsys.readouterr().out

    def test_run_missing_dataset_exits_nonzero(self, tmp_path, capsys):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text("problem = logistic\ndata = /nonexistent/p.libsvm\n"
                       f"methods = SLIQN\nout = {tmp_path / 'out'}\n")
        assert cli_main(["run", "--config", str(cfg)]) == 1
        assert "error:" in capsys.readouterr().err

    def test_gen_quadratic_subcommand(self, tmp_path):
        out = tmp_path / "quad.npz"
        assert cli_main(["gen-quadratic", "--n", "3", "--d", "4", "--xi", "1.5",
                         "--seed", "2", "--out", str(out)]) == 0
        data = np.load(out)
        assert data["a_diag"].shape == (3, 4)
        assert data["b"].shape == (3, 4)
        # regeneration with the same seed is identical
        out2 = tmp_path / "quad2.npz"
        cli_main(["gen-quadratic", "--n", "3", "--d", "4", "--xi", "1.5",
                  "--seed", "2", "--out", str(out2)])
        np.testing.assert_array_equal(data["a_diag"], np.load(out2)["a_diag"])
