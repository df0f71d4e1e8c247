import numpy as np
import pytest

from fittedq import envs, runner, serialize


def fqi_config_text(out_dir, seeds=(0, 1, 2), noise=0.1, iterations=5):
    return serialize.dumps({
        "command": "run-fqi",
        "model": {"kind": "random-mdp", "n_states": 4, "n_actions": 2,
                  "gamma": 0.9, "r_max": 1.0, "seed": 3,
                  "reward_noise_halfwidth": noise},
        "algorithm": {"iterations": iterations, "n_samples": 40},
        "output_dir": str(out_dir),
        "seeds": list(seeds),
    })


def strip_timing(csv_text):
    lines = csv_text.strip().splitlines()
    header = lines[0].split(",")
    keep = [i for i, name in enumerate(header)
            if name not in runner.TIMING_COLUMNS]
    return "\n".join(",".join(line.split(",")[i] for i in keep)
                     for line in lines)


class TestParseConfig:
    def test_minimal_config_fills_defaults(self, tmp_path):
        config = runner.parse_config(fqi_config_text(tmp_path))
        algo = config.document["algorithm"]
        assert algo["approximator"] == {"kind": "tabular"}
        assert algo["trainer"]["learning_rate"] == 1e-2
        assert algo["sampling"]["kind"] == "uniform-state-action"
        assert config.document["seeds"] == [0, 1, 2]

    def test_all_violations_reported_with_paths(self):
        text = serialize.dumps({
            "command": "run-fqi",
            "model": {"kind": "random-mdp", "n_states": 4, "n_actions": 2,
                      "gamma": 1.2, "r_max": 1.0, "bogus": 1},
            "algorithm": {"iterations": -3},
            "seeds": [],
        })
        with pytest.raises(runner.ConfigError) as info:
            runner.parse_config(text)
        messages = "\n".join(info.value.errors)
        assert "model/gamma" in messages
        assert "bogus" in messages
        assert "algorithm/iterations" in messages
        assert "seeds" in messages
        assert len(info.value.errors) >= 4

    def test_unknown_top_level_key_rejected(self, tmp_path):
        doc = serialize.loads(fqi_config_text(tmp_path))
        doc["surprise"] = 1
        with pytest.raises(runner.ConfigError) as info:
            runner.parse_config(serialize.dumps(doc))
        assert any("surprise" in e for e in info.value.errors)

    def test_unknown_command_rejected(self):
        with pytest.raises(runner.ConfigError):
            runner.parse_config('{"command": "run-everything"}')

    def test_round_trip_idempotent(self, tmp_path):
        first = runner.parse_config(fqi_config_text(tmp_path))
        second = runner.parse_config(serialize.dumps(first.document))
        assert first.document == second.document

    def test_missing_model_file_reported(self, tmp_path):
        text = serialize.dumps({
            "command": "run-fqi",
            "model": {"path": "missing.json"},
            "algorithm": {"iterations": 1},
        })
        with pytest.raises(runner.ConfigError) as info:
            runner.parse_config(text, base_dir=tmp_path)
        assert any("does not exist" in e for e in info.value.errors)

    def test_model_file_accepted(self, tmp_path):
        envs.save_model(envs.make_random_mdp(3, 2, 0.9, 1.0, seed=1),
                        tmp_path / "m.json")
        text = serialize.dumps({
            "command": "run-fqi",
            "model": {"path": "m.json"},
            "algorithm": {"iterations": 1},
            "output_dir": str(tmp_path / "out"),
        })
        config = runner.parse_config(text, base_dir=tmp_path)
        report = runner.run_experiment(config)
        assert report.per_seed[0]["status"] == "ok"


class TestRunExperiment:
    def test_file_count_contract(self, tmp_path):
        config = runner.parse_config(fqi_config_text(tmp_path / "out"))
        runner.run_experiment(config)
        csvs = sorted((tmp_path / "out").glob("trace_seed*.csv"))
        assert len(csvs) == 3
        assert (tmp_path / "out" / "report.json").exists()

    def test_csv_header_golden(self, tmp_path):
        config = runner.parse_config(fqi_config_text(tmp_path / "out",
                                                     seeds=(0,)))
        runner.run_experiment(config)
        text = (tmp_path / "out" / "trace_seed0.csv").read_text()
        assert text.splitlines()[0] == \
            "k,empirical_mse,one_step_error_sigma,suboptimality_1mu,wall_ms"

    def test_determinism_excluding_timing(self, tmp_path):
        for name in ("a", "b"):
            config = runner.parse_config(fqi_config_text(tmp_path / name))
            runner.run_experiment(config)
        for seed in (0, 1, 2):
            a = strip_timing((tmp_path / "a" / f"trace_seed{seed}.csv").read_text())
            b = strip_timing((tmp_path / "b" / f"trace_seed{seed}.csv").read_text())
            assert a == b

    def test_report_contents(self, tmp_path):
        config = runner.parse_config(fqi_config_text(tmp_path / "out",
                                                     seeds=(0, 1)))
        report = runner.run_experiment(config)
        doc = serialize.load(tmp_path / "out" / "report.json")
        assert doc["tool_version"] == report.tool_version
        assert doc["config"] == config.document
        assert len(doc["per_seed"]) == 2
        assert "final_suboptimality_1mu" in doc["aggregate"]
        assert set(doc["aggregate"]["final_suboptimality_1mu"]) == {"median", "iqr"}

    def test_parallel_jobs_match_serial(self, tmp_path):
        serial = runner.parse_config(fqi_config_text(tmp_path / "serial"))
        parallel = runner.parse_config(fqi_config_text(tmp_path / "parallel"))
        runner.run_experiment(serial, jobs=1)
        runner.run_experiment(parallel, jobs=3)
        for seed in (0, 1, 2):
            a = strip_timing((tmp_path / "serial" / f"trace_seed{seed}.csv").read_text())
            b = strip_timing((tmp_path / "parallel" / f"trace_seed{seed}.csv").read_text())
            assert a == b

    def test_sweep_aggregates_per_value(self, tmp_path):
        text = serialize.dumps({
            "command": "sweep",
            "parameter": "algorithm.n_samples",
            "values": [10, 40, 160],
            "experiment": serialize.loads(fqi_config_text(tmp_path / "out",
                                                          seeds=(0, 1, 2))),
            "output_dir": str(tmp_path / "sweep"),
            "seeds": [0, 1, 2],
        })
        config = runner.parse_config(text)
        report = runner.run_experiment(config)
        assert [entry["value"] for entry in report.sweep] == [10, 40, 160]
        for entry in report.sweep:
            assert "final_suboptimality_1mu" in entry["aggregate"]
            assert "median" in entry["aggregate"]["final_suboptimality_1mu"]

    def test_report_is_self_describing(self, tmp_path):
        config = runner.parse_config(fqi_config_text(tmp_path / "original",
                                                     seeds=(0,)))
        runner.run_experiment(config)
        doc = serialize.load(tmp_path / "original" / "report.json")
        # re-running from the report's own config echo reproduces the trace
        replay = dict(doc["config"])
        replay["output_dir"] = str(tmp_path / "replay")
        runner.run_experiment(runner.parse_config(serialize.dumps(replay)))
        original = strip_timing(
            (tmp_path / "original" / "trace_seed0.csv").read_text())
        replayed = strip_timing(
            (tmp_path / "replay" / "trace_seed0.csv").read_text())
        assert original == replayed

    def test_full_support_demand_enforced(self, tmp_path):
        from fittedq import fqi as fqi_module
        weights = np.zeros(8)
        weights[0] = 1.0
        with pytest.raises(ValueError):
            fqi_module.SamplingDistribution("explicit-weights", weights=weights,
                                            require_full_support=True)

    def test_run_minimax_fqi_command(self, tmp_path):
        text = serialize.dumps({
            "command": "run-minimax-fqi",
            "model": {"kind": "random-game", "n_states": 2, "n_actions": 2,
                      "n_actions2": 2, "gamma": 0.9, "r_max": 1.0, "seed": 4},
            "algorithm": {"iterations": 3, "n_samples": 20},
            "output_dir": str(tmp_path / "out"),
            "seeds": [0],
        })
        report = runner.run_experiment(runner.parse_config(text))
        assert report.per_seed[0]["status"] == "ok"
        assert "final_one_step_error_sigma" in report.per_seed[0]["metrics"]

    def test_run_fqi_sgd_command(self, tmp_path):
        text = serialize.dumps({
            "command": "run-fqi-sgd",
            "model": {"kind": "random-continuous", "state_dim": 2,
                      "n_actions": 2, "gamma": 0.9, "r_max": 1.0, "seed": 1},
            "algorithm": {"iterations": 2,
                          "approximator": {"kind": "ntk", "m": 16},
                          "sgd_steps": 30},
            "output_dir": str(tmp_path / "out"),
            "seeds": [0],
        })
        report = runner.run_experiment(runner.parse_config(text))
        assert report.per_seed[0]["status"] == "ok"
        csv = (tmp_path / "out" / "trace_seed0.csv").read_text()
        assert csv.splitlines()[0] == runner.FQI_CSV_HEADER
        # continuous models track no tabular diagnostics: those cells empty
        assert csv.splitlines()[1].split(",")[2] == ""

    def test_run_minimax_dqn_command(self, tmp_path):
        text = serialize.dumps({
            "command": "run-minimax-dqn",
            "model": {"kind": "matching-pennies"},
            "algorithm": {"total_steps": 40, "minibatch_size": 4},
            "output_dir": str(tmp_path / "out"),
            "seeds": [0],
        })
        report = runner.run_experiment(runner.parse_config(text))
        assert report.per_seed[0]["status"] == "ok"
        assert report.per_seed[0]["metrics"]["sync_count"] == 0

    def test_diverged_run_still_emits_artifacts(self, tmp_path):
        text = serialize.dumps({
            "command": "run-fqi",
            "model": {"kind": "random-continuous", "state_dim": 2,
                      "n_actions": 2, "gamma": 0.9, "r_max": 1.0, "seed": 1},
            "algorithm": {"iterations": 4, "n_samples": 20,
                          "approximator": {"kind": "relu", "hidden": [8]},
                          "trainer": {"epochs": 30,
                                      "divergence_threshold": 1e-12}},
            "output_dir": str(tmp_path / "out"),
            "seeds": [0],
        })
        report = runner.run_experiment(runner.parse_config(text))
        entry = report.per_seed[0]
        assert entry["status"] == "ok"
        assert entry["metrics"]["diverged"] is True
        assert (tmp_path / "out" / "report.json").exists()
        csv = (tmp_path / "out" / "trace_seed0.csv").read_text()
        assert csv.splitlines()[0] == runner.FQI_CSV_HEADER

    def test_csv_cells_tolerate_non_finite(self):
        assert runner._csv_cell(float("nan")) == ""
        assert runner._csv_cell(float("inf")) == ""
        assert runner._csv_cell(None) == ""
        assert runner._csv_cell(3) == "3"

    def test_all_seeds_failing_raises(self, tmp_path):
        text = serialize.dumps({
            "command": "run-fqi",
            "model": {"kind": "random-game", "n_states": 2, "n_actions": 2,
                      "n_actions2": 2, "gamma": 0.9, "r_max": 1.0},
            "algorithm": {"iterations": 1},
            "output_dir": str(tmp_path / "out"),
            "seeds": [0, 1],
        })
        config = runner.parse_config(text)
        with pytest.raises(RuntimeError):
            runner.run_experiment(config)
        doc = serialize.load(tmp_path / "out" / "report.json")
        assert all(e["status"] == "error" for e in doc["per_seed"])


class TestEmitReport:
    def test_empty_metrics_skeleton(self, tmp_path):
        report = runner.RunReport(config={}, per_seed=[], aggregate={},
                                  artifacts=[])
        paths = runner.emit_report(report, tmp_path)
        doc = serialize.load(paths[0])
        assert doc["per_seed"] == []
        assert doc["aggregate"] == {}

    def test_round_trip(self, tmp_path):
        report = runner.RunReport(config={"command": "run-fqi"},
                                  per_seed=[{"seed": 0, "status": "ok",
                                             "metrics": {"m": 0.5},
                                             "trace_csv": "x.csv"}],
                                  aggregate={"m": {"median": 0.5, "iqr": 0.0}},
                                  artifacts=["x.csv"], total_wall_ms=1.0)
        paths = runner.emit_report(report, tmp_path)
        doc = serialize.load(paths[0])
        assert doc == report.to_dict()


class TestSolveHandlers:
    def test_solve_exact_mdp(self, tmp_path):
        text = serialize.dumps({
            "command": "solve-exact",
            "model": {"kind": "gridworld", "width": 2, "height": 1,
                      "goal": [1, 0], "step_reward": -0.1, "goal_reward": 1.0,
                      "slip_prob": 0.0, "gamma": 0.9},
        })
        result = runner.solve_exact(runner.parse_config(text))
        east = envs.GRID_ACTIONS.index((1, 0))
        assert abs(result["q_star"][0][east] - 1.0) <= 1e-10
        assert result["residual"] <= 1e-10

    def test_solve_exact_game(self):
        text = serialize.dumps({
            "command": "solve-exact",
            "model": {"kind": "matching-pennies", "gamma": 0.9},
        })
        result = runner.solve_exact(runner.parse_config(text))
        assert abs(result["q_star"][0][0][0] - 1.0) <= 1e-8
        assert np.allclose(result["policy"]["p1"], 0.5, atol=1e-8)

    def test_solve_matrix_inline(self):
        text = serialize.dumps({
            "command": "solve-matrix",
            "payoff": [[1.0, -1.0], [-1.0, 1.0]],
        })
        result = runner.solve_matrix(runner.parse_config(text))
        assert abs(result["value"]) <= 1e-10

    def test_diagnose_kappa(self):
        text = serialize.dumps({
            "command": "diagnose-kappa",
            "model": {"kind": "random-mdp", "n_states": 2, "n_actions": 2,
                      "gamma": 0.9, "r_max": 1.0, "seed": 1},
            "m": 2,
        })
        result = runner.diagnose(runner.parse_config(text))
        assert result["kappa"] >= 1.0
        assert result["mode"] == "exhaustive"

    def test_diagnose_sandwich(self, tmp_path):
        text = serialize.dumps({
            "command": "diagnose-sandwich",
            "model": {"kind": "random-mdp", "n_states": 3, "n_actions": 2,
                      "gamma": 0.9, "r_max": 1.0, "seed": 2,
                      "reward_noise_halfwidth": 0.2},
            "algorithm": {"iterations": 4, "n_samples": 20},
        })
        result = runner.diagnose(runner.parse_config(text))
        assert result["holds"]
        assert result["max_violation"] <= 1e-9
