import math
import os
from dataclasses import replace

import numpy as np
import pytest

from lbsim import cli, harness
from lbsim.engine import ConfigurationError
from lbsim.harness import (
    ExperimentConfig,
    config_to_manifest,
    load_config,
    read_csv,
    read_episodes,
    read_steps,
    read_table,
    run_experiment,
    run_sweep,
    validate_config,
)

TINY = ExperimentConfig(
    lbs=1, servers=((4, 8), (2, 4)), rate_fraction=0.8,
    distribution="identical", mean_workload=0.1, policy="sed",
    episodes=2, first_episode_duration=5.0, episode_increment=1.0,
    seeds=(0,),
)


class TestValidateConfig:
    def test_empty_config_needs_topology(self):
        with pytest.raises(ConfigurationError, match="topology missing"):
            validate_config("")

    def test_preset_expansion(self):
        config, warnings = validate_config("[topology]\npreset = 1lb-2s\n")
        assert config.lbs == 1
        assert config.servers == ((4, 8), (2, 4))
        assert warnings == []
        # Appendix-style defaults
        assert config.episodes == 20
        assert config.step_interval == 0.5
        assert config.first_episode_duration == 60.0
        assert config.sac.batch_size == 64
        assert config.sac.buffer_capacity == 3000
        assert config.sac.learning_rate == 1e-3

    def test_overload_rate_warns(self):
        config, warnings = validate_config(
            "[topology]\npreset = 1lb-2s\n[traffic]\nrate = 1.3\n")
        assert config.rate_fraction == 1.3
        assert any("overload" in w for w in warnings)

    def test_cap_below_processors_rejected(self):
        with pytest.raises(ConfigurationError, match="p_hat"):
            validate_config("[topology]\nservers = 4:2\n")

    def test_explicit_servers_with_default_cap(self):
        config, _ = validate_config("[topology]\nlbs = 2\nservers = 4, 2:3\n")
        assert config.lbs == 2
        assert config.servers == ((4, 8), (2, 3))

    def test_unknown_policy_rejected(self):
        with pytest.raises(ConfigurationError, match="unknown policy"):
            validate_config("[topology]\npreset = 1lb-2s\n[run]\npolicy = lru\n")

    def test_baseline_with_sac_options_warns(self):
        _, warnings = validate_config(
            "[topology]\npreset = 1lb-2s\n[run]\npolicy = sed\n[sac]\nhidden = 32\n")
        assert any("ignored" in w for w in warnings)

    def test_manifest_roundtrip(self):
        config, _ = validate_config("[topology]\npreset = 2lb-4s\n"
                                    "[run]\npolicy = lsq\nseeds = 3,4\n")
        text = config_to_manifest(config)
        clone, warnings = validate_config(text)
        assert clone == config


class TestRunExperiment:
    def test_episode_schedule(self, tmp_path):
        config = replace(TINY, episodes=3, out_dir=str(tmp_path / "run"))
        result = run_experiment(config)
        assert [s.episode for s in result.summaries] == [0, 1, 2]
        steps = read_steps(os.path.join(result.out_dir, "steps.csv"))
        # durations 5, 6, 7 with 0.5 s boundaries -> 10/12/14 boundaries
        per_episode = {}
        for row in steps:
            per_episode.setdefault(row[0], set()).add(row[1])
        assert sorted(len(v) for v in per_episode.values()) == [10, 12, 14]

    def test_baseline_run_writes_no_checkpoints(self, tmp_path):
        config = replace(TINY, out_dir=str(tmp_path / "run"))
        result = run_experiment(config)
        assert not os.path.exists(os.path.join(result.out_dir, "checkpoints"))
        for name in ("steps.csv", "episodes.csv", "cdf.csv", "manifest.ini"):
            assert os.path.exists(os.path.join(result.out_dir, name))

    def test_learning_run_writes_checkpoints(self, tmp_path):
        config = replace(
            TINY, policy="rlb-sac", out_dir=str(tmp_path / "run"),
            sac=replace(TINY.sac, batch_size=8, buffer_capacity=64))
        result = run_experiment(config)
        ck = os.path.join(result.out_dir, "checkpoints", "lb0")
        assert os.path.exists(os.path.join(ck, "agent.json"))
        assert os.path.exists(os.path.join(ck, "actor.head.nn"))

    def test_identical_runs_are_bitwise_identical(self, tmp_path):
        outs = []
        for k in range(2):
            config = replace(TINY, out_dir=str(tmp_path / f"run{k}"))
            outs.append(run_experiment(config).out_dir)
        for name in ("steps.csv", "cdf.csv"):
            a = open(os.path.join(outs[0], name), "rb").read()
            b = open(os.path.join(outs[1], name), "rb").read()
            assert a == b, name
        # manifests agree except for the output directory itself
        ma = [l for l in open(os.path.join(outs[0], "manifest.ini")) if not l.startswith("out =")]
        mb = [l for l in open(os.path.join(outs[1], "manifest.ini")) if not l.startswith("out =")]
        assert ma == mb
        # episodes.csv matches except the wall-clock column
        ea = read_episodes(os.path.join(outs[0], "episodes.csv"))
        eb = read_episodes(os.path.join(outs[1], "episodes.csv"))
        for x, y in zip(ea, eb):
            assert (x.episode, x.fairness_index, x.avg_residual_workload,
                    x.max_residual_workload, x.mean_reward) == \
                   (y.episode, y.fairness_index, y.avg_residual_workload,
                    y.max_residual_workload, y.mean_reward)

    def test_manifest_reproduces_run(self, tmp_path):
        config = replace(TINY, out_dir=str(tmp_path / "a"))
        first = run_experiment(config)
        loaded, _ = load_config(os.path.join(first.out_dir, "manifest.ini"))
        second = run_experiment(replace(loaded, out_dir=str(tmp_path / "b")))
        a = open(os.path.join(first.out_dir, "steps.csv"), "rb").read()
        b = open(os.path.join(second.out_dir, "steps.csv"), "rb").read()
        assert a == b

    def test_multi_lb_run(self, tmp_path):
        config = replace(TINY, lbs=2, out_dir=str(tmp_path / "run"))
        result = run_experiment(config)
        steps = read_steps(os.path.join(result.out_dir, "steps.csv"))
        assert {row[2] for row in steps} == {0, 1}  # both LB ids present

    def test_csv_roundtrip_values(self, tmp_path):
        config = replace(TINY, out_dir=str(tmp_path / "run"))
        result = run_experiment(config)
        episodes = read_episodes(os.path.join(result.out_dir, "episodes.csv"))
        for parsed, summary in zip(episodes, result.summaries):
            assert parsed.fairness_index == summary.fairness_index
            assert parsed.avg_residual_workload == summary.avg_residual_workload
        header, rows = read_csv(os.path.join(result.out_dir, "cdf.csv"))
        assert header == ["residual_workload", "cum_prob"]
        values = [float(r[0]) for r in rows]
        assert values == sorted(values)
        assert float(rows[-1][1]) == 1.0


class TestSweep:
    def test_single_cell_equals_run(self, tmp_path):
        config = replace(TINY, out_dir=str(tmp_path / "sweep"))
        sweep = run_sweep(config, rates=[0.8], policies=["sed"], seeds=[0],
                          workers=1)
        run = run_experiment(replace(config, policy="sed", rate_fraction=0.8),
                             seed=0, write_files=False)
        cell = sweep.cells[0]
        last = run.summaries[-1]
        assert cell.fairness_index == last.fairness_index
        assert cell.avg_residual_workload == last.avg_residual_workload
        assert cell.max_residual_workload == last.max_residual_workload

    def test_median_of_three_seeds(self, tmp_path):
        config = replace(TINY, out_dir=str(tmp_path / "sweep"))
        sweep = run_sweep(config, rates=[0.8], policies=["lsq"], seeds=[0, 1, 2],
                          workers=1)
        fis = []
        for seed in (0, 1, 2):
            res = run_experiment(replace(config, policy="lsq"), seed=seed,
                                 write_files=False)
            fis.append(res.summaries[-1].fairness_index)
        assert sweep.cells[0].fairness_index == sorted(fis)[1]

    def test_table_layout_and_roundtrip(self, tmp_path):
        config = replace(TINY, out_dir=str(tmp_path / "sweep"))
        sweep = run_sweep(config, rates=[0.6, 0.8], policies=["sed", "lsq"],
                          seeds=[0], workers=2)
        table = read_table(os.path.join(sweep.out_dir, "table.csv"))
        assert [(r[0], r[1]) for r in table] == \
            [("sed", 0.6), ("sed", 0.8), ("lsq", 0.6), ("lsq", 0.8)]
        assert all(r[5] == "ok" for r in table)

    def test_partial_failure_recorded(self, tmp_path, monkeypatch):
        import lbsim.harness as hmod

        real = hmod.run_experiment

        def flaky(config, seed=None, out_dir=None, write_files=True):
            if config.policy == "lsq":
                raise RuntimeError("boom")
            return real(config, seed=seed, out_dir=out_dir, write_files=write_files)

        monkeypatch.setattr(hmod, "run_experiment", flaky)
        config = replace(TINY, out_dir=str(tmp_path / "sweep"))
        sweep = run_sweep(config, rates=[0.8], policies=["sed", "lsq"], seeds=[0],
                          workers=1)
        by_policy = {c.policy: c for c in sweep.cells}
        assert by_policy["sed"].status == "ok"
        assert "boom" in by_policy["lsq"].status
        assert math.isnan(by_policy["lsq"].fairness_index)

    def test_empty_lists_rejected(self):
        with pytest.raises(ConfigurationError):
            run_sweep(TINY, rates=[], policies=["sed"], seeds=[0])

    def test_sweep_manifest_rerun_bitwise(self, tmp_path):
        config = replace(TINY, out_dir=str(tmp_path / "a"))
        run_sweep(config, rates=[0.8], policies=["sed", "ecmp"], seeds=[0, 1],
                  workers=2)
        loaded, _ = load_config(os.path.join(str(tmp_path / "a"), "manifest.ini"))
        rates, policies, seeds = harness.load_sweep_lists(
            os.path.join(str(tmp_path / "a"), "manifest.ini"))
        run_sweep(replace(loaded, out_dir=str(tmp_path / "b")), rates=rates,
                  policies=policies, seeds=seeds, workers=1)
        a = open(os.path.join(str(tmp_path / "a"), "table.csv"), "rb").read()
        b = open(os.path.join(str(tmp_path / "b"), "table.csv"), "rb").read()
        assert a == b


class TestCli:
    def _write_config(self, tmp_path, extra=""):
        path = tmp_path / "config.ini"
        path.write_text(
            "[topology]\npreset = 1lb-2s\n"
            "[traffic]\nrate = 0.8\n"
            "[run]\npolicy = sed\nepisodes = 2\n"
            "first_episode_duration = 5\nepisode_increment = 1\n" + extra)
        return str(path)

    def test_validate_ok(self, tmp_path, capsys):
        path = self._write_config(tmp_path)
        assert cli.main(["validate", "--config", path]) == 0
        out = capsys.readouterr().out
        assert "config ok" in out

    def test_missing_config_is_config_error(self, tmp_path):
        assert cli.main(["validate", "--config", str(tmp_path / "nope.ini")]) == 1

    def test_bad_policy_flag_is_config_error(self, tmp_path):
        path = self._write_config(tmp_path)
        assert cli.main(["run", "--config", path, "--policy", "nope"]) == 1

    def test_run_and_outputs(self, tmp_path, capsys):
        path = self._write_config(tmp_path)
        out = str(tmp_path / "out")
        assert cli.main(["run", "--config", path, "--out", out, "--seed", "1"]) == 0
        assert os.path.exists(os.path.join(out, "steps.csv"))
        stdout = capsys.readouterr().out
        assert "run complete" in stdout

    def test_sweep_requires_lists(self, tmp_path):
        path = self._write_config(tmp_path)
        assert cli.main(["sweep", "--config", path]) == 1

    def test_sweep_cli(self, tmp_path):
        path = self._write_config(tmp_path)
        out = str(tmp_path / "out")
        code = cli.main(["sweep", "--config", path, "--rates", "0.8",
                         "--policies", "sed,lsq", "--seeds", "0", "--out", out])
        assert code == 0
        assert os.path.exists(os.path.join(out, "table.csv"))
