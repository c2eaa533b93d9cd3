import csv
import json
import subprocess
import sys

import pytest
import yaml

from pam_chaos.cli import (EXIT_INVALID, EXIT_NUMERICAL, EXIT_OK, THREADS_ENV, ExperimentConfig, flatten,
                           load_config, main, resolve_threads, stage_seed)
from pam_chaos.errors import ArgumentError, HypothesisViolation, ResourceError


def write_cfg(tmp_path, cfg, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg) if name.endswith(".yaml") else json.dumps(cfg))
    return path


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


SMALL_ROUGH = {"temporal": {"kind": "dirac"}, "spatial": {"kind": "rough_fbm", "H1": 0.35},
               "grid": {"T": 0.5, "nt": 4, "L": 4.0, "nx": 16}, "R": [1.0, 2.0]}


class TestConfig:
    def test_flatten(self):
        assert flatten({"a": {"b": 1, "c": {"d": 2}}, "e": 3}) == {"a.b": 1, "a.c.d": 2, "e": 3}

    def test_yaml_and_json_agree(self, tmp_path):
        a = load_config(write_cfg(tmp_path, SMALL_ROUGH))
        b = load_config(write_cfg(tmp_path, SMALL_ROUGH, "cfg.json"))
        assert a == b and a["spatial.H1"] == 0.35

    def test_defaults_validate(self):
        cfg = ExperimentConfig.from_mapping("kernel-checks", {})
        assert cfg.case == "regular" and cfg.grid.nx == 256

    def test_unknown_key(self):
        with pytest.raises(ArgumentError):
            ExperimentConfig.from_mapping("kernel-checks", {"grid.nz": 3})

    def test_hypothesis_clause(self):
        with pytest.raises(HypothesisViolation) as exc:
            ExperimentConfig.from_mapping("kernel-checks", {"temporal.kind": "riesz_time", "temporal.H0": 0.5,
                                                            "spatial.kind": "rough_fbm", "spatial.H1": 0.2})
        assert any("H0+H1 <= 3/4" in c and "0.7" in c for c in exc.value.clauses)

    def test_schedule(self):
        with pytest.raises(ArgumentError):
            ExperimentConfig.from_mapping("variance-scaling", {"R": [4.0, 2.0, 8.0]})
        with pytest.raises(ArgumentError):
            ExperimentConfig.from_mapping("variance-scaling", {"R": [2.0, 64.0]})

    def test_replica_minimum(self):
        with pytest.raises(ArgumentError):
            ExperimentConfig.from_mapping("clt", {"replicas": 10})

    def test_caps(self):
        with pytest.raises(ResourceError):
            ExperimentConfig.from_mapping("variance-scaling", {"caps.max_M": 100})
        with pytest.raises(ResourceError):
            ExperimentConfig.from_mapping("variance-scaling", {"N": 20})

    def test_hash_depends_on_values(self):
        a = ExperimentConfig.from_mapping("clt", {"replicas": 1000})
        b = ExperimentConfig.from_mapping("clt", {"replicas": 1000, "seed": 1})
        assert a.config_hash() != b.config_hash()
        assert a.config_hash() == ExperimentConfig.from_mapping("clt", {"replicas": 1000}).config_hash()


class TestRuntime:
    def test_stage_seeds_distinct(self):
        assert stage_seed(0, "noise") != stage_seed(0, "poincare")
        assert stage_seed(5, "noise") == stage_seed(5, "noise")

    def test_threads_env_wins(self, monkeypatch):
        monkeypatch.setenv(THREADS_ENV, "3")
        assert resolve_threads(8) == 3
        monkeypatch.delenv(THREADS_ENV)
        assert resolve_threads(None) == 1 and resolve_threads(4) == 4


class TestMain:
    def test_kernel_checks(self, tmp_path, capsys):
        assert main(["kernel-checks", "--out", str(tmp_path)]) == EXIT_OK
        rows = read_rows(tmp_path / "checks.csv")
        assert rows and all(r["passed"] == "True" for r in rows)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["files"] == ["checks.csv"] and manifest["summary"]["all_passed"]
        assert {"config_hash", "version", "wall_time", "seeds"} <= set(manifest)
        assert json.loads(capsys.readouterr().out)["experiment"] == "kernel-checks"

    def test_invalid_hypothesis(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, {"temporal": {"kind": "riesz_time", "H0": 0.5},
                                   "spatial": {"kind": "rough_fbm", "H1": 0.2}})
        assert main(["kernel-checks", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_INVALID
        assert "H0+H1 <= 3/4" in capsys.readouterr().err

    def test_malformed_file(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("- just\n- a list\n")
        assert main(["kernel-checks", "--config", str(bad)]) == EXIT_INVALID
        assert main(["kernel-checks", "--config", str(tmp_path / "missing.yaml")]) == EXIT_INVALID

    def test_bad_seed(self, tmp_path):
        assert main(["kernel-checks", "--seed", "-1", "--out", str(tmp_path)]) == EXIT_INVALID

    def test_numerical_failure(self, tmp_path, monkeypatch):
        from pam_chaos import cli
        from pam_chaos.errors import NumericalError

        def boom(*args, **kwargs):
            raise NumericalError("forced")
        monkeypatch.setitem(cli.RUNNERS, "kernel-checks", boom)
        assert main(["kernel-checks", "--out", str(tmp_path)]) == EXIT_NUMERICAL

    def test_variance_scaling_slope(self, tmp_path):
        cfg = write_cfg(tmp_path, {"grid": {"T": 0.5, "nt": 8, "L": 64.0, "nx": 512},
                                   "R": [2.0, 4.0, 8.0, 16.0, 32.0]})
        assert main(["variance-scaling", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
        summary = json.loads((tmp_path / "o" / "manifest.json").read_text())["summary"]
        assert abs(summary["slope"] - 1.0) <= 0.15
        assert [float(r["R"]) for r in read_rows(tmp_path / "o" / "scaling.csv")] == [2, 4, 8, 16, 32]

    def test_deterministic(self, tmp_path):
        cfg = write_cfg(tmp_path, {**SMALL_ROUGH, "replicas": 1000})
        outs = []
        for k, threads in enumerate(("1", "3")):
            out = tmp_path / f"run{k}"
            args = ["clt", "--config", str(cfg), "--seed", "7", "--threads", threads, "--out", str(out)]
            assert main(args) == EXIT_OK
            outs.append((out / "distances.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_other_experiments(self, tmp_path):
        cfg = write_cfg(tmp_path, {**SMALL_ROUGH, "replicas": 32, "N": 3, "n_cells": 50,
                                   "grid": {"T": 0.5, "nt": 3, "L": 3.0, "nx": 6}})
        for name, csv_name in (("poincare", "poincare.csv"), ("derivative-bounds", "sweeps.csv")):
            out = tmp_path / name
            assert main([name, "--config", str(cfg), "--out", str(out), "--plot-data"]) == EXIT_OK
            assert read_rows(out / csv_name)
            assert (out / csv_name.replace(".csv", "_long.csv")).exists()

    def test_console_entry(self, tmp_path):
        res = subprocess.run([sys.executable, "-m", "pam_chaos", "kernel-checks", "--out", str(tmp_path)],
                             capture_output=True, text=True)
        assert res.returncode == 0 and (tmp_path / "checks.csv").exists()
