import csv
import hashlib
import json
import math
import time

import numpy as np
import pytest

from privmap.cache import CACHE_ENV
from privmap.cli import main
from privmap.config import (ConfigError, ExperimentConfig, builtin_config, epsilon_tag, load_config,
                            parse_epsilon_list)
from privmap.horizon import window_data
from privmap.pmf import read_pmf_csv

from conftest import simplex_grid_min

SCALAR_SYSTEM = {"A": [[0.5]], "B": [[1.0]], "C": [[1.0]], "D": [[1.0]], "sigma_M": [[1.0]],
                 "sigma_W": [[1.0]], "mu_X1": [0.0], "sigma_X1": [[1.0]]}


def scalar_config(**overrides) -> dict:
    cfg = {
        "name": "scalar",
        "system": SCALAR_SYSTEM,
        "sensor_quantizer": {"boundaries": [[0.0]], "levels": [-1.0, 1.0]},
        "private_quantizer": {"boundaries": [[0.0]], "levels": [-1.0, 1.0]},
        "n_noise": 2,
        "K": 2,
        "epsilons": ["inf", 0.5, 0],
        "k_range": [1, 3],
        "seeds": {"simulation": 3, "integration": 0},
        "integration": {"abs_tol": 1e-6, "max_points": 65536},
    }
    cfg.update(overrides)
    return cfg


def write_config(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def read_csv(path):
    with path.open() as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(autouse=True)
def private_cache(tmp_path_factory, monkeypatch):
    monkeypatch.setenv(CACHE_ENV, str(tmp_path_factory.mktemp("cli-cache")))


def digest_tree(root):
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


class TestConfigErrors:
    def test_malformed_json_reports_position(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text('{\n  "K": 2,\n  "n_noise": ,\n}')
        assert main(["lift", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
        assert "bad.json:3:14" in capsys.readouterr().err

    def test_schema_violation(self, tmp_path, capsys):
        path = write_config(tmp_path, scalar_config(K=0))
        assert main(["lift", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
        assert "K" in capsys.readouterr().err

    def test_unknown_field(self, tmp_path):
        path = write_config(tmp_path, scalar_config(colour="blue"))
        assert main(["lift", "--config", str(path), "--out", str(tmp_path / "o")]) == 2

    def test_missing_system_file(self, tmp_path, capsys):
        path = write_config(tmp_path, scalar_config(system="nowhere.json"))
        assert main(["lift", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
        assert "nowhere.json" in capsys.readouterr().err

    def test_noise_alphabet_too_large(self, tmp_path):
        path = write_config(tmp_path, scalar_config(n_noise=3))
        assert main(["solve", "--config", str(path), "--out", str(tmp_path / "o")]) == 2

    def test_singular_covariance_is_rejected_up_front(self, tmp_path):
        system = dict(SCALAR_SYSTEM, sigma_W=[[0.0]])
        path = write_config(tmp_path, scalar_config(system=system))
        assert main(["lift", "--config", str(path), "--out", str(tmp_path / "o")]) == 2

    def test_bad_epsilon_flag(self, tmp_path):
        path = write_config(tmp_path, scalar_config())
        assert main(["solve", "--config", str(path), "--epsilon", "seven", "--out", str(tmp_path / "o")]) == 2
        assert main(["solve", "--config", str(path), "--epsilon", "-1", "--out", str(tmp_path / "o")]) == 2

    def test_config_file_missing(self, tmp_path):
        assert main(["lift", "--config", str(tmp_path / "absent.json"), "--out", str(tmp_path / "o")]) == 2


class TestConfig:
    def test_round_trip(self, tmp_path):
        data = scalar_config(input={"kind": "table", "steps": [{"from": 1, "value": [0.5]},
                                                               {"from": 3, "value": [-1.0]}]},
                             simulation={"k_max": 3}, solver={"tol": 1e-7, "max_iter": 500, "variant": "vanilla"})
        cfg = ExperimentConfig.from_dict(data)
        again = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert again == cfg
        assert again.to_dict() == cfg.to_dict()
        assert again.inputs(4)[0] == -1.0

    def test_round_trip_with_system_path(self, tmp_path):
        (tmp_path / "plant.json").write_text(json.dumps({"system": SCALAR_SYSTEM}))
        cfg = load_config(write_config(tmp_path, scalar_config(system="plant.json")))
        assert cfg.to_dict()["system"] == "plant.json"
        again = ExperimentConfig.from_dict(cfg.to_dict(), base_dir=tmp_path)
        assert again == cfg
        np.testing.assert_array_equal(again.system.A, [[0.5]])

    def test_builtin_reactor(self):
        cfg = builtin_config("reactor")
        assert cfg.K == 3 and cfg.n_noise == 5 and cfg.epsilons == (math.inf, 7.0, 2.0)
        assert cfg.sensor.size == 8 and cfg.private.size == 2 and list(cfg.k_range) == list(range(1, 26))
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(ConfigError):
            builtin_config("nothing")

    def test_epsilon_helpers(self):
        assert parse_epsilon_list("inf, 7,2") == [math.inf, 7.0, 2.0]
        assert [epsilon_tag(e) for e in (math.inf, 7.0, 0.5)] == ["inf", "7", "0.5"]
        with pytest.raises(ConfigError):
            parse_epsilon_list(" , ")


class TestLift:
    def test_scalar_single_step(self, tmp_path):
        path = write_config(tmp_path, scalar_config(K=1, n_noise=1, k_range=[1, 1]))
        out = tmp_path / "o"
        assert main(["lift", "--config", str(path), "--out", str(out)]) == 0
        mean = read_csv(out / "lift_mean_k001.csv")
        assert [r["coordinate"] for r in mean] == ["Y[1]", "S[1]"]
        assert [float(r["mean"]) for r in mean] == [0.0, 0.0]
        cov = np.loadtxt(out / "lift_cov_k001.csv", delimiter=",", skiprows=1, usecols=(1, 2))
        np.testing.assert_allclose(cov, [[2.0, 1.0], [1.0, 1.0]], atol=1e-15)

    def test_reactor_first_window(self, tmp_path):
        out = tmp_path / "o"
        assert main(["lift", "--out", str(out)]) == 0
        assert len(list(out.glob("lift_mean_k*.csv"))) == 25
        mean = np.loadtxt(out / "lift_mean_k001.csv", delimiter=",", skiprows=1, usecols=1)
        cov = np.loadtxt(out / "lift_cov_k001.csv", delimiter=",", skiprows=1, usecols=range(1, 7))
        assert mean.shape == (6,) and cov.shape == (6, 6)
        np.testing.assert_array_equal(cov, cov.T)
        assert np.linalg.eigvalsh(cov).min() > 0
        assert mean[0] == pytest.approx(6.94 + 13.76) and mean[3] == pytest.approx(6.94)


class TestSolve:
    def test_zero_budget(self, tmp_path):
        path = write_config(tmp_path, scalar_config(epsilons=[0]))
        out = tmp_path / "o"
        assert main(["solve", "--config", str(path), "--out", str(out)]) == 0
        q = read_pmf_csv(out / "solve_eps0_q.csv")
        np.testing.assert_array_equal(q.probs, [1.0, 0.0, 0.0, 0.0])
        meta = json.loads((out / "solve_eps0.json").read_text())
        assert meta["distortion"] == 0.0 and meta["converged"] is True
        assert meta["objective_nats"] == pytest.approx(meta["baseline_nats"], abs=1e-12)

    def test_grid_oracle(self, tmp_path):
        path = write_config(tmp_path, scalar_config(epsilons=["inf", 0.5, 0]))
        out = tmp_path / "o"
        assert main(["solve", "--config", str(path), "--out", str(out)]) == 0
        cfg = load_config(path)
        data, _ = window_data(cfg.scenario(), 1, cfg.integration)
        for eps in cfg.epsilons:
            meta = json.loads((out / f"solve_eps{epsilon_tag(eps)}.json").read_text())
            oracle, _ = simplex_grid_min(data, eps, resolution=200)
            assert abs(meta["objective_nats"] - oracle) < 1e-3

    def test_iteration_cap_exit_code(self, tmp_path):
        path = write_config(tmp_path, scalar_config(epsilons=[0.5], solver={"tol": 1e-14, "max_iter": 1}))
        out = tmp_path / "o"
        assert main(["solve", "--config", str(path), "--out", str(out)]) == 4
        meta = json.loads((out / "solve_eps0.5.json").read_text())
        assert meta["converged"] is False and meta["iterations"] == 1
        assert (out / "solve_eps0.5_q.csv").exists()

    def test_numeric_failure_exit_code(self, tmp_path, capsys):
        system = dict(SCALAR_SYSTEM, A=[[1e200]])
        path = write_config(tmp_path, scalar_config(system=system, k_range=[3, 3]))
        assert main(["receding", "--config", str(path), "--out", str(tmp_path / "o")]) == 3
        assert "k=3" in capsys.readouterr().err

    def test_epsilon_and_seed_overrides(self, tmp_path):
        path = write_config(tmp_path, scalar_config(simulation={"k_max": 3}))
        out = tmp_path / "o"
        assert main(["receding", "--config", str(path), "--out", str(out), "--epsilon", "inf,0.25",
                     "--seed", "99"]) == 0
        written = json.loads((out / "config.json").read_text())
        assert written["epsilons"] == ["inf", 0.25] and written["seeds"]["simulation"] == 99
        assert sorted(p.name for p in out.glob("windows_*.csv")) == ["windows_eps0.25.csv", "windows_epsinf.csv"]
        assert (out / "trajectory_eps0.25.csv").exists()


class TestReceding:
    def test_single_window_is_solve(self, tmp_path):
        path = write_config(tmp_path, scalar_config(k_range=[1, 1]))
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["receding", "--config", str(path), "--out", str(a)]) == 0
        assert main(["solve", "--config", str(path), "--out", str(b)]) == 0
        for eps in ("inf", "0.5", "0"):
            row = read_csv(a / f"windows_eps{eps}.csv")[0]
            meta = json.loads((b / f"solve_eps{eps}.json").read_text())
            assert float(row["objective_nats"]) == meta["objective_nats"]
            assert float(row["distortion"]) == meta["distortion"]

    def test_outputs(self, tmp_path):
        path = write_config(tmp_path, scalar_config())
        out = tmp_path / "o"
        assert main(["receding", "--config", str(path), "--out", str(out), "--simulate"]) == 0
        mi = read_csv(out / "mi_vs_k.csv")
        assert list(mi[0]) == ["k", "baseline_nats", "objective_nats_epsinf", "objective_nats_eps0.5",
                               "objective_nats_eps0"]
        assert [int(r["k"]) for r in mi] == [1, 2, 3]
        assert len(read_csv(out / "trajectory_epsinf.csv")) == 3
        text = (out / "mi_vs_k.csv").read_bytes()
        assert b"\r" not in text and text.endswith(b"\n")

    def test_cache_reuse_is_fast_and_identical(self, tmp_path):
        cfg = builtin_config("reactor").to_dict()
        cfg.update(n_noise=2, k_range=[1, 2], epsilons=["inf", 2])
        cfg.pop("simulation")
        path = write_config(tmp_path, cfg)
        a, b = tmp_path / "a", tmp_path / "b"
        t0 = time.perf_counter()
        assert main(["receding", "--config", str(path), "--out", str(a), "--threads", "1"]) == 0
        cold = time.perf_counter() - t0
        t0 = time.perf_counter()
        assert main(["receding", "--config", str(path), "--out", str(b), "--threads", "1"]) == 0
        warm = time.perf_counter() - t0
        assert digest_tree(a) == digest_tree(b)
        assert cold >= 10 * warm, (cold, warm)

    def test_no_cache_reruns_are_byte_identical(self, tmp_path):
        path = write_config(tmp_path, scalar_config(simulation={"k_max": 3}))
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["receding", "--config", str(path), "--out", str(out), "--no-cache"]) == 0
        assert digest_tree(a) == digest_tree(b)
        assert len(digest_tree(a)) == 1 + 3 + 1 + 3


class TestManifest:
    def test_format(self, tmp_path):
        from privmap.cli import write_manifest
        (tmp_path / "b.csv").write_text("x\n1\n")
        (tmp_path / "sub").mkdir()
        (tmp_path / "sub" / "a.csv").write_text("y\n")
        lines = write_manifest(tmp_path).read_text().splitlines()
        assert [line.split("  ")[1] for line in lines] == ["b.csv", "sub/a.csv"]
        assert lines[0].split("  ")[0] == hashlib.sha256(b"x\n1\n").hexdigest()
