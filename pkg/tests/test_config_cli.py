import json
import os

import numpy as np
import pytest

from otflow import ConfigError, parse_config
from otflow.cli import main
from otflow.runio import read_coupling_csv


def minimal_transport(out="run"):
    return {
        "command": "transport",
        "marginals": {
            "mu": {"kind": "gaussian", "mean": [-4.0], "variance": 1.0},
            "nu": {"kind": "gaussian", "mean": [6.0], "variance": 1.0},
        },
        "solver": {"lambda": 20.0, "dt": 0.002, "iters": 30, "particles": 60},
        "out": out,
    }


def write_config(tmp_path, payload, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


class TestParseConfig:
    def test_defaults_resolved(self):
        cfg = parse_config(minimal_transport())
        assert cfg.solver.batches == 1
        assert cfg.solver.tau == "auto"
        assert cfg.solver.snapshot_every == max(1, 30 // 20)
        assert cfg.solver.seed == 0
        assert cfg.solver.cost.kind == "quadratic"

    def test_batches_vs_particles(self):
        raw = minimal_transport()
        raw["solver"]["batches"] = 100
        with pytest.raises(ConfigError, match="batches.*particles"):
            parse_config(raw)

    def test_unknown_key_named(self):
        raw = minimal_transport()
        raw["solver"]["step_size"] = 0.1
        with pytest.raises(ConfigError, match="step_size"):
            parse_config(raw)

    def test_missing_image_named(self, tmp_path):
        raw = minimal_transport()
        raw["marginals"]["mu"] = {"kind": "image", "path": "nope.png", "bandwidth": 0.1}
        with pytest.raises(ConfigError, match="nope.png"):
            parse_config(write_config(tmp_path, raw))

    def test_echo_round_trip(self, tmp_path):
        raw = minimal_transport()
        raw["solver"]["tau"] = [0.4, 0.5]
        raw["init"] = {"x": {"kind": "gaussian", "mean": [0.0], "variance": 2.0}}
        cfg1 = parse_config(write_config(tmp_path, raw))
        cfg2 = parse_config(write_config(tmp_path, cfg1.echo, name="echo.json"))
        assert cfg1.echo == cfg2.echo
        assert cfg1.solver == cfg2.solver

    def test_barycenter_round_trip(self, tmp_path):
        raw = {
            "command": "barycenter",
            "marginals": [
                {"kind": "gaussian", "mean": [-2.0], "variance": 1.0},
                {"kind": "gaussian", "mean": [2.0], "variance": 1.0},
            ],
            "weights": [0.25, 0.75],
            "solver": {"lambda": 30.0, "dt": 0.002, "iters": 20, "particles": 40},
            "out": "b",
        }
        cfg1 = parse_config(write_config(tmp_path, raw))
        cfg2 = parse_config(write_config(tmp_path, cfg1.echo, name="echo.json"))
        assert cfg1.echo == cfg2.echo
        np.testing.assert_array_equal(cfg1.bary.weights, cfg2.bary.weights)

    def test_text_image_marginal(self, tmp_path):
        img = tmp_path / "blob.txt"
        img.write_text("0 1\n2 0\n")
        raw = {
            "command": "transport",
            "marginals": {
                "mu": {"kind": "image", "path": "blob.txt", "bandwidth": 0.1},
                "nu": {"kind": "gaussian", "mean": [0.5, 0.5], "variance": 0.05},
            },
            "solver": {"lambda": 5.0, "dt": 0.001, "iters": 2, "particles": 16},
            "out": "img",
        }
        cfg = parse_config(write_config(tmp_path, raw))
        assert cfg.mu.dim == 2
        assert len(cfg.mu.weights) == 2

    def test_png_image_marginal(self, tmp_path):
        from PIL import Image

        arr = np.zeros((4, 4), dtype=np.uint8)
        arr[1, 2] = 255
        Image.fromarray(arr, mode="L").save(tmp_path / "dot.png")
        raw = minimal_transport()
        raw["marginals"]["mu"] = {"kind": "image", "path": "dot.png", "bandwidth": 0.2}
        raw["marginals"]["nu"] = {"kind": "gaussian", "mean": [0.5, 0.5], "variance": 1.0}
        cfg = parse_config(write_config(tmp_path, raw))
        np.testing.assert_allclose(cfg.mu.means, [[0.625, 0.625]])

    def test_unknown_command(self):
        with pytest.raises(ConfigError, match="command"):
            parse_config({"command": "solve"})


class TestCli:
    def run_transport(self, tmp_path, payload=None, name="cfg.json", extra=()):
        payload = payload or minimal_transport(out=str(tmp_path / "run"))
        path = write_config(tmp_path, payload, name=name)
        code = main(["transport", "--config", path, *extra])
        return code, payload["out"] if "out" in payload else None

    def test_transport_artifacts(self, tmp_path):
        code, out = self.run_transport(tmp_path)
        assert code == 0
        for name in ("snapshots.csv", "coupling.csv", "metadata.json", "diagnostics.json", "run.log"):
            assert os.path.exists(os.path.join(out, name)), name
        x, y = read_coupling_csv(os.path.join(out, "coupling.csv"))
        assert x.shape == (60, 1)
        meta = json.loads(open(os.path.join(out, "metadata.json")).read())
        assert meta["config"]["solver"]["lambda"] == 20.0
        assert len(meta["tau"]) == 2
        diag = json.loads(open(os.path.join(out, "diagnostics.json")).read())
        assert {"iter", "energy", "w2_marginal_x", "w2_marginal_y"} <= set(diag["snapshots"][0])

    def test_byte_identical_reruns(self, tmp_path):
        payload = minimal_transport(out=str(tmp_path / "a"))
        self.run_transport(tmp_path, payload)
        first = open(tmp_path / "a" / "snapshots.csv", "rb").read()
        payload2 = dict(payload, out=str(tmp_path / "b"))
        self.run_transport(tmp_path, payload2, name="cfg2.json")
        second = open(tmp_path / "b" / "snapshots.csv", "rb").read()
        assert first == second

    def test_seed_override_changes_output(self, tmp_path):
        payload = minimal_transport(out=str(tmp_path / "a"))
        self.run_transport(tmp_path, payload)
        payload2 = dict(payload, out=str(tmp_path / "b"))
        self.run_transport(tmp_path, payload2, name="cfg2.json", extra=("--seed", "99"))
        a, _ = read_coupling_csv(tmp_path / "a" / "coupling.csv")
        b, _ = read_coupling_csv(tmp_path / "b" / "coupling.csv")
        assert not np.array_equal(a, b)

    def test_interpolate_endpoints(self, tmp_path):
        payload = minimal_transport(out=str(tmp_path / "run"))
        self.run_transport(tmp_path, payload)
        coupling = str(tmp_path / "run" / "coupling.csv")
        icfg = {
            "command": "interpolate",
            "coupling": coupling,
            "times": [0.0, 1.0],
            "out": str(tmp_path / "interp"),
        }
        code = main(["interpolate", "--config", write_config(tmp_path, icfg, "i.json")])
        assert code == 0
        x, y = read_coupling_csv(coupling)
        t0 = np.loadtxt(tmp_path / "interp" / "interp_t0.000000.csv", delimiter=",", skiprows=1)
        t1 = np.loadtxt(tmp_path / "interp" / "interp_t1.000000.csv", delimiter=",", skiprows=1)
        np.testing.assert_array_equal(t0[:, 1:], x)
        np.testing.assert_array_equal(t1[:, 1:], y)

    def test_diagnose_identity_coupling(self, tmp_path, capsys):
        from otflow.runio import write_coupling_csv

        pts = np.random.default_rng(0).normal(size=(32, 1))
        path = str(tmp_path / "c.csv")
        write_coupling_csv(path, pts, pts)
        dcfg = {"command": "diagnose", "coupling": path}
        code = main(["diagnose", "--config", write_config(tmp_path, dcfg, "d.json")])
        assert code == 0
        lines = [json.loads(l) for l in capsys.readouterr().out.strip().splitlines()]
        metrics = {e["metric"]: e["value"] for e in lines}
        assert metrics["mean_cost"] == 0.0
        assert metrics["assignment_cost"] == 0.0

    def test_validation_failure_exit_code(self, tmp_path, capsys):
        raw = minimal_transport()
        raw["solver"]["batches"] = 1000
        code = main(["transport", "--config", write_config(tmp_path, raw)])
        assert code == 2
        assert "batches" in capsys.readouterr().err

    def test_blow_up_exit_code(self, tmp_path, capsys):
        raw = minimal_transport(out=str(tmp_path / "run"))
        raw["solver"]["dt"] = 1e8
        raw["solver"]["tau"] = 1.0
        raw["solver"]["lambda"] = 1e8
        code = main(["transport", "--config", write_config(tmp_path, raw)])
        assert code == 1
        assert "non-finite" in capsys.readouterr().err

    def test_command_mismatch_rejected(self, tmp_path, capsys):
        path = write_config(tmp_path, minimal_transport(out=str(tmp_path / "x")))
        code = main(["diagnose", "--config", path])
        assert code == 2

    def test_plot_script(self, tmp_path):
        payload = minimal_transport(out=str(tmp_path / "run"))
        self.run_transport(tmp_path, payload)
        code = main(["plot-script", "--run", str(tmp_path / "run")])
        assert code == 0
        text = open(tmp_path / "run" / "plot.gp").read()
        assert "coupling.csv" in text

    def test_barycenter_artifacts(self, tmp_path):
        payload = {
            "command": "barycenter",
            "marginals": [
                {"kind": "gaussian", "mean": [-2.0], "variance": 1.0},
                {"kind": "gaussian", "mean": [2.0], "variance": 1.0},
            ],
            "weights": [0.5, 0.5],
            "solver": {"lambda": 30.0, "dt": 0.002, "iters": 20, "particles": 40, "seed": 3},
            "out": str(tmp_path / "bary"),
        }
        code = main(["barycenter", "--config", write_config(tmp_path, payload)])
        assert code == 0
        sample = np.loadtxt(tmp_path / "bary" / "barycenter.csv", delimiter=",", skiprows=1)
        assert sample.shape == (40, 2)  # particle index + one coordinate
        head = open(tmp_path / "bary" / "snapshots.csv").readline().strip()
        assert head == "iter,particle,block,x0"
