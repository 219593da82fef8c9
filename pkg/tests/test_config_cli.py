import json

import numpy as np
import pytest
import yaml

from wavesvgd.cli import main
from wavesvgd.config import ConfigError, config_hash, load_config, parse_config
from wavesvgd.experiments import observation_positions
from wavesvgd.io import atomic_write_text, read_csv, strip_timestamp, write_csv, write_json

FAST = {
    "kind": "high_contrast",
    "sampler": {
        "particles": 8,
        "gsvgd": {"omega": 1.0, "max_iters": 2, "elbo_samples": 6, "probes": 5},
        "asvgd": {"iters": 3, "report_every": 1},
        "rwm": {"n_samples": 100},
    },
    "forward": {"ppw": [8, 16], "boundary_ppw": [8, 16]},
}
FAST_LC = {
    "kind": "low_contrast",
    "low_contrast": {"degrees": [0, 1], "n_coeffs": 3},
    "sweep": {"omegas": [1.0]},
    "sampler": {"particles": 6, "gsvgd": {"max_iters": 2, "elbo_samples": 6, "probes": 5},
                "rwm": {"n_samples": 50}},
}


def write_cfg(path, data):
    path.write_text(yaml.safe_dump(data))
    return str(path)


def run_cli(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestConfig:
    def test_defaults(self):
        cfg = parse_config({})
        assert cfg.kind == "high_contrast" and cfg.sampler.particles == 50
        np.testing.assert_allclose(observation_positions(cfg), np.arange(0.0, 2001.0, 200.0))

    def test_unknown_key_rejected_with_location(self):
        with pytest.raises(ConfigError) as info:
            parse_config({"sampler": {"gsvgd": {"omgea": 0.3}}})
        assert info.value.errors[0]["loc"] == "sampler.gsvgd.omgea"

    def test_range_errors(self):
        with pytest.raises(ConfigError) as info:
            parse_config({"sampler": {"gsvgd": {"omega": 1.5}}, "grid": {"dx": -1.0}})
        locs = {e["loc"] for e in info.value.errors}
        assert {"sampler.gsvgd.omega", "grid.dx"} <= locs

    def test_observation_outside_domain(self):
        with pytest.raises(ConfigError) as info:
            parse_config({"observation": {"positions": [0.0, 2500.0]}})
        assert info.value.errors[0]["loc"] == "observation.positions.1"

    def test_grid_must_fit_layers(self):
        with pytest.raises(ConfigError) as info:
            parse_config({"grid": {"dx": 300.0}})
        assert info.value.errors[0]["loc"] == "grid.dx"

    def test_missing_compare_run(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config({"compare": {"runs": ["nope"]}}, base_dir=tmp_path)

    def test_missing_file_and_bad_yaml(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.yaml")
        bad = tmp_path / "bad.yaml"
        bad.write_text("kind: [unclosed\n")
        with pytest.raises(ConfigError):
            load_config(bad)

    def test_hash_ignores_output_and_workers(self):
        a = parse_config({})
        b = parse_config({"output_dir": "elsewhere", "workers": 3})
        c = parse_config({"seed": 4})
        assert config_hash(a) == config_hash(b) != config_hash(c)

    def test_overrides_revalidate(self):
        cfg = parse_config({})
        assert cfg.with_overrides(seed=7, output_dir=None).seed == 7
        with pytest.raises(Exception):
            cfg.with_overrides(workers=0)


class TestIO:
    def test_csv_roundtrip(self, tmp_path):
        write_csv(tmp_path / "a.csv", ["x", "y"], [[0.1, 2], [1 / 3, 5]], header={"seed": "3"})
        head, cols, rows = read_csv(tmp_path / "a.csv")
        assert head == {"seed": "3"} and cols == ["x", "y"]
        assert float(rows[1][0]) == 1 / 3

    def test_atomic_write_leaves_no_temp(self, tmp_path):
        atomic_write_text(tmp_path / "sub" / "f.txt", "hello")
        assert (tmp_path / "sub" / "f.txt").read_text() == "hello"
        assert [p.name for p in (tmp_path / "sub").iterdir()] == ["f.txt"]

    def test_strip_timestamp(self, tmp_path):
        write_json(tmp_path / "a.json", {"v": 1}, header={"generated": "now", "seed": "0"})
        text = strip_timestamp((tmp_path / "a.json").read_text())
        assert "generated" not in text and '"seed"' in text
        assert strip_timestamp("# generated: x\n# seed: 1\na\n") == "# seed: 1\na\n"

    def test_json_numpy(self, tmp_path):
        write_json(tmp_path / "a.json", {"arr": np.arange(3), "x": np.float64(0.5)})
        body = json.loads((tmp_path / "a.json").read_text())
        assert body["arr"] == [0, 1, 2] and body["x"] == 0.5


class TestCli:
    def test_validate(self, tmp_path, capsys):
        code, out, _ = run_cli(["validate-config", "--config", write_cfg(tmp_path / "c.yaml", {})], capsys)
        assert code == 0
        body = json.loads(out)
        assert body["valid"] and len(body["observation_positions"]) == 11

    def test_config_error_exit_code(self, tmp_path, capsys):
        path = write_cfg(tmp_path / "c.yaml", {"sampler": {"particles": 1}})
        code, _, err = run_cli(["validate-config", "--config", path], capsys)
        assert code == 2
        body = json.loads(err)
        assert body["error"]["type"] == "ConfigError"
        assert body["error"]["details"][0]["loc"] == "sampler.particles"

    def test_zero_source_gives_zero_observations(self, tmp_path, capsys):
        cfg = {"source": {"kind": "zero"}, "forward": {"studies": False}}
        path = write_cfg(tmp_path / "c.yaml", cfg)
        code, _, _ = run_cli(["run-forward", "--config", path, "--out", str(tmp_path / "o")], capsys)
        assert code == 0
        _, cols, rows = read_csv(tmp_path / "o" / "forward" / "observations_clean.csv")
        assert cols[0] == "time"
        assert all(float(v) == 0.0 for r in rows for v in r[1:])

    def test_forward_outputs(self, tmp_path, capsys):
        path = write_cfg(tmp_path / "c.yaml", FAST)
        code, out, _ = run_cli(["run-forward", "--config", path, "--out", str(tmp_path / "o")], capsys)
        assert code == 0
        d = tmp_path / "o" / "forward"
        for name in ["config.json", "observations_noisy.csv", "derivative_study.csv",
                     "derivative_summary.json", "boundary_study.csv", "boundary_summary.json"]:
            assert (d / name).exists(), name
        head, _, _ = read_csv(d / "observations_noisy.csv")
        assert head["config_hash"] == config_hash(load_config(path))

    def test_inference_baseline_compare(self, tmp_path, capsys):
        out = tmp_path / "o"
        path = write_cfg(tmp_path / "c.yaml", FAST)
        assert main(["run-inference", "--config", path, "--out", str(out)]) == 0
        assert main(["run-baseline", "--config", path, "--out", str(out)]) == 0
        capsys.readouterr()
        summary = json.loads((out / "inference" / "summary.json").read_text())
        assert summary["method"] == "gsvgd" and len(summary["mode"]) == 2
        assert (out / "baseline" / "chain.csv").exists()
        cmp_cfg = dict(FAST, compare={"runs": ["o/inference", "o/inference", "o/baseline"]})
        cpath = write_cfg(tmp_path / "cmp.yaml", cmp_cfg)
        code, _, _ = run_cli(["run-compare", "--config", cpath, "--out", str(out)], capsys)
        assert code == 0
        _, cols, rows = read_csv(out / "compare" / "budget_table.csv")
        diffs = [float(r[cols.index("loss_minus_first")]) for r in rows]
        assert all(d == 0.0 for d in diffs)
        _, cols, rows = read_csv(out / "compare" / "final_losses.csv")
        assert {r[cols.index("method")] for r in rows} == {"gsvgd", "rwm"}

    def test_low_contrast_sweep(self, tmp_path, capsys):
        path = write_cfg(tmp_path / "c.yaml", FAST_LC)
        code, _, _ = run_cli(["run-inference", "--config", path, "--out", str(tmp_path / "o")], capsys)
        assert code == 0
        d = tmp_path / "o" / "inference"
        _, cols, rows = read_csv(d / "sweep_summary.csv")
        assert [int(r[cols.index("degree")]) for r in rows] == [0, 1]
        _, cols, rows = read_csv(d / "k1_omega1" / "bands.csv")
        assert cols == ["x", "speed_true", "speed_q05", "speed_q50", "speed_q95"]
        q = np.array([[float(v) for v in r[2:]] for r in rows])
        assert np.all(q[:, 0] <= q[:, 1]) and np.all(q[:, 1] <= q[:, 2])

    def test_rwm_method_rejected_by_inference(self, tmp_path, capsys):
        path = write_cfg(tmp_path / "c.yaml", dict(FAST, sampler={"method": "rwm"}))
        code, _, err = run_cli(["run-inference", "--config", path, "--out", str(tmp_path / "o")], capsys)
        assert code == 1
        assert "error" in json.loads(err)

    def test_deterministic_reruns(self, tmp_path, capsys):
        path = write_cfg(tmp_path / "c.yaml", FAST_LC)
        for name, workers in [("a", "1"), ("b", "2")]:
            assert main(["run-inference", "--config", path, "--out", str(tmp_path / name),
                         "--workers", workers]) == 0
        capsys.readouterr()
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert files
        for rel in files:
            a = strip_timestamp((tmp_path / "a" / rel).read_text())
            b = strip_timestamp((tmp_path / "b" / rel).read_text())
            assert a == b, str(rel)
