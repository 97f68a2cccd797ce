import json
import subprocess
import sys

import pytest

from gridloc.cli import main
from gridloc.config import DEFAULTS, ConfigError, build_config, bundled_default_path, load_config
from gridloc.evaluation import Detection, GroundTruth, record_line
from gridloc.geometry import Box

SMALL = {
    "scenes": {"count": 4},
    "nms_bench": {"count": 3},
    "sample_stats": {"trials": 200},
}


@pytest.fixture
def small_config(tmp_path):
    p = tmp_path / "small.json"
    p.write_text(json.dumps(SMALL))
    return p


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


class TestConfig:
    def test_bundled_default_matches_builtin(self):
        assert json.loads(bundled_default_path().read_text()) == DEFAULTS

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError) as exc:
            build_config({"scenes": {"cuont": 3}})
        assert exc.value.key == "scenes.cuont"

    def test_bad_variant(self):
        with pytest.raises(ConfigError) as exc:
            build_config({"variants": [{"heatmap_resolution": 27}]})
        assert exc.value.key == "variants[0]"

    def test_duplicate_variants(self):
        with pytest.raises(ConfigError):
            build_config({"variants": [{}, {}]})

    def test_seed_flows_into_noise(self):
        assert build_config(seed=42).noise.seed == 42

    def test_distribution_keys(self):
        with pytest.raises(ConfigError) as exc:
            build_config({"sample_stats": {"distribution": {"kind": "lognormal", "median": 5}}})
        assert exc.value.key == "sample_stats.distribution.sigma"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.json")


class TestSimulate:
    def test_writes_outputs(self, capsys, tmp_path, small_config):
        code, out, _ = run(capsys, "simulate", "--config", small_config, "--out", tmp_path / "o")
        assert code == 0
        report = json.loads((tmp_path / "o" / "metrics.json").read_text())
        assert set(report["variants"]) == {"quarter@28", "whole@56", "whole@28"}
        assert report["seed"] == 0 and report["config"]["scenes"]["count"] == 4
        assert (tmp_path / "o" / "proposals.csv").read_text().startswith("variant,")
        assert "quarter@28" in out

    def test_byte_identical_reruns(self, capsys, tmp_path, small_config):
        blobs = []
        for _ in range(2):
            assert run(capsys, "simulate", "--config", small_config, "--seed", 7, "--out", tmp_path)[0] == 0
            blobs.append((tmp_path / "metrics.json").read_bytes())
        assert blobs[0] == blobs[1]

    def test_threads_env_same_output(self, capsys, tmp_path, small_config, monkeypatch):
        run(capsys, "simulate", "--config", small_config, "--out", tmp_path)
        single = (tmp_path / "metrics.json").read_bytes()
        monkeypatch.setenv("GRIDLOC_THREADS", "0")
        run(capsys, "simulate", "--config", small_config, "--out", tmp_path)
        assert (tmp_path / "metrics.json").read_bytes() == single

    def test_bad_threads_env(self, capsys, small_config, monkeypatch, tmp_path):
        monkeypatch.setenv("GRIDLOC_THREADS", "many")
        assert run(capsys, "simulate", "--config", small_config, "--out", tmp_path)[0] == 2

    def test_missing_config(self, capsys, tmp_path):
        code, _, err = run(capsys, "simulate", "--config", tmp_path / "missing.json")
        assert code == 2 and "not found" in err

    def test_invalid_json(self, capsys, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{")
        assert run(capsys, "simulate", "--config", p)[0] == 2

    def test_unknown_key_exit(self, capsys, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"noise": {"sigma": 1}}))
        code, _, err = run(capsys, "simulate", "--config", p)
        assert code == 2 and "noise.sigma" in err

    def test_unwritable_output(self, capsys, tmp_path, small_config):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        code, _, err = run(capsys, "simulate", "--config", small_config, "--out", blocker / "sub")
        assert code == 3 and "I/O error" in err

    def test_json_stdout(self, capsys, tmp_path, small_config):
        code, out, _ = run(capsys, "simulate", "--config", small_config, "--out", tmp_path, "--json")
        assert code == 0 and "baseline" in json.loads(out)


class TestFlops:
    def test_text(self, capsys):
        code, out, _ = run(capsys, "flops")
        assert code == 0
        ratio = float(out.strip().splitlines()[-1].split()[-1])
        assert ratio < 1

    def test_json(self, capsys, tmp_path):
        code, out, _ = run(capsys, "flops", "--json", "--out", tmp_path)
        data = json.loads(out)
        assert code == 0 and data["mac_ratio"] < 0.5
        assert data["plus"]["total_macs"] == 1_212_757_056
        assert data["group_violations"] == {"plus": [], "original": []}
        assert json.loads((tmp_path / "flops.json").read_text()) == data

    def test_bad_channels(self, capsys):
        code, _, err = run(capsys, "flops", "--channels", 100)
        assert code == 2 and "multiples of the number of grid points" in err


class TestOtherCommands:
    def test_nms_bench(self, capsys, tmp_path, small_config):
        code, out, _ = run(capsys, "nms-bench", "--config", small_config, "--out", tmp_path, "--json")
        summary = json.loads(out)
        assert code == 0 and summary["scenes"] == 3
        assert summary["scenes_plus_strictly_fewer"] == summary["scenes_with_nontrivial_second_nms"]
        assert (tmp_path / "nms_bench.json").exists()

    def test_sample_stats(self, capsys, tmp_path, small_config):
        code, out, _ = run(capsys, "sample-stats", "--config", small_config, "--out", tmp_path, "--json")
        stats = json.loads(out)
        assert code == 0 and set(stats) == {"across", "per_image"}
        assert json.loads((tmp_path / "sample_stats.json").read_text())["stats"] == stats

    def test_eval_perfect(self, capsys, tmp_path):
        gts = [GroundTruth(0, 0, Box(0, 0, 40, 40)), GroundTruth(1, 2, Box(5, 5, 200, 150))]
        dets = [Detection(g.image_id, g.class_id, 0.8, g.box) for g in gts]
        (tmp_path / "d.jsonl").write_text("\n".join(map(record_line, dets)))
        (tmp_path / "g.jsonl").write_text("\n".join(map(record_line, gts)))
        code, out, _ = run(capsys, "eval", "--dets", tmp_path / "d.jsonl", "--gts", tmp_path / "g.jsonl",
                           "--json", "--out", tmp_path)
        assert code == 0 and json.loads(out)["ap"] == 1.0
        assert (tmp_path / "eval.json").exists()

    def test_eval_missing_file(self, capsys, tmp_path):
        code = run(capsys, "eval", "--dets", tmp_path / "x", "--gts", tmp_path / "y")[0]
        assert code == 3

    def test_eval_bad_record(self, capsys, tmp_path):
        (tmp_path / "d.jsonl").write_text("{}\n")
        (tmp_path / "g.jsonl").write_text("")
        code = run(capsys, "eval", "--dets", tmp_path / "d.jsonl", "--gts", tmp_path / "g.jsonl")[0]
        assert code == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "gridloc", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("gridloc ")


def test_usage_error_exit_code():
    proc = subprocess.run([sys.executable, "-m", "gridloc", "frobnicate"], capture_output=True, text=True)
    assert proc.returncode == 2
