import json
import subprocess
import sys
from pathlib import Path

import pytest

from inbo.bench import cli, problems

TINY = {
    "bm": {"n_paths": 100, "step_dt": 0.005, "time_grid": [0.02, 0.1, 0.5], "seed": 0},
    "bo": {"n_iterations": 3},
}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(TINY))
    return str(path)


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def error_of(err):
    body = json.loads(err)
    assert set(body) == {"error", "message"}
    return body["error"]


class TestValidate:
    @pytest.mark.parametrize("name,n,m", [("ushape", 285, 20), ("torus", 600, 19), ("sea", 485, 42)])
    def test_bundled(self, capsys, name, n, m):
        code, out, _ = run(capsys, "validate", "--problem", name)
        body = json.loads(out)
        assert code == 0
        assert body["n_grid"] == n and body["n_inducing"] == m
        assert body["optimum_ties"] == 0 and body["valid"]

    def test_unknown_problem(self, capsys):
        code, _, err = run(capsys, "validate", "--problem", "atlantis")
        assert code == 7 and error_of(err) == "input"

    def test_ingestion_error(self, capsys, tmp_path):
        (tmp_path / "b.csv").write_text("ring_id,x,y\n0,0,0\n0,1,0\n0,1,1\n0,0,1\n")
        (tmp_path / "g.csv").write_text("x,y,value,is_inducing\n0.5,0.5,1,1\n2,2,1,0\n")
        code, _, err = run(capsys, "validate", "--problem", f"{tmp_path / 'b.csv'},{tmp_path / 'g.csv'}")
        assert code == 11 and error_of(err) == "ingestion"


class TestSimulate:
    def test_writes_one_cache_file_per_inducing_point(self, capsys, config, tmp_path):
        cache = tmp_path / "cache"
        code, out, _ = run(capsys, "simulate", "--problem", "ushape", "--config", config, "--cache", str(cache))
        assert code == 0
        assert json.loads(out)["n_ensembles"] == 20
        assert len(list(cache.glob("*.npz"))) == 20


class TestRun:
    @pytest.mark.parametrize("method", ["in_bo", "tra_bo"])
    def test_trace_file(self, capsys, config, tmp_path, method):
        code, out, _ = run(capsys, "run", "--problem", "ushape", "--method", method, "--seed", "2",
                           "--config", config, "--out", str(tmp_path / "o"), "--cache", str(tmp_path / "c"))
        assert code == 0
        body = json.loads(out)
        lines = (tmp_path / "o" / f"{method}_seed2.csv").read_text().splitlines()
        assert lines[0] == "iteration,grid_index,y,best_index,best_value"
        assert len(lines) == 1 + 3 + 3
        assert body["best_index"] == int(lines[-1].split(",")[3])

    def test_bad_method_is_a_usage_error(self, capsys, tmp_path):
        code, _, err = run(capsys, "run", "--problem", "ushape", "--method", "grid", "--out", str(tmp_path))
        assert code == 64 and error_of(err) == "usage"


class TestExperiment:
    def test_outputs(self, capsys, config, tmp_path):
        out_dir = tmp_path / "exp"
        code, out, _ = run(capsys, "experiment", "--problem", "ushape", "--seeds", "2", "--config", config,
                           "--out", str(out_dir), "--cache", str(tmp_path / "c"))
        assert code == 0
        body = json.loads(out)
        assert set(body["success_rate"]) == {"in_bo", "tra_bo"}
        report = (out_dir / "report.csv").read_text().splitlines()
        assert report[0] == "method,seed,best_value,found_optimum,n_evals_to_optimum"
        assert len(report) == 5
        assert len(list((out_dir / "traces").glob("*.csv"))) == 4
        assert (out_dir / "summary.csv").exists() and (out_dir / "curves.csv").exists()

    def test_byte_identical_reruns(self, capsys, config, tmp_path):
        texts = []
        for k in range(2):
            out_dir = tmp_path / f"e{k}"
            assert run(capsys, "experiment", "--problem", "ushape", "--methods", "tra_bo", "--seeds", "2",
                       "--config", config, "--out", str(out_dir))[0] == 0
            texts.append((out_dir / "report.csv").read_bytes())
        assert texts[0] == texts[1]


class TestConfig:
    def test_unknown_section(self, capsys, tmp_path):
        p = tmp_path / "c.json"
        p.write_text('{"plot": {}}')
        code, _, err = run(capsys, "validate", "--problem", "ushape", "--config", str(p))
        assert code == 7 and error_of(err) == "input"

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text('{"bm": {"n_path": 5}}')
        with pytest.raises(cli.InputError):
            cli.load_config(p)

    def test_malformed_json(self, capsys, tmp_path):
        p = tmp_path / "c.json"
        p.write_text('{"bm": \n')
        code, _, err = run(capsys, "validate", "--problem", "ushape", "--config", str(p))
        assert code == 12 and error_of(err) == "parse"

    def test_invalid_bm_value(self, capsys, tmp_path):
        p = tmp_path / "c.json"
        p.write_text('{"bm": {"step_dt": 0.003, "time_grid": [0.01]}}')
        code, _, err = run(capsys, "simulate", "--problem", "ushape", "--config", str(p), "--cache", str(tmp_path))
        assert code == 7 and error_of(err) == "input"

    def test_bundled_default_config_loads(self):
        cfg = cli.load_config(Path(problems.__file__).parent / "data" / "default_config.json")
        assert cfg["bm"]["n_paths"] == 10_000


def test_missing_subcommand(capsys):
    code, _, err = run(capsys)
    assert code == 64 and error_of(err) == "usage"


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "inbo.bench.cli", "validate", "--problem", "torus"],
                          capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["kind"] == "BittenTorus"
