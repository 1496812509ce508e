"""The dtp command line: determinism of every command, error exits and the pipeline."""
import json
import subprocess
import sys

import pytest

from dtp.cli import main
from dtp.fileio import read_csv

COMMAND_NAMES = [
    "gen-data", "train", "sample", "sample-regressor", "eval-nll", "eval-nll-flow",
    "eval-mined", "cluster", "interpolate", "render",
]
SMALL = {"scene": {"height": 8, "width": 10}, "train": {"batch_size": 8}}


def run(*argv):
    return main([str(a) for a in argv])


def tree_bytes(path):
    if path.is_file():
        return {"": path.read_bytes()}
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.json"
    cfg.write_text(json.dumps(SMALL))
    assert run("gen-data", "--seed", 7, "--n-train", 24, "--n-test", 4, "--config", cfg, "--out", root / "d.dtpd") == 0
    for kind in ("cvae", "regressor"):
        code = run("train", "--data", root / "d.dtpd", "--model", kind, "--epochs", 2,
                   "--config", cfg, "--history", root / f"{kind}_hist.csv", "--out", root / f"{kind}.dtpc")
        assert code == 0
    return root


def commands(ws):
    data, cvae, reg = ws / "d.dtpd", ws / "cvae.dtpc", ws / "regressor.dtpc"
    cfg = ws / "small.json"
    small_eval = ("--n-samples", 20, "--n-val", 3, "--n-images", 2)
    return {
        "gen-data": ("gen-data", "--seed", 7, "--n-train", 24, "--n-test", 4, "--config", cfg),
        "train": ("train", "--data", data, "--model", "cvae", "--epochs", 1, "--config", cfg),
        "sample": ("sample", "--data", data, "--model", cvae, "--n", 3),
        "sample-regressor": ("sample", "--data", data, "--model", reg, "--n", 2),
        "eval-nll": ("eval-nll", "--data", data, "--model", cvae, *small_eval),
        "eval-nll-flow": ("eval-nll", "--data", data, "--flow", *small_eval),
        "eval-mined": ("eval-mined", "--data", data, "--model", reg, "--n-max", 5, *small_eval),
        "cluster": ("cluster", "--data", data, "--model", cvae, "--n", 30, "--k", 3),
        "interpolate": ("interpolate", "--data", data, "--model", cvae, "--steps", 3),
        "render": ("render", "--data", data, "--image-index", 1),
    }


class TestDeterminism:
    @pytest.mark.parametrize("name", COMMAND_NAMES)
    def test_two_runs_identical(self, workspace, tmp_path, name):
        argv = commands(workspace)[name]
        suffix = ".svg" if name == "render" else ".out"
        a, b = tmp_path / f"a{suffix}", tmp_path / f"b{suffix}"
        assert run(*argv, "--out", a) == 0
        assert run(*argv, "--out", b) == 0
        assert tree_bytes(a) == tree_bytes(b)
        assert tree_bytes(a)


class TestPipeline:
    def test_sample_renders_n_fields(self, workspace, tmp_path):
        out = tmp_path / "s"
        assert run("sample", "--data", workspace / "d.dtpd", "--model", workspace / "cvae.dtpc",
                   "--image-index", 0, "--n", 5, "--out", out) == 0
        assert len(list(out.glob("sample_*.svg"))) == 5
        header, rows = read_csv(out / "samples.csv")
        assert header == ["method", "metric", "n", "value"] and len(rows) == 10

    def test_history_csv(self, workspace):
        header, rows = read_csv(workspace / "cvae_hist.csv")
        assert header == ["epoch", "total", "dir", "mag_x", "mag_y", "kl"]
        assert [r[0] for r in rows] == ["0", "1"]

    def test_eval_nll_rows(self, workspace, tmp_path):
        out = tmp_path / "nll.csv"
        assert run("eval-nll", "--data", workspace / "d.dtpd", "--model", workspace / "regressor.dtpc",
                   "--n-images", 2, "--out", out) == 0
        _, rows = read_csv(out)
        metrics = [r[1] for r in rows]
        assert metrics[:2] == ["nll", "nll_se"] and "h_dir[test]" in metrics

    def test_cluster_outputs(self, workspace, tmp_path):
        out = tmp_path / "c"
        assert run("cluster", "--data", workspace / "d.dtpd", "--model", workspace / "cvae.dtpc",
                   "--n", 30, "--k", 3, "--top", 2, "--out", out) == 0
        assert len(list(out.glob("cluster_*.svg"))) == 2
        assert (out / "clusters.csv").exists()

    def test_gen_data_defaults_to_full_grid(self, tmp_path):
        out = tmp_path / "d.dtpd"
        assert run("gen-data", "--n-train", 1, "--n-test", 0, "--out", out) == 0
        assert b'"height":16' in out.read_bytes().split(b"\n")[1]


class TestErrors:
    def test_missing_model_exits_2(self, workspace, tmp_path, capsys):
        missing = tmp_path / "nope.dtpc"
        assert run("eval-nll", "--data", workspace / "d.dtpd", "--model", missing, "--out", tmp_path / "x.csv") == 2
        assert str(missing) in capsys.readouterr().err

    def test_missing_data_exits_2(self, tmp_path, capsys):
        missing = tmp_path / "nope.dtpd"
        assert run("render", "--data", missing, "--out", tmp_path / "x.svg") == 2
        assert str(missing) in capsys.readouterr().err

    def test_corrupt_data_exits_2(self, tmp_path):
        bad = tmp_path / "bad.dtpd"
        bad.write_bytes(b"garbage")
        assert run("render", "--data", bad, "--out", tmp_path / "x.svg") == 2

    def test_index_out_of_range(self, workspace, tmp_path):
        assert run("render", "--data", workspace / "d.dtpd", "--image-index", 99, "--out", tmp_path / "x.svg") == 2

    @pytest.mark.parametrize("argv", [["frobnicate"], ["render", "--bogus"], []])
    def test_usage_errors_exit_1(self, argv):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 1

    def test_bad_thread_count(self, workspace, tmp_path, monkeypatch):
        monkeypatch.setenv("DTP_THREADS", "many")
        assert run("render", "--data", workspace / "d.dtpd", "--out", tmp_path / "x.svg") == 1


class TestProcess:
    def test_entry_point_with_thread_limit(self, workspace, tmp_path):
        out = tmp_path / "r.svg"
        env = {"DTP_THREADS": "1", "PATH": "/usr/bin:/bin"}
        proc = subprocess.run(
            [sys.executable, "-m", "dtp.cli", "render", "--data", str(workspace / "d.dtpd"), "--out", str(out)],
            env=env, capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        assert out.read_text().startswith("<svg")
