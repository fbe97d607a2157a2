import csv
import json
import subprocess
import sys

import pytest

from ulie.cli import main, run_checks


def test_check_passes(tmp_path, capsys):
    assert main(["check", "--dim", "16", "--cols", "4", "--trials", "3", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 5 and "FAIL" not in out
    manifest = (tmp_path / "manifest-check.txt").read_text()
    assert "dim=16" in manifest and "config_hash=" in manifest


def test_check_degenerate_dimension(tmp_path):
    assert main(["check", "--dim", "1", "--cols", "1", "--out", str(tmp_path)]) == 0


def test_check_square_has_no_projection_rows():
    names = [r[0] for r in run_checks(6, 6, 2)]
    assert names == ["orthogonality", "isometry", "gradient"]


@pytest.mark.parametrize("argv", [
    ["check", "--dim", "4", "--cols", "0"],
    ["check", "--dim", "4", "--cols", "5"],
    ["check", "--dim", "4"],
    ["stability", "--depth", "0"],
    ["stability", "--depth", "3", "--kind", "orthogonal"],
    ["train", "--epochs", "-1"],
    ["train", "--dataset", "cifar"],
    ["bench", "--threads", "0"],
    ["frobnicate"],
])
def test_usage_errors_exit_2(argv, tmp_path):
    with pytest.raises(SystemExit) as e:
        main(argv + ["--out", str(tmp_path)])
    assert e.value.code == 2


def test_stability_unitary(tmp_path, capsys):
    assert main(["stability", "--depth", "20", "--width", "8", "--out", str(tmp_path)]) == 0
    line = capsys.readouterr().out
    ratio = float(line.split("ratio=")[1].split()[0])
    assert abs(ratio - 1) < 1e-6
    rows = list(csv.reader(open(tmp_path / "norms.csv")))
    assert rows[0] == ["layer_index", "norm"] and len(rows) == 21


def test_stability_divergence_reported(tmp_path, capsys):
    argv = ["stability", "--depth", "400", "--kind", "gaussian", "--std", "10", "--out", str(tmp_path)]
    assert main(argv) == 0
    err = capsys.readouterr().err
    assert "diverged_at_layer" in json.loads(err.splitlines()[0])


def _train(out, *extra):
    return main(["train", "--dataset", "patterns2", "--epochs", "2", "--seed", "4", "--out", str(out), *extra])


def test_train_export_bench_pipeline(tmp_path, capsys):
    assert _train(tmp_path) == 0
    assert "train_acc=" in capsys.readouterr().out
    header = (tmp_path / "curves.csv").read_text().splitlines()[0]
    assert header == "epoch,split,loss,accuracy"

    assert main(["export", "--mode", "dense", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "reduction=" in out and (tmp_path / "model.dense.ulie").exists()
    assert "input:" in (tmp_path / "manifest-export.txt").read_text()

    dense = tmp_path / "model.dense.ulie"
    assert main(["export", "--mode", "lie", "--model", str(dense), "--out", str(tmp_path)]) == 1
    assert "already cached" in capsys.readouterr().err

    assert main(["bench", "--model", str(dense), "--repeats", "3", "--batch", "2", "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "bench.csv")))
    assert [r["variant"] for r in rows] == ["cached_unitary", "conv_instance_norm"]


def test_train_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _train(a) == 0 and _train(b) == 0
    assert (a / "curves.csv").read_bytes() == (b / "curves.csv").read_bytes()
    assert (a / "model.ulie").read_bytes() == (b / "model.ulie").read_bytes()


def test_missing_model_file(tmp_path, capsys):
    assert main(["export", "--mode", "dense", "--model", str(tmp_path / "nope.ulie"), "--out", str(tmp_path)]) == 1
    assert "nope.ulie" in json.loads(capsys.readouterr().err)["error"]


def test_corrupt_model_file(tmp_path, capsys):
    bad = tmp_path / "bad.ulie"
    bad.write_bytes(b"NOPE" + bytes(20))
    assert main(["export", "--mode", "dense", "--model", str(bad), "--out", str(tmp_path)]) == 1
    assert "magic" in capsys.readouterr().err


def test_global_flags_before_subcommand(tmp_path):
    assert main(["--seed", "3", "--out", str(tmp_path), "check", "--dim", "3", "--cols", "2"]) == 0
    assert "seed=3" in (tmp_path / "manifest-check.txt").read_text()


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "ulie", "check", "--dim", "4", "--cols", "2",
                        "--trials", "1", "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
