import csv
import dataclasses

import numpy as np
import pytest

from ulie import counters
from ulie.datasets import bundled, synthetic_patterns
from ulie.lab import (
    NormalizedBaseline, RunRecord, StackConfig, WeightKind, bench_inference, evaluate,
    norm_propagation, overfit_gap, train_toy, unit_probes, write_bench_csv, write_curves_csv,
    write_norms_csv,
)
from ulie.model import toy6, toy6_free
from ulie.optim import SgdConfig


@pytest.mark.parametrize("seed", range(3))
def test_unitary_stack_preserves_norm(seed):
    probe = unit_probes(32, 1, seed)[0] * 3.0
    rec = norm_propagation(StackConfig(100, 32, seed=seed), probe)
    assert len(rec.norms) == 100
    np.testing.assert_allclose(rec.norms, 3.0, rtol=1e-6)


def test_gaussian_stack_drifts():
    ratios = []
    for seed in range(10):
        rec = norm_propagation(StackConfig(100, 64, WeightKind.GAUSSIAN, 1.0, seed=seed), unit_probes(64, 1, seed)[0])
        ratios.append(rec.ratio)
    med = np.median(ratios)
    assert not 0.1 <= med <= 10


def test_divergence_is_recorded():
    rec = norm_propagation(StackConfig(400, 64, WeightKind.GAUSSIAN, 10.0), unit_probes(64, 1, 0)[0])
    assert rec.diverged_at is not None and rec.diverged_at < 399
    assert len(rec.norms) == rec.diverged_at + 1


@pytest.mark.parametrize("kind", list(WeightKind))
def test_depth_one(kind):
    assert len(norm_propagation(StackConfig(1, 8, kind), unit_probes(8, 1, 0)[0]).norms) == 1


def test_relu_norms_never_grow():
    rec = norm_propagation(StackConfig(50, 16, relu=True), unit_probes(16, 1, 4)[0])
    norms = np.array([1.0] + rec.norms)
    assert np.all(np.diff(norms) <= 1e-12)


def test_bad_stack_config():
    with pytest.raises(ValueError):
        StackConfig(0, 4)
    with pytest.raises(ValueError):
        norm_propagation(StackConfig(1, 4), np.ones(5))


def test_norms_csv(tmp_path):
    rec = RunRecord(norms=[1.0, 0.5])
    write_norms_csv(tmp_path / "n.csv", rec)
    rows = list(csv.reader(open(tmp_path / "n.csv")))
    assert rows == [["layer_index", "norm"], ["0", "1.0"], ["1", "0.5"]]


def test_zero_epochs_is_chance():
    data = bundled("patterns10")
    rec = train_toy(toy6(seed=0), data, epochs=0)
    assert [r[:2] for r in rec.curves] == [(0, "train"), (0, "test")]
    assert abs(rec.metrics["train_acc"] - 0.1) <= 0.05


def test_training_is_deterministic(tmp_path):
    data = synthetic_patterns(n_classes=3, n_train=6, n_test=3)
    blobs = []
    for i in range(2):
        rec = train_toy(toy6(n_classes=3, seed=5), data, epochs=3, batch_size=4, seed=9)
        write_curves_csv(tmp_path / f"c{i}.csv", rec)
        blobs.append((tmp_path / f"c{i}.csv").read_bytes())
    assert blobs[0] == blobs[1]
    assert blobs[0].startswith(b"epoch,split,loss,accuracy")


def test_exp_every_trains():
    data = synthetic_patterns(n_classes=2, size=4, n_train=8, n_test=4)
    rec = train_toy(toy6(n_classes=2), data, epochs=4, batch_size=4, exp_every=3)
    assert rec.diverged_at is None and len(rec.curves) == 10
    with pytest.raises(ValueError):
        train_toy(toy6(), data, exp_every=0)


def test_divergence_aborts_training():
    data = synthetic_patterns(n_classes=2, size=4, n_train=8, n_test=4)
    rec = train_toy(toy6_free(n_classes=2), data, SgdConfig(lr=1e6, momentum=0.0), epochs=20, batch_size=4)
    assert rec.diverged_at is not None


def test_threaded_evaluation_agrees(rng):
    data = bundled()
    net = toy6(seed=2)
    net.head.weight[:] = rng.normal(size=net.head.weight.shape)
    a = evaluate(net, data.test_x, data.test_y, batch=32)
    b = evaluate(net, data.test_x, data.test_y, batch=32, threads=4)
    assert a[1] == b[1] and a[0] == pytest.approx(b[0], rel=1e-12)


def test_identical_splits_have_zero_gap():
    d = synthetic_patterns(n_classes=3, n_train=6, n_test=6)
    d = dataclasses.replace(d, test_x=d.train_x, test_y=d.train_y)
    _, _, gap = overfit_gap(train_toy(toy6(n_classes=3), d, epochs=2, batch_size=6))
    assert abs(gap) < 1e-12


def test_gap_needs_both_splits():
    with pytest.raises(ValueError):
        overfit_gap(RunRecord(curves=[(1, "train", 0.1, 1.0)]))


@pytest.mark.slow
def test_unitary_gap_not_larger_than_free_baseline():
    data = bundled("noisy10")
    gaps = {"unitary": [], "free": []}
    for seed in range(3):
        gaps["unitary"].append(overfit_gap(train_toy(toy6(seed=seed), data, seed=seed))[2])
        gaps["free"].append(overfit_gap(train_toy(toy6_free(seed=seed), data, seed=seed))[2])
    assert np.median(gaps["unitary"]) <= np.median(gaps["free"])


def test_instance_norm_baseline_counts(rng):
    net = toy6(seed=1)
    base = NormalizedBaseline.from_model(net)
    x = rng.normal(size=(2, 1, 8, 8))
    with counters.counting() as ops:
        base.logits(x)
    assert ops["instance_norm"] == 6 and ops["expm"] == 0


def test_cached_variant_normalizes_only_projections(rng):
    net = toy6(seed=1).cache()
    with counters.counting() as ops:
        net.logits(rng.normal(size=(2, 1, 8, 8)))
    assert ops["expm"] == 0 and ops["instance_norm"] == 0
    assert ops["normalize"] == 3  # the three projecting layers only


def test_bench_table(tmp_path, rng):
    rows = bench_inference(toy6(), rng.normal(size=(4, 1, 8, 8)), repeats=5)
    assert [r["variant"] for r in rows] == ["cached_unitary", "conv_instance_norm"]
    assert all(r["p10_us"] <= r["median_us"] <= r["p90_us"] for r in rows)
    write_bench_csv(tmp_path / "b.csv", rows)
    header = (tmp_path / "b.csv").read_text().splitlines()[0]
    assert header == "variant,batch,median_us,p10_us,p90_us"
