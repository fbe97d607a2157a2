import numpy as np
import pytest

import ulie.autograd as ag
from ulie import counters
from ulie.datasets import BUNDLED, bundled, synthetic_patterns
from ulie.lie import LieParams
from ulie.model import TOY6_LAYERS, ConvNet, UnitaryConv, toy6, toy6_free
from ulie.tensor import ShapeError
from ulie.unitary import FilterSpec, WeightCase


def test_toy6_shapes(rng):
    net = toy6()
    assert len(net.convs) == len(TOY6_LAYERS)
    cases = [c.spec.case for c in net.convs]
    assert cases.count(WeightCase.PROJECT) == 3
    out = net.features(rng.normal(size=(2, 1, 8, 8)))
    assert out.shape == (2, 32, 2, 2)
    assert net.logits(rng.normal(size=(2, 1, 8, 8))).shape == (2, 10)


def test_toy6_parameter_count():
    net = toy6()
    lie = sum(c.spec.n_params for c in net.convs)
    assert net.n_parameters() == lie + 32 * 10 + 10
    assert net.n_parameters() == 2148


def test_untrained_logits_are_uniform(rng):
    np.testing.assert_array_equal(toy6().logits(rng.normal(size=(3, 1, 8, 8))), 0.0)


def test_parameters_are_live_references():
    net = toy6()
    p = net.parameters()["conv0.lie"]
    p[0] = 0.123
    assert net.convs[0].lie.values[0] == 0.123


def test_cache_leaves_original_trainable(rng):
    net = toy6()
    cached = net.cache()
    assert cached.cached and net.trainable and not cached.trainable
    assert "conv0.lie" not in cached.parameters()
    with pytest.raises(RuntimeError):
        cached.loss(ag.Tape(), rng.normal(size=(1, 1, 8, 8)), [0])


def test_training_loss_matches_inference(rng):
    net = toy6(seed=1, init_scale=0.5)
    net.head.weight[:] = rng.normal(size=net.head.weight.shape)
    x = rng.normal(size=(3, 1, 8, 8))
    y = np.array([1, 4, 7])
    z = net.logits(x)
    z = z - z.max(axis=1, keepdims=True)
    ref = np.mean(np.log(np.exp(z).sum(axis=1)) - z[np.arange(3), y])
    assert float(net.loss(ag.Tape(), x, y).value) == pytest.approx(ref, abs=1e-12)


def test_isometry_layers_skip_normalization(rng):
    conv = UnitaryConv(FilterSpec(32, 16), lie=LieParams.random(rng, 32, 16))
    with counters.counting() as ops:
        conv.infer(rng.normal(size=(1, 16, 3, 3)))
    assert ops["normalize"] == 0
    proj = UnitaryConv(FilterSpec(4, 1, 3, 3))
    with counters.counting() as ops:
        proj.infer(rng.normal(size=(1, 1, 3, 3)))
    assert ops["normalize"] == 1


def test_mismatched_lie_params_rejected():
    with pytest.raises(ShapeError):
        UnitaryConv(FilterSpec(4, 1, 3, 3), lie=LieParams(4, 4))


def test_free_baseline_shapes(rng):
    net = toy6_free()
    assert net.logits(rng.normal(size=(2, 1, 8, 8))).shape == (2, 10)
    assert "conv0.weight" in net.parameters()


def test_bundled_datasets_are_deterministic():
    for name in BUNDLED:
        a, b = bundled(name), bundled(name)
        np.testing.assert_array_equal(a.train_x, b.train_x)
        np.testing.assert_array_equal(a.test_y, b.test_y)
    d = bundled()
    assert d.n_classes == 10 and d.image_shape == (1, 8, 8)
    with pytest.raises(KeyError):
        bundled("nope")


def test_synthetic_labels_balanced():
    d = synthetic_patterns(n_classes=3, n_train=5, n_test=2)
    assert np.bincount(d.train_y).tolist() == [5, 5, 5]
    assert np.bincount(d.test_y).tolist() == [2, 2, 2]
