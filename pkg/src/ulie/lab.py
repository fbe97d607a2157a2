"""Desk-scale experiments: activation norms across depth, toy training,
train/test loss gap, and cached-inference timing against a per-sample
normalization baseline.
"""
from __future__ import annotations

import csv
import enum
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import counters
from .autograd import Tape
from .conv import ConvGeometry, conv_toeplitz
from .datasets import Dataset
from .lie import LieParams, expm, lie_to_skew
from .model import ConvNet
from .optim import SgdConfig, sgd_step
from .tensor import l2_norm, make_rng, random_gaussian
from .unitary import reshape_to_filters


class WeightKind(enum.Enum):
    UNITARY = "unitary"
    GAUSSIAN = "gaussian"
    GAUSSIAN_NORMALIZED = "gaussian_normalized"


@dataclass(frozen=True)
class StackConfig:
    depth: int
    width: int
    weight_kind: WeightKind = WeightKind.UNITARY
    std: float = 1.0
    relu: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.depth < 1 or self.width < 1:
            raise ValueError("depth and width must be >= 1")


@dataclass
class RunRecord:
    norms: list = field(default_factory=list)  # norm after each layer
    initial_norm: float = 0.0
    diverged_at: int | None = None
    timings: dict = field(default_factory=dict)
    curves: list = field(default_factory=list)  # (epoch, split, loss, accuracy)
    metrics: dict = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        return self.norms[-1] / self.initial_norm if self.norms else 1.0


def _layer_weights(cfg: StackConfig, rng):
    m = cfg.width
    for _ in range(cfg.depth):
        if cfg.weight_kind is WeightKind.UNITARY:
            lp = LieParams.random(rng, m, m)
            yield expm(lie_to_skew(lp))
        elif cfg.weight_kind is WeightKind.GAUSSIAN:
            yield random_gaussian(rng, m, m, cfg.std)
        else:
            yield random_gaussian(rng, m, m, 1.0 / np.sqrt(m))


def norm_propagation(cfg: StackConfig, probe) -> RunRecord:
    """Push ``probe`` through ``depth`` square layers, recording the Euclidean
    norm after each.  A non-finite norm stops the run and sets ``diverged_at``."""
    x = np.asarray(probe, dtype=np.float64).ravel()
    if x.size != cfg.width:
        raise ValueError(f"probe length {x.size} != width {cfg.width}")
    rec = RunRecord(initial_norm=l2_norm(x))
    rng = make_rng(cfg.seed)
    t0 = time.perf_counter()
    with np.errstate(over="ignore", invalid="ignore"):
        for i, w in enumerate(_layer_weights(cfg, rng)):
            x = w @ x
            if cfg.relu:
                x = np.maximum(x, 0.0)
            n = l2_norm(x)
            rec.norms.append(n)
            if not np.isfinite(n):
                rec.diverged_at = i
                break
    rec.timings["propagate_s"] = time.perf_counter() - t0
    return rec


def unit_probes(width: int, n: int, seed: int) -> np.ndarray:
    """``n`` Gaussian-direction probes of unit norm."""
    p = make_rng(seed).normal(size=(n, width))
    return p / np.linalg.norm(p, axis=1, keepdims=True)


def write_norms_csv(path, rec: RunRecord) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer_index", "norm"])
        for i, n in enumerate(rec.norms):
            w.writerow([i, repr(float(n))])


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def evaluate(model: ConvNet, x, y, batch: int = 256, threads: int = 1) -> tuple[float, float]:
    """Mean cross-entropy and accuracy without recording a tape.

    With ``threads > 1`` the batches run concurrently; the summation order
    then no longer matches the serial run bit for bit.
    """
    def part(s):
        z = model.logits(x[s : s + batch])
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        yy = y[s : s + batch]
        return -logp[np.arange(len(yy)), yy].sum(), int((z.argmax(axis=1) == yy).sum())

    starts = range(0, len(y), batch)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(part, starts))
    else:
        parts = [part(s) for s in starts]
    return sum(p[0] for p in parts) / len(y), sum(p[1] for p in parts) / len(y)


def train_toy(
    model: ConvNet,
    data: Dataset,
    cfg: SgdConfig = SgdConfig(),
    epochs: int = 50,
    batch_size: int = 32,
    seed: int = 0,
    exp_every: int = 1,
    threads: int = 1,
) -> RunRecord:
    """Minibatch SGD on ``data``.  Curves get one train and one test row per
    epoch, epoch 0 being the untrained model.  ``exp_every > 1`` reuses each
    layer's exponential for that many steps."""
    if exp_every < 1:
        raise ValueError("exp_every must be >= 1")
    rng = make_rng(seed)
    rec = RunRecord()
    t0 = time.perf_counter()

    def log(epoch):
        for split, x, y in (("train", data.train_x, data.train_y), ("test", data.test_x, data.test_y)):
            loss, acc = evaluate(model, x, y, threads=threads)
            rec.curves.append((epoch, split, loss, acc))
        return rec.curves[-2][2]

    log(0)
    with np.errstate(over="ignore", invalid="ignore"):
        _run_epochs(model, data, cfg, epochs, batch_size, rng, exp_every, rec, log)
    rec.timings["train_s"] = time.perf_counter() - t0
    if rec.diverged_at is not None:
        return rec
    last = {split: (loss, acc) for _, split, loss, acc in rec.curves[-2:]}
    rec.metrics.update(
        train_loss=last["train"][0], train_acc=last["train"][1],
        test_loss=last["test"][0], test_acc=last["test"][1],
    )
    return rec


def _run_epochs(model, data, cfg, epochs, batch_size, rng, exp_every, rec, log):
    state: dict = {}
    step = 0
    n = len(data.train_y)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        for s in range(0, n, batch_size):
            idx = order[s : s + batch_size]
            tape = Tape()
            loss = model.loss(tape, data.train_x[idx], data.train_y[idx], reuse_exp=step % exp_every != 0)
            if not np.isfinite(loss.value):
                rec.diverged_at = epoch
                return
            grads = tape.backward(loss)
            sgd_step(model.parameters(), grads, state, cfg, epoch - 1)
            step += 1
        if not np.isfinite(log(epoch)):
            rec.diverged_at = epoch
            break


def write_curves_csv(path, rec: RunRecord) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "split", "loss", "accuracy"])
        for epoch, split, loss, acc in rec.curves:
            w.writerow([epoch, split, repr(float(loss)), repr(float(acc))])


def overfit_gap(rec: RunRecord) -> tuple[float, float, float]:
    """Final-epoch ``(train_loss, test_loss, test_loss - train_loss)``."""
    last = {}
    for epoch, split, loss, _ in rec.curves:
        last[split] = loss
    if "train" not in last or "test" not in last:
        raise ValueError("run has no train/test curves")
    return last["train"], last["test"], last["test"] - last["train"]


# ---------------------------------------------------------------------------
# inference timing
# ---------------------------------------------------------------------------


def instance_norm(x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    counters.bump("instance_norm")
    mu = x.mean(axis=(2, 3), keepdims=True)
    var = x.var(axis=(2, 3), keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


@dataclass
class NormalizedBaseline:
    """Same convolutions as a cached unitary net, but with plain filters and a
    per-sample, per-channel normalization after each conv."""

    filters: list  # (filters, stride, padding)
    head: object = None

    @classmethod
    def from_model(cls, model: ConvNet) -> "NormalizedBaseline":
        cached = model.cache()
        filt = [(reshape_to_filters(c.weight, c.spec), c.stride, c.padding) for c in cached.convs]
        return cls(filt, cached.head)

    def logits(self, x: np.ndarray) -> np.ndarray:
        for f, stride, pad in self.filters:
            g = ConvGeometry(f.shape[1], x.shape[2], x.shape[3], f.shape[2], f.shape[3], stride, pad, f.shape[0])
            x = np.maximum(instance_norm(conv_toeplitz(x, f, g)), 0.0)
        p = x.mean(axis=(2, 3))
        return p if self.head is None else self.head.infer(p)


def bench_inference(model: ConvNet, batch: np.ndarray, repeats: int = 1000) -> list[dict]:
    """Median/p10/p90 wall-clock per image for the cached unitary net and the
    normalized baseline.  Runs are interleaved so drift hits both equally."""
    variants = {
        "cached_unitary": model.cache(),
        "conv_instance_norm": NormalizedBaseline.from_model(model),
    }
    times = {name: [] for name in variants}
    for v in variants.values():
        v.logits(batch)  # warm-up
    for _ in range(repeats):
        for name, v in variants.items():
            t0 = time.perf_counter()
            v.logits(batch)
            times[name].append(time.perf_counter() - t0)
    rows = []
    n = len(batch)
    for name, t in times.items():
        us = np.asarray(t) * 1e6 / n
        rows.append(dict(
            variant=name, batch=n, median_us=float(np.median(us)),
            p10_us=float(np.percentile(us, 10)), p90_us=float(np.percentile(us, 90)),
        ))
    return rows


def write_bench_csv(path, rows: list[dict]) -> None:
    cols = ["variant", "batch", "median_us", "p10_us", "p90_us"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({c: r[c] for c in cols})
