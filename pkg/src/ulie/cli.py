"""Command line for ulie: invariant checks, experiments, benchmarks, export."""
from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__, counters, lab, store
from .datasets import BUNDLED, bundled
from .gradcheck import SCALE_FLOOR
from .lie import ExpmConfig, LieParams, expm, expm_trace, expm_backward, lie_to_skew, skew_adjoint
from .model import toy6
from .optim import SgdConfig
from .tensor import make_rng
from .unitary import FilterSpec, apply_weight, build_weight

ARCHS = {"toy6": toy6}


def _git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def write_manifest(out: Path, args: argparse.Namespace, inputs=()) -> None:
    out.mkdir(parents=True, exist_ok=True)
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    lines = [f"ulie_version={__version__}", f"python={platform.python_version()}",
             f"numpy={np.__version__}"]
    lines += [f"{k}={v}" for k, v in cfg.items()]
    lines.append(f"config_hash={_git_blob_hash(json.dumps(cfg, sort_keys=True, default=str).encode())}")
    for p in inputs:
        p = Path(p)
        lines.append(f"input:{p}={_git_blob_hash(p.read_bytes())}")
    (out / f"manifest-{args.command}.txt").write_text("\n".join(lines) + "\n")


def _fail(record: dict) -> None:
    print(json.dumps(record, sort_keys=True), file=sys.stderr)


def _expm_cfg(args) -> ExpmConfig:
    return ExpmConfig.strict() if args.strict_taylor else ExpmConfig()


# ---------------------------------------------------------------------------
# check
# ---------------------------------------------------------------------------


def run_checks(dim: int, cols: int, trials: int, seed: int = 0, cfg: ExpmConfig = ExpmConfig()):
    """Orthogonality, isometry, projection and gradient invariants.

    Returns ``[(name, measured, tolerance, passed)]``.
    """
    rng = make_rng(seed)
    worst = {"orthogonality": 0.0, "isometry": 0.0, "projection_unit": 0.0,
             "projection_contraction": 0.0, "gradient": 0.0}
    project = dim > cols
    for _ in range(trials):
        lp = LieParams.random(rng, dim, cols, -5.0, 5.0)
        u = expm(lie_to_skew(lp), cfg)
        worst["orthogonality"] = max(worst["orthogonality"], np.abs(u.T @ u - np.eye(dim)).max())

        x = rng.normal(size=(32, cols))
        w = build_weight(lp, FilterSpec(dim, cols), cfg)
        y = apply_weight(w, x)
        rel = np.abs(np.linalg.norm(y, axis=1) / np.linalg.norm(x, axis=1) - 1.0).max()
        worst["isometry"] = max(worst["isometry"], rel)

        if project:
            spec = FilterSpec(cols, dim)
            w = build_weight(lp, spec, cfg)
            x = rng.normal(size=(32, dim))
            raw = x @ w.w
            excess = (np.linalg.norm(raw, axis=1) - np.linalg.norm(x, axis=1)).max()
            worst["projection_contraction"] = max(worst["projection_contraction"], excess)
            unit = np.abs(np.linalg.norm(apply_weight(w, x), axis=1) - 1.0).max()
            worst["projection_unit"] = max(worst["projection_unit"], unit)

    # gradient of sum(G * U) w.r.t. a few packed parameters, by central differences
    if lp.size:
        lp = LieParams.random(rng, dim, cols, -1.0, 1.0)
        g_up = rng.normal(size=(dim, dim))
        trace = expm_trace(lie_to_skew(lp), cfg)
        analytic = skew_adjoint(dim, cols, expm_backward(trace, g_up))
        h = 1e-6
        for i in rng.choice(lp.size, size=min(8, lp.size), replace=False):
            p, q = lp.copy(), lp.copy()
            p.values[i] += h
            q.values[i] -= h
            num = ((expm(lie_to_skew(p), cfg) - expm(lie_to_skew(q), cfg)) * g_up).sum() / (2 * h)
            err = abs(num - analytic[i]) / max(abs(num), abs(analytic[i]), SCALE_FLOOR)
            worst["gradient"] = max(worst["gradient"], err)

    tolerances = {"orthogonality": 1e-10, "isometry": 1e-10, "projection_unit": 1e-12,
                  "projection_contraction": 1e-12, "gradient": 1e-5}
    rows = []
    for name, tol in tolerances.items():
        if name.startswith("projection") and not project:
            continue
        ok = worst[name] < tol if name != "projection_contraction" else worst[name] <= tol
        rows.append((name, float(worst[name]), tol, bool(ok)))
    return rows


def cmd_check(args) -> int:
    rows = run_checks(args.dim, args.cols, args.trials, args.seed, _expm_cfg(args))
    failed = False
    for name, measured, tol, ok in rows:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {measured:.3e} (tol {tol:g})")
        if not ok:
            failed = True
            _fail({"check": name, "measured": measured, "tolerance": tol})
    write_manifest(args.out, args)
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# stability
# ---------------------------------------------------------------------------


def cmd_stability(args) -> int:
    kind = lab.WeightKind(args.kind)
    ratios, first = [], None
    for i in range(args.seeds):
        seed = args.seed + i
        cfg = lab.StackConfig(args.depth, args.width, kind, args.std, args.relu, seed)
        rec = lab.norm_propagation(cfg, lab.unit_probes(args.width, 1, seed)[0])
        first = first or rec
        ratios.append(rec.ratio)
        if rec.diverged_at is not None:
            _fail({"seed": seed, "diverged_at_layer": rec.diverged_at})
    args.out.mkdir(parents=True, exist_ok=True)
    lab.write_norms_csv(args.out / "norms.csv", first)
    print(f"ratio={float(np.median(ratios))!r} seeds={args.seeds} kind={kind.value} depth={args.depth}")
    write_manifest(args.out, args)
    return 0


# ---------------------------------------------------------------------------
# train / export / bench
# ---------------------------------------------------------------------------


def _sgd_cfg(args) -> SgdConfig:
    return SgdConfig(lr=args.lr, momentum=args.momentum, weight_decay=args.weight_decay)


def cmd_train(args) -> int:
    data = bundled(args.dataset)
    model = ARCHS[args.arch](n_classes=data.n_classes, in_channels=data.image_shape[0],
                             seed=args.seed, cfg=_expm_cfg(args))
    rec = lab.train_toy(model, data, _sgd_cfg(args), args.epochs, args.batch_size, args.seed,
                        args.exp_every, threads=args.threads)
    args.out.mkdir(parents=True, exist_ok=True)
    lab.write_curves_csv(args.out / "curves.csv", rec)
    write_manifest(args.out, args)
    if rec.diverged_at is not None:
        _fail({"diverged_at_epoch": rec.diverged_at})
        return 1
    store.save_file(model, args.out / "model.ulie", "lie")
    m = rec.metrics
    print(f"train_loss={m['train_loss']:.6f} train_acc={m['train_acc']:.4f} "
          f"test_loss={m['test_loss']:.6f} test_acc={m['test_acc']:.4f} "
          f"time_s={rec.timings['train_s']:.2f}")
    return 0


def _model_path(args) -> Path:
    return args.model if args.model is not None else args.out / "model.ulie"


def cmd_export(args) -> int:
    src = _model_path(args)
    model = store.load_file(src)
    sizes = {}
    if model.trainable:
        sizes["lie"] = len(store.save(model, "lie"))
    sizes["dense"] = len(store.save(model, "dense"))
    if args.mode not in sizes:
        _fail({"error": "model is already cached; lie export impossible", "model": str(src)})
        return 1
    dest = args.out / f"model.{args.mode}.ulie"
    args.out.mkdir(parents=True, exist_ok=True)
    store.save_file(model, dest, args.mode)
    line = " ".join(f"{k}_bytes={v}" for k, v in sizes.items())
    if "lie" in sizes:
        line += f" reduction={1 - sizes['lie'] / sizes['dense']:.4f}"
    print(f"wrote {dest} {line}")
    write_manifest(args.out, args, [src])
    return 0


def cmd_bench(args) -> int:
    src = _model_path(args)
    inputs = []
    if src.exists():
        model = store.load_file(src)
        inputs.append(src)
    else:
        model = toy6(seed=args.seed, cfg=_expm_cfg(args))
    data = bundled()
    batch = data.test_x[: args.batch]
    rows = lab.bench_inference(model, batch, args.repeats)
    args.out.mkdir(parents=True, exist_ok=True)
    lab.write_bench_csv(args.out / "bench.csv", rows)
    for r in rows:
        print(f"{r['variant']}: median {r['median_us']:.1f} us/image "
              f"(p10 {r['p10_us']:.1f}, p90 {r['p90_us']:.1f})")
    write_manifest(args.out, args, inputs)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _positive(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _common(defaults: bool) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
    p.add_argument("--seed", type=int, default=d(0))
    p.add_argument("--out", type=Path, default=d(Path("out")))
    p.add_argument("--strict-taylor", action="store_true", default=d(False),
                   help="plain degree-18 Taylor series without scaling and squaring")
    p.add_argument("--threads", type=_positive, default=d(1),
                   help="batch-parallel evaluation; >1 voids bitwise determinism")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ulie", parents=[_common(True)], description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common(False)

    p = sub.add_parser("check", parents=[common], help="run the unitary-weight invariant suites")
    p.add_argument("--dim", type=_positive, required=True)
    p.add_argument("--cols", type=_positive, required=True)
    p.add_argument("--trials", type=_positive, default=10)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("stability", parents=[common], help="activation norms across depth")
    p.add_argument("--depth", type=_positive, required=True)
    p.add_argument("--width", type=_positive, default=64)
    p.add_argument("--kind", choices=[k.value for k in lab.WeightKind], default="unitary")
    p.add_argument("--std", type=float, default=1.0)
    p.add_argument("--relu", action="store_true")
    p.add_argument("--seeds", type=_positive, default=1, help="median ratio over this many seeds")
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("train", parents=[common], help="train a toy unitary CNN")
    defaults = SgdConfig()
    p.add_argument("--arch", choices=sorted(ARCHS), default="toy6")
    p.add_argument("--dataset", choices=sorted(BUNDLED), default="patterns10")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=_positive, default=32)
    p.add_argument("--lr", type=float, default=defaults.lr)
    p.add_argument("--momentum", type=float, default=defaults.momentum)
    p.add_argument("--weight-decay", type=float, default=defaults.weight_decay)
    p.add_argument("--exp-every", type=_positive, default=1,
                   help="reuse each exponential for N optimizer steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("export", parents=[common], help="write a model file in lie or dense mode")
    p.add_argument("--mode", choices=sorted(store.MODES), required=True)
    p.add_argument("--model", type=Path, default=None, help="default: OUT/model.ulie")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("bench", parents=[common], help="cached unitary vs instance-norm inference")
    p.add_argument("--model", type=Path, default=None, help="default: OUT/model.ulie, else fresh toy6")
    p.add_argument("--batch", type=_positive, default=8)
    p.add_argument("--repeats", type=_positive, default=1000)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "check" and args.cols > args.dim:
        parser.error("--cols must not exceed --dim")
    if args.command == "train" and args.epochs < 0:
        parser.error("--epochs must be >= 0")
    try:
        return args.func(args)
    except (OSError, store.ModelFormatError) as e:
        _fail({"error": str(e)})
        return 1
    finally:
        counters.reset()


if __name__ == "__main__":
    sys.exit(main())
