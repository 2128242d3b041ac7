"""Command line entry point: ``tiattack <subcommand> ...``.

Relative output paths are resolved against ``$TIATTACK_OUTPUT_ROOT`` (default:
the working directory). Exit codes: 0 success, 2 configuration error,
3 numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .attacks import AttackConfig, attack, l2_epsilon, save_adversarial_batch
from .datasets import LabeledDataset, bundled_paths, load_idx_dataset
from .errors import ConfigurationError, DivergedError, IdxFormatError
from .kernels import kernel_to_csv, make_kernel
from .models import TinyCnn, fuse_logits, load_model, save_model, train
from .oracle import compare, loss_surface
from .tensor import load_npy

EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _out(path) -> Path:
    path = Path(path)
    return path if path.is_absolute() else harness.output_root() / path


def _write(path, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    p = _out(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text)
    print(f"wrote {p}", file=sys.stderr)


def _dataset(args, split: str = "test") -> LabeledDataset:
    if args.images or args.labels:
        if not (args.images and args.labels):
            raise ConfigurationError("--images and --labels must be given together")
        data = load_idx_dataset(args.images, args.labels)
    else:
        data = load_idx_dataset(*bundled_paths(split))
    n = getattr(args, "samples", None)
    if n is not None:
        if n > len(data):
            raise ConfigurationError(f"--samples {n} exceeds dataset size {len(data)}")
        data = data.subset(n)
    return data


def _models(paths):
    models = [load_model(p) for p in paths]
    return models[0] if len(models) == 1 else fuse_logits(models)


def _add_data_args(p, samples: int | None = None):
    p.add_argument("--images", help="IDX image file (default: bundled MNIST test split)")
    p.add_argument("--labels", help="IDX label file")
    if samples is not None:
        p.add_argument("--samples", type=int, default=samples)


def _attack_config(args, d: int) -> AttackConfig:
    kernel = make_kernel(args.kernel, args.k) if args.kernel else None
    eps = args.epsilon
    if eps is None:
        eps = l2_epsilon(d) if args.norm == "l2" else 16 / 255
    return AttackConfig(
        method=args.method,
        kernel=kernel,
        norm=args.norm,
        epsilon=eps,
        iterations=args.iterations,
        alpha=args.alpha,
        mu=args.mu,
        dim_prob=args.dim_prob,
        seed=args.seed,
    )


def cmd_train(args) -> int:
    if args.zoo:
        summary = harness.train_zoo(_out(args.zoo), log=lambda s: print(s, file=sys.stderr))
        print(json.dumps(summary, indent=2, sort_keys=True))
        return 0
    if not args.out:
        raise ConfigurationError("train needs --out DIR (or --zoo DIR)")
    tr = load_idx_dataset(*bundled_paths("train"))
    te = load_idx_dataset(*bundled_paths("test"))
    result = train(
        TinyCnn(),
        tr,
        epochs=args.epochs,
        lr=args.lr,
        seed=args.seed,
        batch_size=args.batch_size,
        momentum=args.momentum,
        lr_drop_epoch=args.lr_drop_epoch,
        shift_augment=args.shift_augment,
        test_data=te,
        log=lambda s: print(s, file=sys.stderr),
    )
    out = save_model(result.model, _out(args.out))
    print(json.dumps({"model": str(out), "train_accuracy": result.train_accuracy,
                      "test_accuracy": result.test_accuracy}, indent=2))
    return 0


def cmd_attack(args) -> int:
    data = _dataset(args)
    model = _models(args.model)
    cfg = _attack_config(args, int(np.prod(model.input_shape)))
    result = attack(model, data.images, data.labels, cfg)
    npy, sidecar = save_adversarial_batch(result, _out(args.out), extra={"models": args.model})
    print(json.dumps({"attack": cfg.label, "npy": str(npy), "sidecar": str(sidecar),
                      "source_success_rate": round(float(result.success.mean()), 4)}, indent=2))
    return 0


def cmd_evaluate(args) -> int:
    data = _dataset(args)
    x = data.images
    if args.adv:
        x = load_npy(args.adv)
        if len(x) > len(data):
            raise ConfigurationError("adversarial batch is larger than the label set")
        data = data.subset(len(x))
    out = {}
    for path in args.model:
        pred = load_model(path).predict(x)
        out[str(path)] = {"n": len(x), "accuracy": round(float(np.mean(pred == data.labels)), 4),
                          "success_rate": round(float(np.mean(pred != data.labels)), 4)}
    print(json.dumps(out, indent=2))
    return 0


def cmd_run_plan(args) -> int:
    plan = harness.ExperimentPlan.load(args.plan)
    if args.samples:
        plan = harness.with_samples(plan, args.samples)
    report = harness.run_plan(plan)
    sys.stdout.write(report.to_csv())
    return 0


def cmd_sweep(args) -> int:
    if args.sizes:
        ks = [harness.half_width(s) for s in args.sizes]
    else:
        ks = args.k
    plan = harness.ExperimentPlan.load(args.plan)
    if args.samples:
        plan = harness.with_samples(plan, args.samples)
    report = harness.kernel_size_sweep(plan, ks)
    sys.stdout.write(report.to_csv())
    return 0


def cmd_kernel_dump(args) -> int:
    _write(args.out, kernel_to_csv(make_kernel(args.kind, args.k)))
    return 0


def cmd_loss_surface(args) -> int:
    data = _dataset(args)
    model = load_model(args.model)
    surface = loss_surface(model, data.images, data.labels, args.k, args.mode, model_id=Path(args.model).name)
    _write(args.out, surface.to_csv())
    print(f"max relative deviation from centre: {surface.max_relative_deviation():.6f}", file=sys.stderr)
    return 0


def cmd_verify(args) -> int:
    data = _dataset(args)
    model = load_model(args.model)
    report = compare(model, data.images, data.labels, make_kernel(args.kind, args.k), args.mode)
    _write(args.out, report.to_json())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tiattack", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a TinyCnn (or the default zoo) on the bundled MNIST subset")
    p.add_argument("--out", help="model directory")
    p.add_argument("--zoo", help="train the default four-model zoo into this directory")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--shift-augment", type=int, default=0)
    for key, value in harness.TRAIN_DEFAULTS.items():
        p.add_argument(f"--{key.replace('_', '-')}", type=type(value), default=value)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="craft adversarial examples, write NPY + JSON sidecar")
    p.add_argument("--model", action="append", required=True, help="model dir; repeat to fuse logits")
    p.add_argument("--method", default="MIFGSM", choices=["FGSM", "BIM", "MIFGSM", "DIM"])
    p.add_argument("--kernel", choices=["uniform", "linear", "gaussian"], help="enables the TI variant")
    p.add_argument("--k", type=int, default=7, help="kernel half-width (size 2k+1)")
    p.add_argument("--norm", default="linf", choices=["linf", "l2"])
    p.add_argument("--epsilon", type=float, help="default 16/255 (linf) or 10/255*sqrt(d) (l2)")
    p.add_argument("--iterations", type=int, default=10)
    p.add_argument("--alpha", type=float)
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--dim-prob", type=float, default=0.7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output path prefix")
    _add_data_args(p, samples=500)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("evaluate", help="accuracy / success rate of models on clean or adversarial images")
    p.add_argument("--model", action="append", required=True)
    p.add_argument("--adv", help="adversarial batch (.npy); labels come from the dataset")
    _add_data_args(p, samples=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run-plan", help="run a JSON experiment plan")
    p.add_argument("plan")
    p.add_argument("--samples", type=int)
    p.set_defaults(func=cmd_run_plan)

    p = sub.add_parser("sweep", help="kernel-size sweep over a plan's attacks")
    p.add_argument("plan")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--k", type=int, nargs="+", default=list(range(11)), help="half-widths")
    g.add_argument("--sizes", type=int, nargs="+", help="odd kernel side lengths")
    p.add_argument("--samples", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("kernel-dump", help="write a kernel matrix as CSV")
    p.add_argument("--kind", default="gaussian", choices=["uniform", "linear", "gaussian"])
    p.add_argument("--k", type=int, default=7)
    p.add_argument("--out")
    p.set_defaults(func=cmd_kernel_dump)

    p = sub.add_parser("loss-surface", help="mean loss over translated copies of a batch, as CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--mode", default="zero", choices=["zero", "circular"])
    p.add_argument("--out")
    _add_data_args(p, samples=200)
    p.set_defaults(func=cmd_loss_surface)

    p = sub.add_parser("verify", help="compare smoothed and brute-force ensemble gradients, as JSON")
    p.add_argument("--model", required=True)
    p.add_argument("--kind", default="gaussian", choices=["uniform", "linear", "gaussian"])
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--mode", default="zero", choices=["zero", "circular"])
    p.add_argument("--out")
    _add_data_args(p, samples=20)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigurationError, IdxFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
