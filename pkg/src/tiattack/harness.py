"""Attack grids over a model zoo, with CSV/JSON success-rate reports."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .attacks import AttackConfig, Norm, attack, l2_epsilon, save_adversarial_batch
from .datasets import LabeledDataset, bundled_paths, load_idx_dataset
from .errors import ConfigurationError
from .kernels import KernelKind, make_kernel
from .models import Classifier, TinyCnn, fuse_logits, load_model, save_model, train

OUTPUT_ROOT_ENV = "TIATTACK_OUTPUT_ROOT"
CSV_COLUMNS = ("source", "attack", "kernel", "norm", "target", "n", "success_rate")

# seeds {1, 2, 3} plus a shift-augmented copy of seed 1 as the defence-like target
DEFAULT_ZOO = (
    {"id": "cnn-s1", "seed": 1, "shift_augment": 0},
    {"id": "cnn-s2", "seed": 2, "shift_augment": 0},
    {"id": "cnn-s3", "seed": 3, "shift_augment": 0},
    {"id": "cnn-s1-shift3", "seed": 1, "shift_augment": 3},
)
TRAIN_DEFAULTS = {"epochs": 30, "lr": 0.05, "batch_size": 32, "momentum": 0.9, "lr_drop_epoch": 20}


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "."))


@dataclass
class ExperimentPlan:
    images: Path
    labels: Path
    models: dict[str, Path]
    attacks: list[AttackConfig]
    sources: list[tuple[str, ...]]
    targets: list[str]
    samples: int = 500
    seed: int = 0
    filter_correct: bool = False
    save_adversarial: bool = False
    output_dir: Path | None = None

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | str = ".") -> "ExperimentPlan":
        base_dir = Path(base_dir)
        try:
            seed = int(d.get("seed", 0))
            dataset = d.get("dataset", "bundled:test")
            if isinstance(dataset, str):
                if not dataset.startswith("bundled:"):
                    raise ConfigurationError(f"unknown dataset reference {dataset!r}")
                images, labels = bundled_paths(dataset.split(":", 1)[1])
            else:
                images = base_dir / dataset["images"]
                labels = base_dir / dataset["labels"]
            models = {str(k): base_dir / v for k, v in d["models"].items()}
            input_dim = int(d.get("input_dim", 784))
            attacks = [_attack_from_dict(a, seed, input_dim) for a in d["attacks"]]
            sources = [(s,) if isinstance(s, str) else tuple(s) for s in d["sources"]]
            targets = list(d["targets"])
            out = d.get("output_dir")
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ConfigurationError(f"malformed plan: {exc!r}") from exc
        return cls(
            images=Path(images),
            labels=Path(labels),
            models=models,
            attacks=attacks,
            sources=sources,
            targets=targets,
            samples=int(d.get("samples", 500)),
            seed=seed,
            filter_correct=bool(d.get("filter_correct", False)),
            save_adversarial=bool(d.get("save_adversarial", False)),
            output_dir=None if out is None else output_root() / out,
        )

    @classmethod
    def load(cls, path) -> "ExperimentPlan":
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"plan file {path} not found")
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc
        return cls.from_dict(d, path.parent)

    def validate(self) -> None:
        """Check every reference before any compute happens."""
        for p in (self.images, self.labels):
            if not p.is_file():
                raise ConfigurationError(f"dataset file {p} not found")
        for src in self.sources:
            for mid in src:
                if mid not in self.models:
                    raise ConfigurationError(f"source model {mid!r} is not in the model list")
        for mid in self.targets:
            if mid not in self.models:
                raise ConfigurationError(f"target model {mid!r} is not in the model list")
        for mid, path in self.models.items():
            if not (path / "manifest.txt").is_file():
                raise ConfigurationError(f"model {mid!r}: no manifest in {path}")
        if not self.attacks:
            raise ConfigurationError("plan lists no attacks")
        if self.samples < 1:
            raise ConfigurationError("samples must be positive")


def _attack_from_dict(d: dict, plan_seed: int, input_dim: int) -> AttackConfig:
    d = dict(d)
    d.setdefault("seed", plan_seed)
    if d.get("epsilon") == "auto":
        d["epsilon"] = l2_epsilon(input_dim) if Norm(d.get("norm", "linf")) is Norm.L2 else 16 / 255
    return AttackConfig.from_dict(d)


@dataclass
class ReportRow:
    source: str
    attack: str
    kernel: str
    norm: str
    target: str
    n: int
    successes: int
    white_box: bool
    seed: int
    config_digest: str
    k: int | None = None

    @property
    def success_rate(self) -> float:
        return self.successes / self.n if self.n else 0.0


@dataclass
class ExperimentReport:
    rows: list[ReportRow]
    meta: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.rows:
            writer.writerow([r.source, r.attack, r.kernel, r.norm, r.target, r.n, f"{r.success_rate:.4f}"])
        return buf.getvalue()

    def to_json(self) -> str:
        rows = []
        for r in self.rows:
            d = {c: getattr(r, c) for c in CSV_COLUMNS if c != "success_rate"}
            d.update(
                success_rate=round(r.success_rate, 4),
                successes=r.successes,
                white_box=r.white_box,
                seed=r.seed,
                config_digest=r.config_digest,
            )
            if r.k is not None:
                d["k"] = r.k
            rows.append(d)
        return json.dumps({"meta": self.meta, "rows": rows}, indent=2, sort_keys=True) + "\n"

    def write(self, directory, stem: str = "report") -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = directory / f"{stem}.csv", directory / f"{stem}.json"
        csv_path.write_text(self.to_csv())
        json_path.write_text(self.to_json())
        return csv_path, json_path

    def rate(self, source: str, attack: str, target: str, kernel: str | None = None) -> float:
        for r in self.rows:
            if r.source == source and r.attack == attack and r.target == target:
                if kernel is None or r.kernel == kernel:
                    return r.success_rate
        raise KeyError((source, attack, target, kernel))


def config_digest(cfg: AttackConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _source_model(models: dict[str, Classifier], ids: tuple[str, ...]) -> Classifier:
    if len(ids) == 1:
        return models[ids[0]]
    return fuse_logits([models[i] for i in ids])


def _check_white_box_dominance(rows: list[ReportRow]) -> None:
    groups: dict[tuple, list[ReportRow]] = {}
    for r in rows:
        groups.setdefault((r.source, r.attack, r.kernel, r.norm, r.config_digest), []).append(r)
    for key, group in groups.items():
        white = [r.success_rate for r in group if r.white_box]
        black = [r.success_rate for r in group if not r.white_box]
        if white and black and max(black) > min(white):
            warnings.warn(f"black-box success exceeds white-box for {key[:4]}", stacklevel=3)


def _run_grid(plan: ExperimentPlan, attack_list: list[tuple[AttackConfig, int | None]]) -> ExperimentReport:
    plan.validate()
    data = load_idx_dataset(plan.images, plan.labels)
    if plan.samples > len(data):
        raise ConfigurationError(f"plan asks for {plan.samples} samples, dataset has {len(data)}")
    data = data.subset(plan.samples)
    models = {mid: load_model(path) for mid, path in plan.models.items()}
    rows = []
    for src_ids in plan.sources:
        source = _source_model(models, src_ids)
        src_name = "+".join(src_ids)
        x, y = data.images, data.labels
        if plan.filter_correct:
            keep = source.predict(x) == y
            x, y = x[keep], y[keep]
        for cfg, k in attack_list:
            result = attack(source, x, y, cfg) if len(x) else None
            x_adv = result.x_adv if result is not None else x
            if plan.save_adversarial and result is not None and plan.output_dir is not None:
                stem = f"adv_{src_name}_{cfg.label}_{cfg.kernel_label}_{cfg.norm.value}"
                save_adversarial_batch(result, plan.output_dir / stem)
            for tgt in plan.targets:
                wrong = int(np.sum(models[tgt].predict(x_adv) != y)) if len(x) else 0
                rows.append(
                    ReportRow(
                        source=src_name,
                        attack=cfg.label,
                        kernel=cfg.kernel_label,
                        norm=cfg.norm.value,
                        target=tgt,
                        n=len(y),
                        successes=wrong,
                        white_box=tgt in src_ids,
                        seed=cfg.seed,
                        config_digest=config_digest(cfg),
                        k=k,
                    )
                )
    _check_white_box_dominance(rows)
    meta = {
        "seed": plan.seed,
        "samples": plan.samples,
        "filter_correct": plan.filter_correct,
        "dataset": {"images": plan.images.name, "labels": plan.labels.name},
        "models": {mid: p.name for mid, p in plan.models.items()},
        "attacks": [cfg.to_dict() for cfg, _ in attack_list],
    }
    return ExperimentReport(rows, meta)


def run_plan(plan: ExperimentPlan) -> ExperimentReport:
    """Run every (source, attack, target) cell; write CSV/JSON when the plan names an output dir."""
    report = _run_grid(plan, [(cfg, None) for cfg in plan.attacks])
    if plan.output_dir is not None:
        report.write(plan.output_dir)
    return report


def half_width(size: int) -> int:
    """Kernel half-width for an odd kernel side length."""
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be a positive odd integer, got {size}")
    return (size - 1) // 2


def kernel_size_sweep(plan: ExperimentPlan, k_values) -> ExperimentReport:
    """Rerun each plan attack with kernels of every half-width in ``k_values``.

    Attacks without a kernel are swept with the Gaussian kind.
    """
    ks = []
    for k in k_values:
        if int(k) != k or k < 0:
            raise ValueError(f"kernel half-width must be a non-negative integer, got {k}")
        if int(k) in ks:
            warnings.warn(f"duplicate kernel half-width {k} dropped", stacklevel=2)
            continue
        ks.append(int(k))
    attack_list = []
    for cfg in plan.attacks:
        kind = cfg.kernel.kind if cfg.kernel is not None else KernelKind.GAUSSIAN
        attack_list.extend((cfg.with_kernel(make_kernel(kind, k)), k) for k in ks)
    report = _run_grid(plan, attack_list)
    if plan.output_dir is not None:
        report.write(plan.output_dir, stem="sweep")
    return report


def train_zoo(directory, zoo=DEFAULT_ZOO, data: LabeledDataset | None = None,
              test_data: LabeledDataset | None = None, log=None, **overrides) -> dict[str, dict]:
    """Train each zoo member and save it under ``directory/<id>``; returns per-model accuracies."""
    from .datasets import load_bundled_mnist

    directory = Path(directory)
    data = data if data is not None else load_bundled_mnist("train")
    test_data = test_data if test_data is not None else load_bundled_mnist("test")
    settings = {**TRAIN_DEFAULTS, **overrides}
    summary = {}
    for entry in zoo:
        result = train(
            TinyCnn(),
            data,
            seed=entry["seed"],
            shift_augment=entry.get("shift_augment", 0),
            test_data=test_data,
            log=log,
            **settings,
        )
        save_model(result.model, directory / entry["id"])
        summary[entry["id"]] = {
            **entry,
            **settings,
            "train_accuracy": result.train_accuracy,
            "test_accuracy": result.test_accuracy,
        }
    (directory / "zoo.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def with_samples(plan: ExperimentPlan, samples: int) -> ExperimentPlan:
    return replace(plan, samples=samples)
