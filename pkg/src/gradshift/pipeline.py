"""Experiment commands behind the command-line interface.

Each command takes a resolved :class:`RunConfig`, writes everything under a
fresh run directory, and stores the exact config it ran with as
``config.json`` next to its outputs. Inputs (corpora, checkpoints) are never
modified.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import data as D
from .attack import AttackConfig, run_attack, save_result
from .gradcam import compute_cam, save_overlay_png, write_cam_csv
from .metrics import CSV_HEADER, read_csv_rows
from .model import ModelConfig, build_model, load_checkpoint, predict, save_checkpoint, train

logger = logging.getLogger(__name__)

CONFIG_NAME = "config.json"


class PipelineError(RuntimeError):
    """A user-facing failure: bad config, missing input and the like."""


@dataclass
class TrainSettings:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 0.01
    momentum: float = 0.9
    schedule: str = "cosine"


@dataclass
class DataSettings:
    n_per_class: int = 600
    corpus: Optional[str] = None  # existing corpus directory to read instead of generating
    fractions: List[float] = field(default_factory=lambda: [0.7, 0.1, 0.2])
    copies: int = 4
    include_normal: bool = False


@dataclass
class SelectSettings:
    split: str = "test"  # which split explain/attack draw images from
    limit: Optional[int] = None
    only_correct: bool = False  # attack only images the model classifies correctly


@dataclass
class ExplainSettings:
    target_class: Optional[int] = None  # None: predicted class
    alpha: float = 0.5


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs"
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSettings = field(default_factory=TrainSettings)
    phantom: D.PhantomSpec = field(default_factory=D.PhantomSpec)
    data: DataSettings = field(default_factory=DataSettings)
    select: SelectSettings = field(default_factory=SelectSettings)
    explain: ExplainSettings = field(default_factory=ExplainSettings)
    attack: AttackConfig = field(default_factory=AttackConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def with_seed(self, seed: int) -> "RunConfig":
        """Propagate one seed to every seeded component."""
        cfg = dataclasses.replace(self, seed=int(seed))
        cfg.model = dataclasses.replace(self.model, seed=int(seed))
        cfg.phantom = dataclasses.replace(self.phantom, seed=int(seed))
        cfg.attack = dataclasses.replace(self.attack, seed=int(seed))
        return cfg


_SECTIONS = {
    "model": ModelConfig,
    "train": TrainSettings,
    "phantom": D.PhantomSpec,
    "data": DataSettings,
    "select": SelectSettings,
    "explain": ExplainSettings,
    "attack": AttackConfig,
}


def _build(cls, blob: dict, where: str):
    if not isinstance(blob, dict):
        raise PipelineError(f"config section {where!r} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(blob) - names)
    if unknown:
        raise PipelineError(f"unknown config key(s) in {where!r}: {', '.join(unknown)}")
    kwargs = {}
    for k, v in blob.items():
        # tuples arrive from JSON as lists
        if isinstance(v, list) and k != "target_region":
            if k == "residual_stages":
                v = [tuple(x) for x in v]
            elif k not in ("fractions",):
                v = tuple(v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise PipelineError(f"invalid config section {where!r}: {exc}") from None


def config_from_dict(blob: dict) -> RunConfig:
    """Build a RunConfig, rejecting unknown keys at every level."""
    if not isinstance(blob, dict):
        raise PipelineError("config must be a JSON object")
    top = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(blob) - top)
    if unknown:
        raise PipelineError(f"unknown config key(s): {', '.join(unknown)}")
    kwargs = {}
    for k, v in blob.items():
        kwargs[k] = _build(_SECTIONS[k], v, k) if k in _SECTIONS else v
    cfg = RunConfig(**kwargs)
    if "seed" in blob:
        cfg = cfg.with_seed(cfg.seed)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise PipelineError(f"config file not found: {path}")
    try:
        blob = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise PipelineError(f"config file {path} is not valid JSON: {exc}") from None
    return config_from_dict(blob)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=1, default=_json_default) + "\n")


def new_run_dir(out, command: str) -> Path:
    """``<out>/<command>-<UTC timestamp>``, with a numeric suffix if taken."""
    out = Path(out)
    stamp = time.strftime("%Y%m%dT%H%M%SZ", time.gmtime())
    base = out / f"{command}-{stamp}"
    path, k = base, 1
    while path.exists():
        path = base.with_name(f"{base.name}-{k}")
        k += 1
    path.mkdir(parents=True)
    return path


def _start(config: RunConfig, command: str, run_dir=None) -> Path:
    d = Path(run_dir) if run_dir is not None else new_run_dir(config.out, command)
    d.mkdir(parents=True, exist_ok=True)
    _write_json(config.to_dict(), d / CONFIG_NAME)
    return d


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_data(config: RunConfig, run_dir=None) -> Path:
    """Generate a phantom corpus in the on-disk layout under ``<run>/corpus``."""
    d = _start(config, "gen-data", run_dir)
    samples = D.generate_corpus(config.data.n_per_class, config.phantom, seed=config.seed)
    D.export_corpus(samples, d / "corpus")
    _write_json(
        {"n_per_class": config.data.n_per_class, "sources": [s.source_id for s in samples]},
        d / "corpus_manifest.json",
    )
    logger.info("wrote %d phantoms to %s", len(samples), d / "corpus")
    return d


def _corpus_path(corpus) -> Path:
    p = Path(corpus)
    if (p / "corpus").is_dir():
        p = p / "corpus"
    if not p.is_dir():
        raise PipelineError(f"corpus not found: {corpus}")
    return p


def _dataset(config: RunConfig, corpus) -> D.Dataset:
    try:
        sources = D.load_corpus(_corpus_path(corpus), size=config.model.input_size,
                                include_normal=config.data.include_normal)
        return D.prepare_dataset(sources, tuple(config.data.fractions), seed=config.seed, copies=config.data.copies)
    except (D.EmptyCorpusError, ValueError) as exc:
        raise PipelineError(str(exc)) from None


def cmd_train(config: RunConfig, corpus=None, run_dir=None) -> Path:
    """Train on a corpus; write checkpoint, report and split manifest."""
    corpus = corpus or config.data.corpus
    if corpus is None:
        raise PipelineError("train needs a corpus (--corpus or data.corpus)")
    corpus = _corpus_path(corpus)
    dataset = _dataset(config, corpus)
    try:
        config.model.validate()
    except ValueError as exc:
        raise PipelineError(str(exc)) from None
    d = _start(config, "train", run_dir)
    dataset.write_manifest(d / "manifest.json")
    model = build_model(config.model)
    t = config.train
    report = train(model, dataset, epochs=t.epochs, batch_size=t.batch_size, lr=t.lr, momentum=t.momentum,
                   seed=config.seed, schedule=t.schedule)
    save_checkpoint(model, d / "checkpoint.json")
    _write_json({"corpus": str(corpus.resolve()), **report.to_dict()}, d / "train_report.json")
    logger.info("test accuracy %s", report.test_accuracy)
    return d


def _load_model(checkpoint):
    p = Path(checkpoint)
    if p.is_dir():
        p = p / "checkpoint.json"
    if not p.is_file():
        raise PipelineError(f"checkpoint not found: {checkpoint}")
    try:
        return load_checkpoint(p), p
    except (ValueError, KeyError) as exc:
        raise PipelineError(f"bad checkpoint {p}: {exc}") from None


def _select_images(config: RunConfig, checkpoint_path: Path, images: Optional[Sequence[str]]):
    """(image_id, image, label) triples from explicit paths or a training run's split."""
    size = config.model.input_size
    if images:
        out = []
        for p in images:
            p = Path(p)
            if not p.is_file():
                raise PipelineError(f"image not found: {p}")
            try:
                arr = D._read_gray(p, size, D.Image.BILINEAR)
            except Exception as exc:
                raise PipelineError(f"unreadable image {p}: {exc}") from None
            label = D.MALIGNANT if p.parent.name == "malignant" else D.BENIGN if p.parent.name == "benign" else None
            out.append((f"{p.parent.name}/{p.stem}", arr[..., None], label))
        return out
    run = checkpoint_path.parent
    report_path = run / "train_report.json"
    manifest_path = run / "manifest.json"
    if not (report_path.is_file() and manifest_path.is_file()):
        raise PipelineError(f"{run} is not a training run; pass image paths explicitly")
    corpus = Path(json.loads(report_path.read_text())["corpus"])
    wanted = [e["source_id"] for e in json.loads(manifest_path.read_text()) if e["split"] == config.select.split]
    wanted = list(dict.fromkeys(wanted))
    try:
        by_id = {s.source_id: s for s in D.load_corpus(corpus, size=size, include_normal=config.data.include_normal)}
    except D.EmptyCorpusError as exc:
        raise PipelineError(str(exc)) from None
    missing = [w for w in wanted if w not in by_id]
    if missing:
        raise PipelineError(f"{len(missing)} image(s) of split {config.select.split!r} missing from {corpus}")
    return [(w, by_id[w].image, by_id[w].label) for w in wanted]


def cmd_explain(config: RunConfig, checkpoint, images=None, run_dir=None) -> Path:
    """GRAD-CAM overlay PNG and raw-value CSV for each selected image."""
    model, ckpt = _load_model(checkpoint)
    chosen = _select_images(config, ckpt, images)
    if config.select.limit is not None:
        chosen = chosen[: config.select.limit]
    d = _start(config, "explain", run_dir)
    rows = []
    for image_id, image, label in chosen:
        cam = compute_cam(model, image, config.explain.target_class)
        stem = image_id.replace("/", "__")
        save_overlay_png(image, cam, d / f"{stem}_overlay.png", alpha=config.explain.alpha)
        write_cam_csv(cam, d / f"{stem}_cam.csv")
        rows.append({"image_id": image_id, "label": label, "target_class": cam.target_class,
                     "raw_max": cam.raw_max, "degenerate": cam.degenerate})
    _write_json(rows, d / "explain.json")
    return d


def cmd_attack(config: RunConfig, checkpoint, images=None, run_dir=None) -> Path:
    """Attack each selected image; one directory and one CSV row per image."""
    model, ckpt = _load_model(checkpoint)
    chosen = _select_images(config, ckpt, images)
    d = _start(config, "attack", run_dir)
    csv_path = d / "attacks.csv"
    with csv_path.open("w", newline="") as fh:
        csv.writer(fh).writerow(CSV_HEADER)
    done = degenerate = 0
    for image_id, image, label in chosen:
        if config.select.limit is not None and done >= config.select.limit:
            break
        if config.select.only_correct and label is not None:
            if int(np.argmax(predict(model, image)[0])) != label:
                continue
        result = run_attack(model, image, config.attack, label=label)
        if result.cam_before.degenerate:
            degenerate += 1
        save_result(result, d / "images", image_id, csv_path=csv_path)
        done += 1
    logger.info("attacked %d image(s), %d with an all-zero original map", done, degenerate)
    return d


def _num(v):
    return None if v in ("", "NA", None) else float(v)


def cmd_report(run_dirs: Sequence, config: Optional[RunConfig] = None, run_dir=None) -> Path:
    """Summarise training and attack runs into ``summary.md`` and ``summary.csv``."""
    config = config or RunConfig()
    runs = [Path(r) for r in run_dirs]
    for r in runs:
        if not r.is_dir():
            raise PipelineError(f"run directory not found: {r}")
    d = _start(config, "report", run_dir)
    train_rows, attack_rows = [], []
    for r in runs:
        if (r / "train_report.json").is_file():
            rep = json.loads((r / "train_report.json").read_text())
            cfg = json.loads((r / CONFIG_NAME).read_text())
            lam = cfg["model"]["loss_weight_mask"] if cfg["model"]["mtl_enabled"] else 0.0
            train_rows.append({"run": r.name, "lambda": lam, "seed": cfg["seed"],
                               "accuracy": rep["test_accuracy"], "sensitivity": rep["test_sensitivity"],
                               "specificity": rep["test_specificity"]})
        if (r / "attacks.csv").is_file():
            rows = read_csv_rows(r / "attacks.csv")
            cfg = json.loads((r / CONFIG_NAME).read_text())
            mode = cfg["attack"]["mode"]
            flips = sum(row["label_before"] != row["label_after"] for row in rows)
            rhos = [_num(row["rho"]) for row in rows if _num(row["rho"]) is not None]
            shifted = sum(
                row["label_before"] == row["label_after"] and _num(row["rho"]) is not None and _num(row["rho"]) < 0.5
                for row in rows
            )
            attack_rows.append({
                "run": r.name, "mode": mode, "images": len(rows),
                "flip_rate": flips / len(rows) if rows else None,
                "shift_rate": shifted / len(rows) if rows else None,
                "median_rho": float(np.median(rhos)) if rhos else None,
                "max_linf": max((_num(row["linf"]) for row in rows), default=None),
            })

    def fmt(v, pct=False):
        if v is None:
            return "NA"
        return f"{100 * v:.2f}%" if pct else (f"{v:.4f}" if isinstance(v, float) else str(v))

    lines = ["# Run summary", ""]
    if train_rows:
        lines += ["## Classification (test split)", "",
                  "| model | lambda | seed | accuracy | sensitivity | specificity |",
                  "|---|---|---|---|---|---|"]
        for row in sorted(train_rows, key=lambda x: (x["lambda"], x["seed"], x["run"])):
            kind = "single-task" if row["lambda"] == 0 else "multi-task"
            lines.append(f"| {kind} | {row['lambda']} | {row['seed']} | {fmt(row['accuracy'], True)} | "
                         f"{fmt(row['sensitivity'], True)} | {fmt(row['specificity'], True)} |")
        lines.append("")
    if attack_rows:
        lines += ["## Attacks", "", "| run | mode | images | label flips | label kept, rho < 0.5 | median rho | max Linf |",
                  "|---|---|---|---|---|---|---|"]
        for row in attack_rows:
            lines.append(f"| {row['run']} | {row['mode']} | {row['images']} | {fmt(row['flip_rate'], True)} | "
                         f"{fmt(row['shift_rate'], True)} | {fmt(row['median_rho'])} | {fmt(row['max_linf'])} |")
        lines.append("")
    (d / "summary.md").write_text("\n".join(lines))

    with (d / "summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "run", "lambda", "seed", "accuracy", "sensitivity", "specificity",
                    "mode", "images", "flip_rate", "shift_rate", "median_rho", "max_linf"])
        for row in train_rows:
            w.writerow(["train", row["run"], row["lambda"], row["seed"], fmt(row["accuracy"]),
                        fmt(row["sensitivity"]), fmt(row["specificity"]), "", "", "", "", "", ""])
        for row in attack_rows:
            w.writerow(["attack", row["run"], "", "", "", "", "", row["mode"], row["images"],
                        fmt(row["flip_rate"]), fmt(row["shift_rate"]), fmt(row["median_rho"]), fmt(row["max_linf"])])
    return d
