"""Training loops for the single-view, merged-view and contrastive paradigms.

All randomness (initialization, shuffling) flows from ``TrainConfig.seed``;
with one torch thread two runs of the same config produce identical
parameters.
"""

from __future__ import annotations

import copy
import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np
import torch
import torch.nn.functional as F

from .arrayio import config_hash, read_json, write_json
from .datasets import LabeledImageSet, MultiViewBenchmark, MultiViewDataset
from .encoders import REFERENCE_SPECS, EncoderSpec, ProjectionHeadSpec, ViewModel, load_model, save_model
from .errors import ConfigError, InvalidInputError, TrainingDivergedError
from .evaluation import PredictionSet
from .objectives import ObjectiveConfig, contrastive_loss, pxl_objective, supervised_loss

log = logging.getLogger(__name__)

PARADIGMS = ("UPSL", "MPSL", "PXL")
OPTIMIZERS = ("adam", "radam")


@dataclass(frozen=True)
class TrainConfig:
    paradigm: str = "UPSL"
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 4e-4
    optimizer: str = "radam"
    seed: int = 0
    fold: int = 0
    encoder: str = "dcgan"
    objective: ObjectiveConfig | None = None
    select_best: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.paradigm not in PARADIGMS:
            raise ConfigError("train.paradigm", f"must be one of {PARADIGMS}")
        for name in ("epochs", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"train.{name}", "must be positive")
        if not self.learning_rate > 0:
            raise ConfigError("train.learning_rate", "must be positive")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError("train.optimizer", f"must be one of {OPTIMIZERS}")
        if self.encoder not in REFERENCE_SPECS:
            raise ConfigError("train.encoder", f"must be one of {sorted(REFERENCE_SPECS)}")
        if self.paradigm == "PXL" and self.objective is None:
            raise ConfigError("objective", "PXL needs an objective config")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["objective"] = self.objective.to_dict() if self.objective else None
        return d

    def hash(self) -> str:
        return config_hash(self.to_dict())


# Hyperparameters selected for 3D MRI volumes and for 32x32 natural images.
PRESETS = {
    "mri_upsl": TrainConfig("UPSL", 200, 4, 1e-3, "adam", encoder="alexnet3d"),
    "mri_mpsl": TrainConfig("MPSL", 200, 32, 1e-3, "adam", encoder="alexnet3d"),
    "mri_pxl": TrainConfig(
        "PXL", 200, 4, 1e-4, "adam", encoder="alexnet3d",
        objective=ObjectiveConfig(lam=0.75, projection_head=ProjectionHeadSpec("identity")),
    ),
    "natural_upsl": TrainConfig("UPSL", 200, 64, 4e-4, "radam"),
    "natural_mpsl": TrainConfig("MPSL", 200, 64, 4e-4, "radam"),
    "natural_pxl": TrainConfig(
        "PXL", 200, 64, 4e-4, "radam",
        objective=ObjectiveConfig(lam=0.75, projection_head=ProjectionHeadSpec("identity")),
    ),
}


def preset(name: str, **overrides) -> TrainConfig:
    return replace(PRESETS[name], **overrides)


@dataclass
class RunRecord:
    paradigm: str
    config_hash: str
    history: list[dict[str, float]] = field(default_factory=list)
    checkpoints: list[str] = field(default_factory=list)
    wall_clock: float = 0.0

    def write(self, directory: Path) -> None:
        directory.mkdir(parents=True, exist_ok=True)
        if self.history:
            with open(directory / "epochs.csv", "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=list(self.history[0]))
                w.writeheader()
                w.writerows(self.history)
        write_json(directory / "run.json", asdict(self))

    @classmethod
    def read(cls, directory: Path) -> "RunRecord":
        return cls(**read_json(Path(directory) / "run.json"))


@dataclass
class TrainedModel:
    model: ViewModel
    record: RunRecord


@dataclass
class TrainedModelPair:
    model_i: ViewModel
    model_j: ViewModel
    record: RunRecord


# ---------------------------------------------------------------------------
# helpers


def encoder_spec_for(cfg: TrainConfig, image_shape: tuple[int, ...]) -> EncoderSpec:
    """Reference encoder spec for channel-last images of ``image_shape``."""
    if cfg.encoder == "dcgan":
        return REFERENCE_SPECS["dcgan"](channels=image_shape[-1], size=image_shape[0])
    return REFERENCE_SPECS[cfg.encoder]()


def to_tensor(images: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32)).movedim(-1, 1).contiguous()


def _make_optimizer(params, cfg: TrainConfig) -> torch.optim.Optimizer:
    params = [p for p in params if p.requires_grad]
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.learning_rate)
    return torch.optim.RAdam(params, lr=cfg.learning_rate)


def _batches(n: int, batch_size: int, gen: torch.Generator | None) -> list[torch.Tensor]:
    order = torch.randperm(n, generator=gen) if gen is not None else torch.arange(n)
    chunks = list(order.split(batch_size))
    # batch norm cannot train on a single sample
    if gen is not None and len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks = chunks[:-1]
    return chunks


def _seed_everything(cfg: TrainConfig) -> torch.Generator:
    torch.set_num_threads(cfg.threads)
    torch.manual_seed(cfg.seed)
    return torch.Generator().manual_seed(cfg.seed)


def _diverged(out_dir: Path | None, info: dict[str, Any]) -> TrainingDivergedError:
    path = None
    if out_dir is not None:
        path = write_json(Path(out_dir) / "diverged.json", info)
    return TrainingDivergedError(
        f"non-finite loss at epoch {info['epoch']} step {info['step']}: {info['components']}", path
    )


def predict(model: ViewModel, images: np.ndarray, batch_size: int = 512) -> np.ndarray:
    return _infer(model, images, batch_size)[1]


def representations(model: ViewModel, images: np.ndarray, batch_size: int = 512) -> np.ndarray:
    return _infer(model, images, batch_size)[0]


def _infer(model: ViewModel, images: np.ndarray, batch_size: int) -> tuple[np.ndarray, np.ndarray]:
    was_training = model.training
    model.eval()
    zs, preds = [], []
    try:
        with torch.no_grad():
            for start in range(0, len(images), batch_size):
                out = model(to_tensor(images[start : start + batch_size]))
                zs.append(out.z.numpy())
                preds.append(out.logits.argmax(1).numpy())
    finally:
        model.train(was_training)
    if not zs:
        return np.empty((0, model.representation_dim), np.float32), np.empty(0, np.int64)
    return np.concatenate(zs), np.concatenate(preds)


def prediction_set(model: ViewModel, dataset: MultiViewDataset, view: str, model_id: str = "") -> PredictionSet:
    """Predictions for one view of every pair, in canonical (ascending pair id) order."""
    ds = dataset.canonical_order()
    col = 0 if view == "a" else 1
    source = ds.view_a if col == 0 else ds.view_b
    unique, inverse = np.unique(ds.pairs[:, col], return_inverse=True)
    preds = predict(model, source.images[unique])[inverse]
    return PredictionSet(ds.pair_ids, preds, ds.labels, model_id)


def view_accuracy(model: ViewModel, dataset: MultiViewDataset, view: str) -> float:
    """Accuracy over the distinct instances of one view referenced by ``dataset``."""
    images, _ = dataset.view(view)
    return float(np.mean(predict(model, images.images) == images.labels))


def _evaluate_single(model: ViewModel, x: torch.Tensor, y: torch.Tensor, batch_size: int = 512) -> tuple[float, float]:
    model.eval()
    total, correct = 0.0, 0
    with torch.no_grad():
        for idx in _batches(len(y), batch_size, None):
            logits = model(x[idx]).logits
            total += F.cross_entropy(logits, y[idx], reduction="sum").item()
            correct += int((logits.argmax(1) == y[idx]).sum())
    model.train()
    return total / len(y), correct / len(y)


# ---------------------------------------------------------------------------
# single-encoder paradigms


def train_supervised(
    train: LabeledImageSet,
    cfg: TrainConfig,
    val: LabeledImageSet | None = None,
    out_dir: str | Path | None = None,
    paradigm: str | None = None,
) -> TrainedModel:
    """Train one encoder + classification head with cross-entropy."""
    if len(train) < 2:
        raise InvalidInputError("need at least two training samples")
    paradigm = paradigm or cfg.paradigm
    out_dir = Path(out_dir) if out_dir is not None else None
    gen = _seed_everything(cfg)
    spec = encoder_spec_for(cfg, train.image_shape)
    meta = {"paradigm": paradigm, "seed": cfg.seed, "fold": cfg.fold, "config_hash": cfg.hash()}
    model = ViewModel(spec, train.class_count, seed=cfg.seed, metadata=meta)
    opt = _make_optimizer(model.parameters(), cfg)
    x, y = to_tensor(train.images), torch.from_numpy(train.labels)
    if val is not None:
        xv, yv = to_tensor(val.images), torch.from_numpy(val.labels)
    record = RunRecord(paradigm, cfg.hash())
    best = (-1.0, None)
    start = time.perf_counter()
    model.train()
    for epoch in range(1, cfg.epochs + 1):
        loss_sum, correct, seen = 0.0, 0, 0
        for step, idx in enumerate(_batches(len(y), cfg.batch_size, gen)):
            out = model(x[idx])
            loss = F.cross_entropy(out.logits, y[idx])
            if not torch.isfinite(loss):
                raise _diverged(out_dir, {
                    "epoch": epoch, "step": step, "components": {"ce": loss.item()},
                    "batch": idx.tolist(), "config": cfg.to_dict(),
                })
            opt.zero_grad()
            loss.backward()
            opt.step()
            loss_sum += loss.item() * len(idx)
            correct += int((out.logits.argmax(1) == y[idx]).sum())
            seen += len(idx)
        row = {"epoch": epoch, "train_loss": loss_sum / seen, "train_acc": correct / seen}
        if val is not None:
            row["val_loss"], row["val_acc"] = _evaluate_single(model, xv, yv)
            if cfg.select_best and row["val_acc"] > best[0]:
                best = (row["val_acc"], copy.deepcopy(model.state_dict()))
        record.history.append(row)
        log.info("%s epoch %d %s", paradigm, epoch, row)
    if cfg.select_best and best[1] is not None:
        model.load_state_dict(best[1])
    record.wall_clock = time.perf_counter() - start
    model.eval()
    if out_dir is not None:
        record.checkpoints.append(str(save_model(model, out_dir / "model.pt")))
        record.write(out_dir)
    return TrainedModel(model, record)


def train_upsl(
    train: MultiViewDataset | LabeledImageSet,
    cfg: TrainConfig,
    val: MultiViewDataset | LabeledImageSet | None = None,
    view: str = "a",
    out_dir: str | Path | None = None,
) -> TrainedModel:
    """Single-view supervised learning on one view of a paired dataset."""
    if isinstance(train, MultiViewDataset):
        train = train.view(view)[0]
    if isinstance(val, MultiViewDataset):
        val = val.view(view)[0]
    return train_supervised(train, cfg, val, out_dir, paradigm="UPSL")


def merge_views(ds: MultiViewDataset) -> LabeledImageSet:
    """Union of both views' referenced samples (twice the single-view size)."""
    a, _ = ds.view("a")
    b, _ = ds.view("b")
    if a.image_shape != b.image_shape:
        raise InvalidInputError(
            f"views have different image shapes {a.image_shape} and {b.image_shape}; "
            "a shared encoder needs a common input shape"
        )
    return LabeledImageSet(
        np.concatenate([a.images, b.images]), np.concatenate([a.labels, b.labels]), a.class_count
    )


def train_mpsl(
    train: MultiViewDataset,
    cfg: TrainConfig,
    val: MultiViewDataset | None = None,
    out_dir: str | Path | None = None,
) -> TrainedModel:
    """One encoder trained on the union of both views."""
    merged_val = merge_views(val) if val is not None else None
    return train_supervised(merge_views(train), cfg, merged_val, out_dir, paradigm="MPSL")


# ---------------------------------------------------------------------------
# contrastive paradigm


def _pxl_step(model_i, model_j, xa, xb, y, obj: ObjectiveConfig):
    out_a, out_b = model_i(xa), model_j(xb)
    sup = supervised_loss(out_a.logits, out_b.logits, y)
    con = contrastive_loss(model_i.project(out_a.z), model_j.project(out_b.z), obj)
    return pxl_objective(sup, con, obj.lam), sup, con, out_a, out_b


def train_pxl(
    train: MultiViewDataset,
    cfg: TrainConfig,
    val: MultiViewDataset | None = None,
    out_dir: str | Path | None = None,
    step_hook: Callable[[dict[str, Any]], None] | None = None,
) -> TrainedModelPair:
    """Two encoders trained jointly on the weighted supervised + contrastive objective.

    Every batch is a set of pair rows, so row r of both views' embeddings is a
    positive pair.  ``step_hook`` receives the loss components of each step.
    """
    obj = cfg.objective
    if obj is None:
        raise ConfigError("objective", "PXL needs an objective config")
    out_dir = Path(out_dir) if out_dir is not None else None
    gen = _seed_everything(cfg)
    spec_a = encoder_spec_for(cfg, train.view_a.image_shape)
    spec_b = encoder_spec_for(cfg, train.view_b.image_shape)
    meta = {"paradigm": "PXL", "seed": cfg.seed, "fold": cfg.fold, "config_hash": cfg.hash()}
    model_i = ViewModel(spec_a, train.class_count, obj.projection_head, seed=cfg.seed, metadata={**meta, "view": "a"})
    model_j = ViewModel(spec_b, train.class_count, obj.projection_head, seed=cfg.seed + 1, metadata={**meta, "view": "b"})
    if model_i.representation_dim != model_j.representation_dim:
        raise InvalidInputError("both encoders must share a representation dimension")
    opt = _make_optimizer(list(model_i.parameters()) + list(model_j.parameters()), cfg)
    xa_all, xb_all = to_tensor(train.view_a.images), to_tensor(train.view_b.images)
    pairs = torch.from_numpy(train.pairs)
    labels = torch.from_numpy(train.labels)
    batch_size = len(train) if obj.nce_scope == "full_set" else cfg.batch_size
    record = RunRecord("PXL", cfg.hash())
    best = (-1.0, None)
    start = time.perf_counter()
    model_i.train()
    model_j.train()
    for epoch in range(1, cfg.epochs + 1):
        sums = {"loss": 0.0, "sup": 0.0, "con": 0.0}
        correct_a = correct_b = seen = 0
        for step, idx in enumerate(_batches(len(train), batch_size, gen)):
            p = pairs[idx]
            y = labels[idx]
            loss, sup, con, out_a, out_b = _pxl_step(model_i, model_j, xa_all[p[:, 0]], xb_all[p[:, 1]], y, obj)
            comps = {"loss": loss.item(), "sup": sup.item(), "con": con.item()}
            if not math.isfinite(comps["loss"]):
                raise _diverged(out_dir, {
                    "epoch": epoch, "step": step, "components": comps,
                    "batch": idx.tolist(), "config": cfg.to_dict(),
                })
            opt.zero_grad()
            loss.backward()
            opt.step()
            if step_hook is not None:
                step_hook({"epoch": epoch, "step": step, **comps})
            for key in sums:
                sums[key] += comps[key] * len(idx)
            correct_a += int((out_a.logits.argmax(1) == y).sum())
            correct_b += int((out_b.logits.argmax(1) == y).sum())
            seen += len(idx)
        row = {"epoch": epoch, **{f"train_{k}": v / seen for k, v in sums.items()}}
        row["train_acc_a"], row["train_acc_b"] = correct_a / seen, correct_b / seen
        if val is not None:
            row.update(_evaluate_pxl(model_i, model_j, val, obj))
            score = 0.5 * (row["val_acc_a"] + row["val_acc_b"])
            if cfg.select_best and score > best[0]:
                best = (score, (copy.deepcopy(model_i.state_dict()), copy.deepcopy(model_j.state_dict())))
        record.history.append(row)
        log.info("PXL epoch %d %s", epoch, row)
    if cfg.select_best and best[1] is not None:
        model_i.load_state_dict(best[1][0])
        model_j.load_state_dict(best[1][1])
    record.wall_clock = time.perf_counter() - start
    model_i.eval()
    model_j.eval()
    if out_dir is not None:
        record.checkpoints += [
            str(save_model(model_i, out_dir / "model_a.pt")),
            str(save_model(model_j, out_dir / "model_b.pt")),
        ]
        record.write(out_dir)
    return TrainedModelPair(model_i, model_j, record)


def _evaluate_pxl(model_i, model_j, val: MultiViewDataset, obj: ObjectiveConfig, batch_size: int = 512):
    model_i.eval()
    model_j.eval()
    xa, xb = val.pair_images(np.arange(len(val)))
    xa, xb, y = to_tensor(xa), to_tensor(xb), torch.from_numpy(val.labels)
    total = 0.0
    counted = 0
    correct_a = correct_b = 0
    with torch.no_grad():
        for idx in _batches(len(val), batch_size, None):
            if len(idx) < 2:
                continue
            loss, _, _, out_a, out_b = _pxl_step(model_i, model_j, xa[idx], xb[idx], y[idx], obj)
            total += loss.item() * len(idx)
            counted += len(idx)
            correct_a += int((out_a.logits.argmax(1) == y[idx]).sum())
            correct_b += int((out_b.logits.argmax(1) == y[idx]).sum())
    model_i.train()
    model_j.train()
    return {
        "val_loss": total / max(counted, 1),
        "val_acc_a": correct_a / max(counted, 1),
        "val_acc_b": correct_b / max(counted, 1),
    }


# ---------------------------------------------------------------------------
# cross-validation


@dataclass
class FoldModels:
    """Trained models of one fold: the model reading view a and the one reading view b."""

    fold: int
    model_a: ViewModel
    model_b: ViewModel
    records: list[RunRecord]


def train_fold(bench: MultiViewBenchmark, cfg: TrainConfig, fold: int, out_dir: Path | None = None) -> FoldModels:
    cfg = replace(cfg, fold=fold)
    train, val = bench.split(fold)
    sub = (lambda name: out_dir / name) if out_dir is not None else (lambda name: None)
    if cfg.paradigm == "UPSL":
        ra = train_upsl(train, cfg, val, "a", sub("view_a"))
        rb = train_upsl(train, replace(cfg, seed=cfg.seed + 1), val, "b", sub("view_b"))
        return FoldModels(fold, ra.model, rb.model, [ra.record, rb.record])
    if cfg.paradigm == "MPSL":
        r = train_mpsl(train, cfg, val, sub("merged"))
        return FoldModels(fold, r.model, r.model, [r.record])
    r = train_pxl(train, cfg, val, sub("pxl"))
    return FoldModels(fold, r.model_i, r.model_j, [r.record])


def load_fold(out_dir: Path, paradigm: str, fold: int) -> FoldModels:
    out_dir = Path(out_dir)
    if paradigm == "UPSL":
        dirs = [out_dir / "view_a", out_dir / "view_b"]
        a, b = (load_model(d / "model.pt") for d in dirs)
    elif paradigm == "MPSL":
        dirs = [out_dir / "merged"]
        a = b = load_model(dirs[0] / "model.pt")
    else:
        dirs = [out_dir / "pxl"]
        a, b = load_model(dirs[0] / "model_a.pt"), load_model(dirs[0] / "model_b.pt")
    return FoldModels(fold, a, b, [RunRecord.read(d) for d in dirs])


@dataclass
class ResultTable:
    rows: list[dict[str, Any]]

    def metrics(self) -> list[str]:
        keys = []
        for row in self.rows:
            keys += [k for k, v in row.items() if k not in keys and k != "fold" and isinstance(v, (int, float))]
        return keys

    def aggregate(self) -> dict[str, dict[str, float | None]]:
        """Mean and sample std over folds; std is None for a single fold."""
        out = {}
        for key in self.metrics():
            vals = np.array([row[key] for row in self.rows if key in row], dtype=float)
            out[key] = {
                "mean": float(vals.mean()),
                "std": float(vals.std(ddof=1)) if len(vals) > 1 else None,
                "n": int(len(vals)),
            }
        return out


def cross_validate(
    bench: MultiViewBenchmark,
    cfg: TrainConfig,
    folds: list[int] | None = None,
    out_dir: str | Path | None = None,
    evaluate: Callable[[FoldModels, MultiViewBenchmark], dict[str, Any]] | None = None,
) -> ResultTable:
    """Train (and optionally evaluate) each fold.

    With ``out_dir`` every finished fold leaves ``fold_<k>/done.json`` holding
    the config hash and its metrics; a rerun skips folds whose hash matches.
    """
    folds = list(range(bench.folds.k)) if folds is None else list(folds)
    for f in folds:
        if not 0 <= f < bench.folds.k:
            raise InvalidInputError(f"fold {f} is outside the dataset's {bench.folds.k} folds")
    if len(bench.folds.fold_of_sample) != len(bench.pool):
        raise InvalidInputError("fold assignment does not match the dataset manifest")
    rows = []
    for f in folds:
        fold_dir = Path(out_dir) / f"fold_{f}" if out_dir is not None else None
        h = replace(cfg, fold=f).hash()
        done = fold_dir / "done.json" if fold_dir is not None else None
        if done is not None and done.exists() and read_json(done).get("config_hash") == h:
            log.info("fold %d already complete, skipping", f)
            rows.append(read_json(done)["metrics"])
            continue
        models = train_fold(bench, cfg, f, fold_dir)
        metrics = {"fold": f}
        metrics.update(evaluate(models, bench) if evaluate else default_metrics(models, bench))
        if done is not None:
            write_json(done, {"config_hash": h, "config": replace(cfg, fold=f).to_dict(), "metrics": metrics})
        rows.append(metrics)
    return ResultTable(rows)


def default_metrics(models: FoldModels, bench: MultiViewBenchmark) -> dict[str, float]:
    return {
        "test_acc_a": view_accuracy(models.model_a, bench.test, "a"),
        "test_acc_b": view_accuracy(models.model_b, bench.test, "b"),
    }
