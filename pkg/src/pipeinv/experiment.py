"""Config-driven experiments: dataset build, cross-validated runs, metrics and reports.

An experiment file (YAML) names one dataset, a base training config, a list of
runs (paradigm plus overrides), the seeds and folds to cover and the
evaluation settings.  Results land in one directory::

    <out>/manifest.json
    <out>/<run>/seed_<s>/fold_<k>/{done.json, cka_between.csv, checkpoints}
    <out>/<run>/seed_<s>/results.json
    <out>/metrics.json
    <out>/complete.json
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
import platform
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import __version__
from .arrayio import array_fingerprint, config_hash, read_json, write_json
from .datasets import (
    MultiViewBenchmark,
    TransformSpec,
    data_root,
    load_benchmark,
    load_corpus,
    make_mnist_svhn,
    make_synthetic_benchmark,
    make_two_view_mnist,
    save_benchmark,
    stratified_subsample,
)
from .encoders import ProjectionHeadSpec
from .errors import ConfigError, InvalidInputError, PipeinvError
from .evaluation import (
    CKAMatrix,
    cka_matrix,
    linear_probe_transfer,
    mutual_agreement,
)
from .objectives import ObjectiveConfig
from .training import (
    PARADIGMS,
    FoldModels,
    ResultTable,
    TrainConfig,
    cross_validate,
    load_fold,
    prediction_set,
    view_accuracy,
)

log = logging.getLogger(__name__)

DATASET_KINDS = ("two_view_mnist", "mnist_svhn", "synthetic")


class ExperimentError(PipeinvError, RuntimeError):
    """Runtime failure inside an experiment, with run/seed/fold context in the message."""


# ---------------------------------------------------------------------------
# schema


def _check_keys(data: Mapping, allowed, path: str) -> None:
    if not isinstance(data, Mapping):
        raise ConfigError(path, f"expected a mapping, got {type(data).__name__}")
    for key in data:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}" if path else str(key), "unknown field")


def _build(cls, data: Mapping, path: str):
    names = {f.name for f in fields(cls)}
    _check_keys(data, names, path)
    try:
        return cls(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as err:
        raise ConfigError(path, str(err)) from None


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "two_view_mnist"
    corpus: str = "mnist"
    corpus_b: str = "svhn"
    subsample: float = 1.0
    folds: int = 5
    seed: int = 0
    pairs_per_instance: int = 20
    max_angle: float = math.pi / 4
    transforms: tuple = ()
    view_pair: tuple = (0, 1)
    root: str | None = None

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ConfigError("dataset.kind", f"must be one of {DATASET_KINDS}")
        if not 0 < self.subsample <= 1:
            raise ConfigError("dataset.subsample", "must lie in (0, 1]")
        if int(self.folds) < 2:
            raise ConfigError("dataset.folds", "need at least 2 folds")
        if int(self.pairs_per_instance) < 1:
            raise ConfigError("dataset.pairs_per_instance", "must be positive")
        object.__setattr__(self, "transforms", tuple(self.transforms))
        object.__setattr__(self, "view_pair", tuple(self.view_pair))
        if self.kind == "synthetic":
            if len(self.transforms) < 2:
                raise ConfigError("dataset.transforms", "need at least two transform descriptors")
            for i, t in enumerate(self.transforms):
                try:
                    TransformSpec.coerce(t)
                except ConfigError as err:
                    raise ConfigError(f"dataset.transforms[{i}]", str(err).split(": ", 1)[-1]) from None
            if len(self.view_pair) != 2 or not all(0 <= v < len(self.transforms) for v in self.view_pair):
                raise ConfigError("dataset.view_pair", "must name two of the declared transforms")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["transforms"] = [TransformSpec.coerce(t).to_dict() for t in self.transforms]
        d["view_pair"] = list(self.view_pair)
        d.pop("root")  # where the data lives does not change the experiment
        return d


@dataclass(frozen=True)
class EvaluationConfig:
    cka: bool = True
    cka_batch: int = 8
    cka_samples: int = 200
    cka_seed: int = 0
    probe: bool = True
    probe_max_train: int | None = 10000
    probe_c: float = 1.0
    probe_max_iter: int = 1000

    def __post_init__(self):
        if int(self.cka_batch) < 4:
            raise ConfigError("evaluation.cka_batch", "must be >= 4")
        if int(self.cka_samples) < int(self.cka_batch):
            raise ConfigError("evaluation.cka_samples", "must hold at least one minibatch")
        if self.probe_max_train is not None and int(self.probe_max_train) < 2:
            raise ConfigError("evaluation.probe_max_train", "must be >= 2")
        if not self.probe_c > 0:
            raise ConfigError("evaluation.probe_c", "must be positive")


TRAIN_KEYS = ("epochs", "batch_size", "learning_rate", "optimizer", "encoder", "select_best", "threads")
OBJECTIVE_KEYS = (
    "lambda", "critic_scale", "clip", "penalty_weight", "projection_head", "nce_scope",
    "include_positive_in_denominator",
)


def objective_from_dict(data: Mapping, path: str = "objective") -> ObjectiveConfig:
    _check_keys(data, OBJECTIVE_KEYS, path)
    kw = dict(data)
    if "lambda" in kw:
        kw["lam"] = kw.pop("lambda")
    head = kw.get("projection_head")
    if isinstance(head, str):
        kw["projection_head"] = ProjectionHeadSpec(head)
    elif isinstance(head, Mapping):
        _check_keys(head, ("kind", "width"), f"{path}.projection_head")
        kw["projection_head"] = ProjectionHeadSpec(**head)
    try:
        return ObjectiveConfig(**kw)
    except ConfigError as err:
        raise ConfigError(err.field.replace("objective", path, 1), str(err).split(": ", 1)[-1]) from None
    except (TypeError, ValueError) as err:
        raise ConfigError(path, str(err)) from None


@dataclass(frozen=True)
class RunSpec:
    name: str
    paradigm: str
    train: Mapping[str, Any] = field(default_factory=dict)
    objective: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    dataset: DatasetConfig
    runs: tuple
    train: Mapping[str, Any] = field(default_factory=dict)
    objective: Mapping[str, Any] = field(default_factory=dict)
    seeds: tuple = (0,)
    folds: tuple | None = None
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    output: str | None = None

    def train_config(self, run: RunSpec, seed: int) -> TrainConfig:
        """Fully resolved training config of one run at one seed."""
        base = {**dict(self.train), **dict(run.train)}
        obj = None
        if run.paradigm == "PXL":
            obj = objective_from_dict({**dict(self.objective), **dict(run.objective)}, f"runs.{run.name}.objective")
        try:
            return TrainConfig(paradigm=run.paradigm, seed=int(seed), objective=obj, **base)
        except ConfigError as err:
            raise ConfigError(
                err.field.replace("train", f"runs.{run.name}.train", 1), str(err).split(": ", 1)[-1]
            ) from None

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "dataset": self.dataset.to_dict(),
            "runs": [
                {"name": r.name, "config": self.train_config(r, 0).to_dict() | {"seed": None}} for r in self.runs
            ],
            "seeds": list(self.seeds),
            "folds": None if self.folds is None else list(self.folds),
            "evaluation": asdict(self.evaluation),
        }

    def hash(self) -> str:
        return config_hash(self.to_dict())

    @classmethod
    def from_dict(cls, data: Mapping) -> "ExperimentConfig":
        _check_keys(data, {f.name for f in fields(cls)}, "")
        if "name" not in data:
            raise ConfigError("name", "required")
        if not data.get("runs"):
            raise ConfigError("runs", "at least one run is required")
        dataset = _build(DatasetConfig, data.get("dataset") or {}, "dataset")
        evaluation = _build(EvaluationConfig, data.get("evaluation") or {}, "evaluation")
        train = dict(data.get("train") or {})
        _check_keys(train, TRAIN_KEYS, "train")
        objective = dict(data.get("objective") or {})
        objective_from_dict(objective, "objective")
        runs = []
        for i, r in enumerate(data["runs"]):
            path = f"runs[{i}]"
            _check_keys(r, ("name", "paradigm", "train", "objective"), path)
            if r.get("paradigm") not in PARADIGMS:
                raise ConfigError(f"{path}.paradigm", f"must be one of {PARADIGMS}")
            run = RunSpec(str(r.get("name") or r["paradigm"].lower()), r["paradigm"], r.get("train") or {}, r.get("objective") or {})
            _check_keys(run.train, TRAIN_KEYS, f"{path}.train")
            _check_keys(run.objective, OBJECTIVE_KEYS, f"{path}.objective")
            runs.append(run)
        if len({r.name for r in runs}) != len(runs):
            raise ConfigError("runs", "run names must be unique")
        seeds = data.get("seeds", [0])
        seeds = [seeds] if isinstance(seeds, int) else list(seeds)
        if not seeds:
            raise ConfigError("seeds", "at least one seed is required")
        folds = data.get("folds")
        if folds is not None:
            folds = [folds] if isinstance(folds, int) else list(folds)
            for f in folds:
                if not 0 <= int(f) < dataset.folds:
                    raise ConfigError("folds", f"fold {f} outside 0..{dataset.folds - 1}")
        cfg = cls(
            str(data["name"]), dataset, tuple(runs), train, objective, tuple(int(s) for s in seeds),
            None if folds is None else tuple(int(f) for f in folds), evaluation, data.get("output"),
        )
        for run in cfg.runs:
            cfg.train_config(run, cfg.seeds[0])  # surface field errors now, not mid-run
        return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    import yaml

    path = Path(path)
    if not path.exists():
        raise ConfigError("config", f"{path} does not exist")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as err:
        raise ConfigError("config", f"not valid YAML: {err}") from None
    return ExperimentConfig.from_dict(data or {})


# ---------------------------------------------------------------------------
# datasets


def build_dataset(dc: DatasetConfig, cache_dir: str | Path | None = None) -> tuple[MultiViewBenchmark, Path]:
    """Build (or load from the cache) the benchmark described by ``dc``."""
    key = config_hash(dc.to_dict())
    cache = Path(cache_dir) if cache_dir is not None else data_root(dc.root) / "benchmarks" / key
    if (cache / "manifest.json").exists():
        return load_benchmark(cache), cache
    log.info("building %s dataset into %s", dc.kind, cache)
    corpus = load_corpus(dc.corpus, dc.root)
    if dc.kind == "two_view_mnist":
        bench = make_two_view_mnist(corpus, dc.seed, dc.folds, dc.subsample, dc.max_angle)
    elif dc.kind == "mnist_svhn":
        bench = make_mnist_svhn(corpus, load_corpus(dc.corpus_b, dc.root), dc.seed, dc.pairs_per_instance, dc.folds, dc.subsample)
    else:
        bench = make_synthetic_benchmark(corpus, list(dc.transforms), dc.seed, dc.folds, dc.subsample, dc.view_pair)
    save_benchmark(bench, cache)
    return bench, cache


def benchmark_fingerprint(bench: MultiViewBenchmark) -> dict[str, str]:
    return {
        f"{tag}_{v}": array_fingerprint(getattr(ds, f"view_{v}").images)
        for tag, ds in (("pool", bench.pool), ("test", bench.test))
        for v in ("a", "b")
    }


# ---------------------------------------------------------------------------
# per-fold measurement


def cka_sample(bench: MultiViewBenchmark, ev: EvaluationConfig) -> np.ndarray:
    """Row indices (canonical order) of the held-out pairs used for CKA."""
    test = bench.test.canonical_order()
    m = min(ev.cka_samples, len(test))
    rng = np.random.default_rng(ev.cka_seed)
    return np.sort(rng.choice(len(test), size=m, replace=False))


def between_view_cka(models: FoldModels, bench: MultiViewBenchmark, ev: EvaluationConfig, seed: int | None = None) -> CKAMatrix:
    """Layer-by-layer CKA of the view-a model on view a against the view-b model on view b."""
    test = bench.test.canonical_order()
    idx = cka_sample(bench, ev)
    xa, xb = test.pair_images(idx)
    return cka_matrix(
        models.model_a, models.model_b, xa, xb, test.pair_ids[idx],
        n=ev.cka_batch, seed=ev.cka_seed if seed is None else seed,
    )


def _probe_split(view, ev: EvaluationConfig, seed: int):
    if ev.probe_max_train is None or len(view) <= ev.probe_max_train:
        return view
    frac = ev.probe_max_train / len(view)
    return view.subset(stratified_subsample(view.labels, frac, seed))


def probe_metrics(models: FoldModels, bench: MultiViewBenchmark, fold: int, ev: EvaluationConfig) -> dict[str, float]:
    """Out-of-sample probes: each view's encoder, frozen, read out on the other view.

    Skipped for an encoder whose input shape differs from the other view's
    images (e.g. grayscale MNIST encoder vs RGB SVHN).
    """
    train, _ = bench.split(fold)
    out = {}
    for name, model, view in (("probe_a_on_b", models.model_a, "b"), ("probe_b_on_a", models.model_b, "a")):
        h, w, c = getattr(bench.test, f"view_{view}").image_shape
        if tuple(model.spec.input_shape) != (c, h, w):
            continue
        tr = _probe_split(train.view(view)[0], ev, ev.cka_seed)
        te = bench.test.view(view)[0]
        out[name] = linear_probe_transfer(model, tr, te, ev.probe_c, ev.probe_max_iter)
    return out


def fold_metrics(models: FoldModels, bench: MultiViewBenchmark, ev: EvaluationConfig) -> dict[str, Any]:
    test = bench.test
    pa = prediction_set(models.model_a, test, "a", "a")
    pb = prediction_set(models.model_b, test, "b", "b")
    metrics: dict[str, Any] = {
        "test_acc_a": view_accuracy(models.model_a, test, "a"),
        "test_acc_b": view_accuracy(models.model_b, test, "b"),
        "agreement": mutual_agreement(pa, pb),
    }
    if ev.probe:
        metrics.update(probe_metrics(models, bench, models.fold, ev))
    if ev.cka:
        mat = between_view_cka(models, bench, ev)
        metrics["cka_final"] = float(mat.values[-1, -1])
        metrics["cka"] = {
            "layers_a": mat.layers_a, "layers_b": mat.layers_b, "values": mat.values.tolist(),
            "n": mat.n, "seed": mat.seed, "k": mat.k,
        }
    return metrics


def write_cka_csv(entry: Mapping[str, Any], path: Path) -> Path:
    CKAMatrix(np.asarray(entry["values"]), entry["layers_a"], entry["layers_b"], entry["n"], entry["seed"], entry["k"]).to_csv(path)
    return path


# ---------------------------------------------------------------------------
# runner


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def _software() -> dict[str, str]:
    import sklearn
    import torch

    return {
        "pipeinv": __version__, "python": platform.python_version(), "numpy": np.__version__,
        "torch": torch.__version__, "scikit-learn": sklearn.__version__,
    }


def run_dir(out: Path, run: RunSpec, seed: int) -> Path:
    return out / run.name / f"seed_{seed}"


def run_experiment(
    config: ExperimentConfig,
    out: str | Path | None = None,
    seeds=None,
    folds=None,
    resume: bool = False,
    dataset_cache: str | Path | None = None,
) -> tuple[Path, bool]:
    """Run every (run, seed, fold) of an experiment.

    Returns the output directory and whether work was done (``False`` when the
    directory already held the completed experiment).
    """
    if seeds is not None:
        config = replace(config, seeds=tuple(int(s) for s in seeds))
    if folds is not None:
        for f in folds:
            if not 0 <= int(f) < config.dataset.folds:
                raise ConfigError("folds", f"fold {f} outside 0..{config.dataset.folds - 1}")
        config = replace(config, folds=tuple(int(f) for f in folds))
    out = Path(out or config.output or Path("runs") / config.name)
    h = config.hash()
    complete = out / "complete.json"
    if complete.exists() and read_json(complete).get("config_hash") == h:
        return out, False
    manifest_path = out / "manifest.json"
    if manifest_path.exists():
        previous = read_json(manifest_path)
        if previous.get("config_hash") != h:
            raise ExperimentError(f"{out} holds a different experiment (config hash {previous.get('config_hash')})")
        if not resume:
            raise ExperimentError(f"{out} holds an unfinished run of this experiment; pass --resume to continue it")

    bench, cache = build_dataset(config.dataset, dataset_cache)
    fold_list = list(config.folds) if config.folds is not None else list(range(bench.folds.k))
    manifest = {
        "experiment": config.name,
        "config": config.to_dict(),
        "config_hash": h,
        "dataset": {"cache": str(cache), "fingerprints": benchmark_fingerprint(bench), "config": bench.config},
        "seeds": list(config.seeds),
        "folds": fold_list,
        "software": _software(),
        "started": _now(),
        "finished": None,
        "outputs": [],
    }
    write_json(manifest_path, manifest)

    summary: dict[str, Any] = {}
    outputs: list[str] = []
    ev = config.evaluation
    for run in config.runs:
        for seed in config.seeds:
            cfg = config.train_config(run, seed)
            rdir = run_dir(out, run, seed)
            rows = []
            for f in fold_list:
                try:
                    table = cross_validate(bench, cfg, [f], rdir, lambda m, b: fold_metrics(m, b, ev))
                except ConfigError:
                    raise
                except Exception as err:
                    raise ExperimentError(f"run {run.name} seed {seed} fold {f}: {err}") from err
                row = table.rows[0]
                if "cka" in row:
                    outputs.append(str(write_cka_csv(row["cka"], rdir / f"fold_{f}" / "cka_between.csv")))
                outputs.append(str(rdir / f"fold_{f}" / "done.json"))
                rows.append(row)
            result = {
                "run": run.name, "paradigm": run.paradigm, "seed": seed, "config": cfg.to_dict(),
                "config_hash": cfg.hash(), "rows": rows, "aggregate": ResultTable(rows).aggregate(),
            }
            write_json(rdir / "results.json", result)
            outputs.append(str(rdir / "results.json"))
            summary.setdefault(run.name, {})[str(seed)] = result["aggregate"]
    write_json(out / "metrics.json", summary)
    manifest["outputs"] = outputs + [str(out / "metrics.json")]
    manifest["finished"] = _now()
    write_json(manifest_path, manifest)
    write_json(complete, {"config_hash": h, "finished": manifest["finished"]})
    return out, True


def load_results_config(out: str | Path) -> ExperimentConfig:
    """Rebuild the experiment config recorded in a results directory's manifest."""
    manifest = read_json(Path(out) / "manifest.json")
    snap = manifest["config"]
    runs = []
    for r in snap["runs"]:
        c = r["config"]
        train = {k: c[k] for k in TRAIN_KEYS}
        runs.append({"name": r["name"], "paradigm": c["paradigm"], "train": train, "objective": c["objective"] or {}})
    data = {
        "name": snap["name"], "dataset": snap["dataset"], "runs": runs, "seeds": snap["seeds"],
        "folds": manifest["folds"], "evaluation": snap["evaluation"],
    }
    return ExperimentConfig.from_dict(data)


def _completed_folds(out: Path):
    for done in sorted(out.glob("*/seed_*/fold_*/done.json")):
        yield done.parent.parent.parent.name, int(done.parent.parent.name[5:]), int(done.parent.name[5:]), done.parent


def recompute(out: str | Path, what: str, seed: int | None = None, folds=None, dataset_cache=None) -> list[Path]:
    """Recompute CKA grids (``what='cka'``) or probe accuracies (``'probe'``) from stored checkpoints."""
    out = Path(out)
    config = load_results_config(out)
    bench, _ = build_dataset(config.dataset, dataset_cache)
    written = []
    paradigms = {r.name: r.paradigm for r in config.runs}
    for run, _seed, fold, fdir in _completed_folds(out):
        if folds is not None and fold not in folds:
            continue
        models = load_fold(fdir, paradigms[run], fold)
        if what == "cka":
            mat = between_view_cka(models, bench, config.evaluation, seed)
            name = "cka_between.csv" if seed is None else f"cka_between_seed{seed}.csv"
            mat.to_csv(fdir / name)
            written.append(fdir / name)
        else:
            written.append(write_json(fdir / "probe.json", probe_metrics(models, bench, fold, config.evaluation)))
    if not written:
        raise InvalidInputError(f"no completed folds under {out}")
    return written


# ---------------------------------------------------------------------------
# report


def _fmt(x) -> str:
    return "" if x is None else f"{x:.6f}"


def _stats(vals: list[float]) -> dict[str, Any]:
    arr = np.asarray(vals, dtype=float)
    return {"mean": float(arr.mean()), "std": float(arr.std(ddof=1)) if len(arr) > 1 else None, "n": len(arr)}


def emit_report(out: str | Path, report_dir: str | Path | None = None) -> Path:
    """Summaries derived only from the completed folds found under ``out``.

    Writes ``aggregate.csv`` (mean and sample std over folds; std left blank
    for a single fold), ``metric_<name>.csv`` per metric, mean CKA grids per
    run and seed, an accuracy table with one row per run and one column per
    view, a paired per-seed final-layer CKA table and, when PXL runs differ
    only in lambda, a lambda-sweep series.
    """
    out = Path(out)
    folds = list(_completed_folds(out)) if out.is_dir() else []
    if not folds:
        raise InvalidInputError(f"no completed folds under {out}")
    report = Path(report_dir) if report_dir is not None else out / "report"
    (report / "cka").mkdir(parents=True, exist_ok=True)

    records: dict[tuple[str, int], list[dict]] = {}
    meta: dict[str, dict] = {}
    for run, seed, fold, fdir in folds:
        done = read_json(fdir / "done.json")
        records.setdefault((run, seed), []).append(done["metrics"])
        cfg = done.get("config") or {}
        obj = cfg.get("objective") or {}
        meta[run] = {"paradigm": cfg.get("paradigm", ""), "lambda": obj.get("lambda")}

    metric_names: list[str] = []
    for rows in records.values():
        for k in ResultTable(rows).metrics():
            if k not in metric_names:
                metric_names.append(k)

    def pooled(run: str, key: str) -> dict[str, Any] | None:
        vals = [r[key] for (rn, _), rows in records.items() if rn == run for r in rows if key in r]
        return _stats(vals) if vals else None

    with open(report / "aggregate.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "paradigm", "lambda", "seed", "metric", "mean", "std", "n"])
        for (run, seed), rows in sorted(records.items()):
            for key, st in ResultTable(rows).aggregate().items():
                w.writerow([run, meta[run]["paradigm"], meta[run]["lambda"] if meta[run]["lambda"] is not None else "", seed, key, _fmt(st["mean"]), _fmt(st["std"]), st["n"]])
    for key in metric_names:
        with open(report / f"metric_{key}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["run", "seed", "mean", "std", "n"])
            for (run, seed), rows in sorted(records.items()):
                vals = [r[key] for r in rows if key in r]
                if vals:
                    st = _stats(vals)
                    w.writerow([run, seed, _fmt(st["mean"]), _fmt(st["std"]), st["n"]])

    # mean CKA grid per run and seed
    for (run, seed), rows in sorted(records.items()):
        grids = [r["cka"] for r in rows if "cka" in r]
        if grids:
            mean = np.mean([g["values"] for g in grids], axis=0)
            g = grids[0]
            CKAMatrix(mean, g["layers_a"], g["layers_b"], g["n"], g["seed"], g["k"]).to_csv(report / "cka" / f"{run}_seed{seed}.csv")

    runs = sorted({run for run, _ in records}, key=lambda r: (PARADIGMS.index(meta[r]["paradigm"]) if meta[r]["paradigm"] in PARADIGMS else 9, r))
    with open(report / "accuracy_table.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "paradigm", "view_a_mean", "view_a_std", "view_b_mean", "view_b_std", "n"])
        for run in runs:
            a, b = pooled(run, "test_acc_a"), pooled(run, "test_acc_b")
            if a and b:
                w.writerow([run, meta[run]["paradigm"], _fmt(a["mean"]), _fmt(a["std"]), _fmt(b["mean"]), _fmt(b["std"]), a["n"]])

    seeds_by_run = {run: {s for rn, s in records if rn == run} for run in runs}
    cka_runs = [r for r in runs if pooled(r, "cka_final")]
    if len(cka_runs) > 1:
        shared = sorted(set.intersection(*(seeds_by_run[r] for r in cka_runs)))
        with open(report / "paired_cka.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seed"] + cka_runs)
            for s in shared:
                w.writerow([s] + [_fmt(float(np.mean([r["cka_final"] for r in records[(run, s)] if "cka_final" in r]))) for run in cka_runs])

    sweep = [r for r in runs if meta[r]["paradigm"] == "PXL" and meta[r]["lambda"] is not None]
    if len({meta[r]["lambda"] for r in sweep}) > 1:
        with open(report / "lambda_sweep.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda", "run", "test_acc_a", "test_acc_b", "agreement", "cka_final", "n"])
            for run in sorted(sweep, key=lambda r: meta[r]["lambda"]):
                cols = [pooled(run, k) for k in ("test_acc_a", "test_acc_b", "agreement", "cka_final")]
                w.writerow([meta[run]["lambda"], run] + [_fmt(c["mean"]) if c else "" for c in cols] + [cols[0]["n"] if cols[0] else 0])
    return report
