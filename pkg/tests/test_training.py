import json
import shutil
from dataclasses import replace

import numpy as np
import pytest
import torch

from pipeinv import training
from pipeinv.datasets import LabeledImageSet, make_synthetic_benchmark
from pipeinv.encoders import load_model, parameter_hash
from pipeinv.errors import ConfigError, InvalidInputError, TrainingDivergedError
from pipeinv.evaluation import accuracy
from pipeinv.objectives import ObjectiveConfig
from pipeinv.training import (
    PRESETS,
    ResultTable,
    RunRecord,
    TrainConfig,
    cross_validate,
    merge_views,
    predict,
    prediction_set,
    preset,
    train_mpsl,
    train_pxl,
    train_upsl,
    view_accuracy,
)

from conftest import pattern_images, toy_corpus

FAST = dict(epochs=3, batch_size=16, learning_rate=1e-3)


@pytest.fixture(scope="module")
def bench():
    return make_synthetic_benchmark(toy_corpus(n_train=100, n_test=40, size=32), ["identity", "additive_noise"], seed=0)


@pytest.fixture(scope="module")
def identity_bench():
    return make_synthetic_benchmark(
        toy_corpus(n_train=200, n_test=200, size=32, seed=3), ["identity", "identity"], seed=1
    )


def pxl_cfg(lam=0.75, **kw):
    kw.setdefault("objective", ObjectiveConfig(lam=lam))
    return preset("natural_pxl", **{**FAST, **kw})


# -- configs -----------------------------------------------------------------


def test_presets():
    nat = PRESETS["natural_upsl"]
    assert (nat.batch_size, nat.learning_rate, nat.optimizer, nat.epochs) == (64, 4e-4, "radam", 200)
    mri = PRESETS["mri_upsl"]
    assert (mri.batch_size, mri.learning_rate, mri.epochs, mri.encoder) == (4, 1e-3, 200, "alexnet3d")
    assert (PRESETS["mri_mpsl"].batch_size, PRESETS["mri_mpsl"].learning_rate) == (32, 1e-3)
    px = PRESETS["mri_pxl"]
    assert (px.batch_size, px.learning_rate, px.optimizer) == (4, 1e-4, "adam")
    assert px.objective.lam == 0.75 and px.objective.projection_head.kind == "identity"


@pytest.mark.parametrize(
    "kw,field",
    [
        ({"epochs": 0}, "train.epochs"),
        ({"batch_size": 0}, "train.batch_size"),
        ({"learning_rate": 0.0}, "train.learning_rate"),
        ({"optimizer": "sgd"}, "train.optimizer"),
        ({"paradigm": "SSL"}, "train.paradigm"),
        ({"paradigm": "PXL"}, "objective"),
    ],
)
def test_config_validation(kw, field):
    with pytest.raises(ConfigError) as err:
        TrainConfig(**kw)
    assert err.value.field == field


def test_config_hash_tracks_fields():
    assert TrainConfig().hash() == TrainConfig().hash()
    assert TrainConfig().hash() != TrainConfig(seed=1).hash()
    assert pxl_cfg(0.5).hash() != pxl_cfg(0.75).hash()


# -- single encoder ------------------------------------------------------------


def test_separable_smoke():
    y = np.arange(50) % 2
    train = LabeledImageSet(pattern_images(y, size=32, seed=0, noise=0.3), y, 2)
    cfg = preset("natural_upsl", epochs=20, batch_size=10)
    result = train_upsl(train, cfg)
    assert float(np.mean(predict(result.model, train.images) == y)) >= 0.95
    assert len(result.record.history) == 20
    assert [r["epoch"] for r in result.record.history] == list(range(1, 21))


def test_loss_decreases(bench):
    train, val = bench.split(0)
    result = train_upsl(train, preset("natural_upsl", **FAST), val)
    hist = result.record.history
    assert hist[-1]["train_loss"] < hist[0]["train_loss"]
    assert {"val_loss", "val_acc"} <= set(hist[0])


def test_determinism(bench):
    train, _ = bench.split(0)
    cfg = preset("natural_upsl", **FAST)
    a = train_upsl(train, cfg, view="b")
    b = train_upsl(train, cfg, view="b")
    assert parameter_hash(a.model) == parameter_hash(b.model)
    c = train_upsl(train, replace(cfg, seed=5), view="b")
    assert parameter_hash(a.model) != parameter_hash(c.model)


def test_checkpoint_round_trip(bench, tmp_path):
    train, val = bench.split(1)
    result = train_upsl(train, preset("natural_upsl", **FAST), val, out_dir=tmp_path)
    loaded = load_model(tmp_path / "model.pt")
    assert view_accuracy(loaded, val, "a") == view_accuracy(result.model, val, "a")
    rec = RunRecord.read(tmp_path)
    assert rec.config_hash == result.record.config_hash
    assert (tmp_path / "epochs.csv").read_text().count("\n") == 1 + FAST["epochs"]


def test_mpsl_union(bench):
    train, _ = bench.split(0)
    merged = merge_views(train)
    assert len(merged) == 2 * len(train.view("a")[0])
    assert np.bincount(merged.labels).tolist() == (2 * np.bincount(train.view("a")[0].labels)).tolist()
    result = train_mpsl(train, preset("natural_mpsl", epochs=1, batch_size=32))
    assert result.record.paradigm == "MPSL"


def test_nan_loss_aborts(tmp_path):
    y = np.arange(8) % 2
    images = pattern_images(y, size=32)
    images[3] = np.nan
    with pytest.raises(TrainingDivergedError) as err:
        train_upsl(LabeledImageSet(images, y, 2), preset("natural_upsl", epochs=1, batch_size=8), out_dir=tmp_path)
    snap = json.loads((tmp_path / "diverged.json").read_text())
    assert snap["epoch"] == 1 and "ce" in snap["components"]
    assert err.value.snapshot_path is not None


def test_too_small():
    with pytest.raises(InvalidInputError):
        train_upsl(LabeledImageSet(pattern_images([0], size=32), np.array([0]), 2), preset("natural_upsl", epochs=1))


def test_mpsl_matches_upsl_on_identical_views(identity_bench):
    train, _ = identity_bench.split(0)
    # merged data is the same set twice, so MPSL takes twice the steps; compare after both converge
    cfg = dict(epochs=15, batch_size=32, learning_rate=1e-3)
    upsl = train_upsl(train, preset("natural_upsl", **cfg))
    mpsl = train_mpsl(train, preset("natural_mpsl", **cfg))
    acc_u = view_accuracy(upsl.model, identity_bench.test, "a")
    acc_m = view_accuracy(mpsl.model, identity_bench.test, "a")
    assert abs(acc_u - acc_m) <= 0.02


# -- contrastive -------------------------------------------------------------


def test_pxl_lambda_zero_freezes_classifiers(bench):
    train, _ = bench.split(0)
    torch.manual_seed(0)
    from pipeinv.encoders import ViewModel

    result = train_pxl(train, pxl_cfg(0.0, epochs=1))
    spec = result.model_i.spec
    fresh_i = ViewModel(spec, 10, ObjectiveConfig().projection_head, seed=0)
    fresh_j = ViewModel(spec, 10, ObjectiveConfig().projection_head, seed=1)
    for trained, fresh in ((result.model_i, fresh_i), (result.model_j, fresh_j)):
        assert torch.equal(trained.classifier.weight, fresh.classifier.weight)
        assert torch.equal(trained.classifier.bias, fresh.classifier.bias)
        assert not torch.equal(trained.encoder.blocks[0][0].weight, fresh.encoder.blocks[0][0].weight)


def test_pxl_lambda_one_is_supervised(bench):
    train, _ = bench.split(0)
    steps = []
    train_pxl(train, pxl_cfg(1.0, epochs=1), step_hook=steps.append)
    assert steps and all(s["loss"] == s["sup"] for s in steps)
    assert any(s["con"] != s["sup"] for s in steps)


def test_pxl_run(bench, tmp_path):
    train, val = bench.split(0)
    result = train_pxl(train, pxl_cfg(), val, out_dir=tmp_path)
    assert (tmp_path / "model_a.pt").exists() and (tmp_path / "model_b.pt").exists()
    row = result.record.history[-1]
    assert {"train_loss", "train_sup", "train_con", "val_acc_a", "val_acc_b"} <= set(row)
    assert result.record.history[-1]["train_loss"] < result.record.history[0]["train_loss"]
    ps = prediction_set(result.model_i, bench.test, "a")
    assert np.all(np.diff(ps.sample_ids) > 0)
    assert 0 <= accuracy(ps) <= 1
    a = train_pxl(train, pxl_cfg(epochs=1))
    b = train_pxl(train, pxl_cfg(epochs=1))
    assert parameter_hash(a.model_i) == parameter_hash(b.model_i)
    assert parameter_hash(a.model_j) == parameter_hash(b.model_j)


def test_pxl_full_set_scope(bench):
    train, _ = bench.split(0)
    steps = []
    train_pxl(train, pxl_cfg(objective=ObjectiveConfig(nce_scope="full_set"), epochs=1), step_hook=steps.append)
    assert len(steps) == 1


# -- cross-validation ----------------------------------------------------------


def test_cross_validate_resume(bench, tmp_path, monkeypatch):
    cfg = preset("natural_upsl", epochs=1, batch_size=32)
    first = cross_validate(bench, cfg, out_dir=tmp_path)
    assert [r["fold"] for r in first.rows] == [0, 1, 2, 3, 4]
    for f in range(5):
        assert (tmp_path / f"fold_{f}" / "view_a" / "model.pt").exists()
    shutil.rmtree(tmp_path / "fold_3")
    calls = []
    real = training.train_fold

    def spy(b, c, fold, out_dir=None):
        calls.append(fold)
        return real(b, c, fold, out_dir)

    monkeypatch.setattr(training, "train_fold", spy)
    second = cross_validate(bench, cfg, out_dir=tmp_path)
    assert calls == [3]
    assert second.aggregate() == first.aggregate()
    # a changed config invalidates every fold
    calls.clear()
    cross_validate(bench, replace(cfg, seed=9), folds=[0], out_dir=tmp_path)
    assert calls == [0]


def test_cross_validate_rejects_bad_fold(bench):
    with pytest.raises(InvalidInputError):
        cross_validate(bench, preset("natural_upsl", epochs=1), folds=[5])


def test_cross_validate_deterministic(bench):
    cfg = preset("natural_mpsl", epochs=1, batch_size=32)
    a = cross_validate(bench, cfg, folds=[0, 1])
    b = cross_validate(bench, cfg, folds=[0, 1])
    assert a.aggregate() == b.aggregate()


def test_result_table_aggregate():
    table = ResultTable([{"fold": 0, "acc": 0.5}, {"fold": 1, "acc": 0.7}])
    agg = table.aggregate()["acc"]
    assert agg["mean"] == pytest.approx(0.6)
    assert agg["std"] == pytest.approx(np.std([0.5, 0.7], ddof=1))
    assert ResultTable([{"fold": 0, "acc": 0.5}]).aggregate()["acc"]["std"] is None
