import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pipeinv.datasets import (
    CorpusSplit,
    LabeledImageSet,
    MultiViewDataset,
    load_benchmark,
    make_mnist_svhn,
    make_synthetic_benchmark,
    make_two_view_mnist,
    pair_by_label,
    read_idx,
    rescale_unit_interval,
    rotate_images,
    save_benchmark,
    stratified_kfold_split,
    synthetic_pipeline_views,
)
from pipeinv.errors import ConfigError, InvalidInputError, PairingError, StratificationError

from conftest import pattern_images, toy_corpus


class TestRescale:
    def test_affine(self):
        np.testing.assert_allclose(rescale_unit_interval([0, 2, 4]), [0, 0.5, 1])

    def test_constant_maps_to_zero(self):
        np.testing.assert_array_equal(rescale_unit_interval([5, 5, 5]), [0, 0, 0])

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            rescale_unit_interval([])

    @given(arrays(np.float64, (6, 7), elements=st.floats(3, 7)))
    def test_bounds_and_order(self, grid):
        out = rescale_unit_interval(grid)
        if grid.max() > grid.min():
            assert out.min() == 0 and out.max() == 1
            # rank order is preserved
            flat_in, flat_out = grid.ravel(), out.ravel()
            order = np.argsort(flat_in, kind="stable")
            assert np.all(np.diff(flat_out[order]) >= 0)
        else:
            assert np.all(out == 0)


class TestStratifiedKFold:
    def test_balanced_small(self):
        labels = np.repeat(np.arange(10), 10)
        f = stratified_kfold_split(labels, 5, seed=3)
        for fold in range(5):
            counts = np.bincount(labels[f.fold_of_sample == fold], minlength=10)
            assert np.all(counts == 2)

    def test_nine_fold_regime(self):
        labels = np.repeat(np.arange(10), 180)
        f = stratified_kfold_split(labels, 9, seed=0)
        for fold in range(9):
            members = labels[f.fold_of_sample == fold]
            assert len(members) == 200
            assert np.all(np.bincount(members, minlength=10) == 20)

    def test_deterministic(self):
        labels = np.random.default_rng(0).integers(0, 4, 97)
        labels[:20] = np.repeat(np.arange(4), 5)
        a = stratified_kfold_split(labels, 5, 11)
        b = stratified_kfold_split(labels, 5, 11)
        np.testing.assert_array_equal(a.fold_of_sample, b.fold_of_sample)

    def test_too_small_class(self):
        with pytest.raises(StratificationError):
            stratified_kfold_split([0, 0, 0, 1, 1], 3, 0)

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(st.integers(5, 40), min_size=1, max_size=6),
        st.integers(2, 5),
        st.integers(0, 2**31 - 1),
    )
    def test_per_class_counts_differ_by_at_most_one(self, sizes, k, seed):
        labels = np.concatenate([np.full(s, c) for c, s in enumerate(sizes)])
        f = stratified_kfold_split(labels, k, seed)
        assert f.fold_of_sample.min() >= 0 and f.fold_of_sample.max() < k
        for c in range(len(sizes)):
            counts = np.bincount(f.fold_of_sample[labels == c], minlength=k)
            assert counts.max() - counts.min() <= 1
        totals = np.bincount(f.fold_of_sample, minlength=k)
        assert totals.max() - totals.min() <= 1


@pytest.fixture(scope="module")
def two_view():
    return make_two_view_mnist(toy_corpus(), seed=5)


class TestTwoViewMnist:
    @pytest.fixture
    def bench(self, two_view):
        return two_view

    def test_shapes_and_pairing(self, bench):
        assert bench.pool.view_a.images.shape == (200, 32, 32, 1)
        assert bench.pool.pairing_mode == "by_subject"
        bench.pool.validate()
        bench.test.validate()

    def test_fold_sizes(self, bench):
        train, val = bench.split(0)
        assert (len(train), len(val)) == (160, 40)
        assert len(set(train.pair_ids) & set(val.pair_ids)) == 0
        assert set(train.pair_ids) | set(val.pair_ids) == set(range(200))

    def test_angles_in_range(self, bench):
        for part in (bench.pool, bench.test):
            a = part.metadata["rotation_angle"]
            assert np.all(np.abs(a) <= np.pi / 4)

    def test_noisy_view_in_unit_interval(self, bench):
        for part in (bench.pool, bench.test):
            img = part.view_b.images
            assert img.min() >= 0 and img.max() <= 1
            per_image = img.reshape(len(img), -1)
            np.testing.assert_allclose(per_image.min(1), 0)
            np.testing.assert_allclose(per_image.max(1), 1)

    def test_deterministic(self, bench):
        again = make_two_view_mnist(toy_corpus(), seed=5)
        assert again.pool.view_a.images.tobytes() == bench.pool.view_a.images.tobytes()
        assert again.pool.view_b.images.tobytes() == bench.pool.view_b.images.tobytes()
        np.testing.assert_array_equal(again.folds.fold_of_sample, bench.folds.fold_of_sample)

    def test_missing_class(self):
        c = toy_corpus()
        keep = c.train.labels != 3
        broken = CorpusSplit("x", c.train.subset(np.flatnonzero(keep)), c.test)
        with pytest.raises(StratificationError):
            make_two_view_mnist(broken, seed=0)

    def test_full_scale_split_sizes(self):
        # 60,000 labels balanced enough for MNIST; images are irrelevant for the split
        labels = np.random.default_rng(0).permutation(np.arange(60000) % 10)
        f = stratified_kfold_split(labels, 5, 0)
        for fold in range(5):
            assert len(f.val_indices(fold)) == 12000
            assert len(f.train_indices(fold)) == 48000


def test_rotation_zero_angle_is_identity():
    imgs = pattern_images(np.arange(4), size=32)
    out = rotate_images(imgs, np.zeros(4))
    np.testing.assert_allclose(out, imgs, atol=1e-6)


def test_rotation_quarter_turn():
    img = np.zeros((1, 8, 8, 1), np.float32)
    img[0, 1, 4, 0] = 1.0
    out = rotate_images(img, np.array([np.pi / 2]))
    np.testing.assert_allclose(out[0, ..., 0], np.rot90(img[0, ..., 0], k=1), atol=1e-5)


class TestPairByLabel:
    def test_each_instance_appears_pairs_per_instance_times(self):
        rng = np.random.default_rng(0)
        la = rng.integers(0, 10, 300)
        lb = rng.integers(0, 10, 450)
        pairs = pair_by_label(la, lb, 20, rng)
        counts = np.bincount(pairs[:, 0], minlength=300)
        assert np.all(counts == 20)
        np.testing.assert_array_equal(la[pairs[:, 0]], lb[pairs[:, 1]])

    def test_degenerate_bijection(self):
        pairs = pair_by_label([0, 0, 0], [0, 0, 0], 1, np.random.default_rng(1))
        assert len(pairs) == 3
        assert sorted(pairs[:, 0]) == [0, 1, 2]
        assert sorted(pairs[:, 1]) == [0, 1, 2]

    def test_empty_class(self):
        with pytest.raises(PairingError):
            pair_by_label([0, 1], [0, 0], 1, np.random.default_rng(0))


@pytest.fixture(scope="module")
def digit_pairs():
    mnist = toy_corpus(100, 30, seed=1)
    rgb = toy_corpus(120, 40, seed=2, size=32)
    rgb = CorpusSplit(
        "rgb",
        LabeledImageSet(np.repeat(rgb.train.images, 3, -1), rgb.train.labels, 10),
        LabeledImageSet(np.repeat(rgb.test.images, 3, -1), rgb.test.labels, 10),
    )
    return make_mnist_svhn(mnist, rgb, seed=0, pairs_per_instance=20)


class TestMnistSvhn:
    @pytest.fixture
    def bench(self, digit_pairs):
        return digit_pairs

    def test_pairing(self, bench):
        for part in (bench.pool, bench.test):
            part.validate()
            assert part.pairing_mode == "by_label"
            counts = np.bincount(part.pairs[:, 0])
            assert np.all(counts == 20)
        assert bench.pool.view_a.images.shape[1:] == (32, 32, 1)
        assert bench.pool.view_b.images.shape[1:] == (32, 32, 3)

    def test_folds_stratified_over_pairs(self, bench):
        assert len(bench.folds.fold_of_sample) == len(bench.pool) == 2000
        train, val = bench.split(2)
        assert len(val) == 400

    def test_missing_class(self, bench):
        a = toy_corpus(100, 30)
        b = toy_corpus(100, 30)
        b = CorpusSplit("b", b.train.subset(np.flatnonzero(b.train.labels != 7)), b.test)
        with pytest.raises(PairingError):
            make_mnist_svhn(a, b, seed=0)


class TestSyntheticViews:
    def test_identity_pair_is_bit_identical(self, corpus):
        views = synthetic_pipeline_views(corpus.train, ["identity", "identity"], seed=0)
        ds = views[(0, 1)]
        assert ds.view_a.images.tobytes() == ds.view_b.images.tobytes()

    def test_smoothing_reduces_variance(self, corpus):
        views = synthetic_pipeline_views(
            corpus.train, [{"name": "gaussian_smooth", "sigma": 2.0}, "identity"], seed=0
        )
        ds = views[(0, 1)]
        assert not np.array_equal(ds.view_a.images, ds.view_b.images)
        var_a = ds.view_a.images.reshape(len(ds), -1).var(1)
        var_b = ds.view_b.images.reshape(len(ds), -1).var(1)
        assert np.all(var_a < var_b)

    def test_three_descriptors(self, corpus):
        specs = ["identity", {"name": "gaussian_smooth", "sigma": 1.0}, {"name": "intensity_bias"}]
        views = synthetic_pipeline_views(corpus.train, specs, seed=0)
        assert set(views) == set(itertools.combinations(range(3), 2))
        for ds in views.values():
            ds.validate()

    @pytest.mark.parametrize(
        "spec",
        [
            {"name": "affine_warp", "max_shift": 2},
            {"name": "intensity_bias", "strength": 0.5},
            {"name": "additive_noise", "scale": 0.3},
            {"name": "additive_noise", "distribution": "uniform", "scale": 1.0},
        ],
    )
    def test_transforms_deterministic_and_bounded(self, corpus, spec):
        a = synthetic_pipeline_views(corpus.train, [spec, "identity"], seed=4)[(0, 1)]
        b = synthetic_pipeline_views(corpus.train, [spec, "identity"], seed=4)[(0, 1)]
        assert a.view_a.images.tobytes() == b.view_a.images.tobytes()
        assert a.view_a.images.min() >= 0 and a.view_a.images.max() <= 1

    def test_unknown_transform(self, corpus):
        with pytest.raises(ConfigError):
            synthetic_pipeline_views(corpus.train, ["identity", "warp_drive"], seed=0)

    def test_needs_two(self, corpus):
        with pytest.raises(ConfigError):
            synthetic_pipeline_views(corpus.train, ["identity"], seed=0)

    def test_benchmark(self, corpus):
        bench = make_synthetic_benchmark(corpus, ["identity", {"name": "gaussian_smooth", "sigma": 1}], seed=0)
        bench.pool.validate()
        assert bench.pool.view_a.images.shape[1:] == (32, 32, 1)


def test_label_consistency_detected():
    imgs = LabeledImageSet(np.zeros((3, 4, 4, 1)), [0, 1, 2], 3)
    other = LabeledImageSet(np.zeros((3, 4, 4, 1)), [0, 2, 1], 3)
    ds = MultiViewDataset(imgs, other, [[0, 0], [1, 1], [2, 2]], [0, 1, 2], "by_subject", "train")
    with pytest.raises(PairingError):
        ds.validate()


def test_labeled_image_set_invariants():
    with pytest.raises(InvalidInputError):
        LabeledImageSet(np.full((2, 4, 4, 1), 1.5), [0, 1], 2).validate()
    with pytest.raises(InvalidInputError):
        LabeledImageSet(np.zeros((2, 4, 4, 1)), [0, 2], 2).validate()
    with pytest.raises(InvalidInputError):
        LabeledImageSet(np.zeros((2, 4, 4, 1)), [0], 2).validate()


def test_cache_round_trip(tmp_path):
    bench = make_two_view_mnist(toy_corpus(), seed=1)
    save_benchmark(bench, tmp_path / "ds")
    loaded = load_benchmark(tmp_path / "ds")
    header = np.lib.format.read_magic(open(tmp_path / "ds" / "pool_a_images.npy", "rb"))
    assert header == (1, 0)
    assert np.load(tmp_path / "ds" / "pool_a_images.npy").dtype == np.dtype("<f4")
    for part in ("pool", "test"):
        x, y = getattr(bench, part), getattr(loaded, part)
        assert x.view_a.images.tobytes() == y.view_a.images.tobytes()
        assert x.view_b.images.tobytes() == y.view_b.images.tobytes()
        np.testing.assert_array_equal(x.pairs, y.pairs)
        np.testing.assert_array_equal(x.labels, y.labels)
        np.testing.assert_array_equal(x.metadata["rotation_angle"], y.metadata["rotation_angle"])
    np.testing.assert_array_equal(bench.folds.fold_of_sample, loaded.folds.fold_of_sample)


def test_read_idx(tmp_path):
    import gzip
    import struct

    data = np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
    payload = struct.pack(">HBB", 0, 8, 3) + struct.pack(">3I", 2, 3, 4) + data.tobytes()
    path = tmp_path / "x-idx3-ubyte.gz"
    with gzip.open(path, "wb") as fh:
        fh.write(payload)
    np.testing.assert_array_equal(read_idx(path), data)
