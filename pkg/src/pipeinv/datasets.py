"""Multi-view classification datasets.

Images are held as ``N x H x W x C`` float32 arrays with intensities in
``[0, 1]``.  A :class:`MultiViewDataset` is a table of index pairs into two
image sets; ``by_subject`` datasets pair a sample with another rendering of
itself, ``by_label`` datasets pair instances of the same class drawn from two
different corpora.
"""

from __future__ import annotations

import gzip
import itertools
import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage

from .arrayio import array_fingerprint, load_array, read_json, save_array, write_json
from .errors import (
    ConfigError,
    CorpusNotFoundError,
    InvalidInputError,
    PairingError,
    StratificationError,
)

PAIRING_MODES = ("by_subject", "by_label")
SPLIT_TAGS = ("train", "val", "test", "pool")
DATA_ROOT_ENV = "PIPEINV_DATA"


@dataclass
class LabeledImageSet:
    images: np.ndarray  # N x H x W x C
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim == 3:
            self.images = self.images[..., None]

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, ...]:
        return tuple(self.images.shape[1:])

    def validate(self) -> None:
        if self.images.ndim != 4:
            raise InvalidInputError(f"images must be N x H x W x C, got shape {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise InvalidInputError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise InvalidInputError("intensities must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise InvalidInputError(f"labels must lie in [0, {self.class_count})")

    def subset(self, indices) -> "LabeledImageSet":
        indices = np.asarray(indices)
        return LabeledImageSet(self.images[indices], self.labels[indices], self.class_count)


@dataclass
class CorpusSplit:
    """A public corpus with its original train/test partition."""

    name: str
    train: LabeledImageSet
    test: LabeledImageSet


@dataclass
class FoldAssignment:
    fold_of_sample: np.ndarray
    k: int
    seed: int

    def train_indices(self, fold: int) -> np.ndarray:
        self._check(fold)
        return np.flatnonzero(self.fold_of_sample != fold)

    def val_indices(self, fold: int) -> np.ndarray:
        self._check(fold)
        return np.flatnonzero(self.fold_of_sample == fold)

    def _check(self, fold: int) -> None:
        if not 0 <= fold < self.k:
            raise InvalidInputError(f"fold {fold} outside [0, {self.k})")


@dataclass
class MultiViewDataset:
    view_a: LabeledImageSet
    view_b: LabeledImageSet
    pairs: np.ndarray  # P x 2 indices into view_a / view_b
    labels: np.ndarray
    pairing_mode: str
    split_tag: str
    # stable id of every pair; rows of activations and predictions follow it
    pair_ids: np.ndarray | None = None
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.pair_ids is None:
            self.pair_ids = np.arange(len(self.pairs), dtype=np.int64)
        else:
            self.pair_ids = np.asarray(self.pair_ids, dtype=np.int64)
        if self.pairing_mode not in PAIRING_MODES:
            raise InvalidInputError(f"unknown pairing mode {self.pairing_mode!r}")
        if self.split_tag not in SPLIT_TAGS:
            raise InvalidInputError(f"unknown split tag {self.split_tag!r}")

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def class_count(self) -> int:
        return self.view_a.class_count

    def validate(self) -> None:
        self.view_a.validate()
        self.view_b.validate()
        if len(self.labels) != len(self.pairs) or len(self.pair_ids) != len(self.pairs):
            raise InvalidInputError("pairs, labels and pair_ids must align")
        la = self.view_a.labels[self.pairs[:, 0]]
        lb = self.view_b.labels[self.pairs[:, 1]]
        if not (np.array_equal(la, self.labels) and np.array_equal(lb, self.labels)):
            raise PairingError("pair labels disagree with view labels")
        if self.pairing_mode == "by_subject" and not np.array_equal(
            self.pairs[:, 0], self.pairs[:, 1]
        ):
            raise PairingError("by_subject pairs must reference the same sample index")

    def subset(self, indices, split_tag: str | None = None) -> "MultiViewDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return replace(
            self,
            pairs=self.pairs[indices],
            labels=self.labels[indices],
            pair_ids=self.pair_ids[indices],
            split_tag=split_tag or self.split_tag,
        )

    def view(self, which: str, unique: bool = True) -> tuple[LabeledImageSet, np.ndarray]:
        """Single-view training set drawn from the samples this dataset references.

        Returns the image set and the indices into the underlying view.  With
        ``unique`` every referenced instance appears once (by-label datasets
        reference the same instance many times).
        """
        col = {"a": 0, "b": 1}[which]
        source = self.view_a if col == 0 else self.view_b
        idx = self.pairs[:, col]
        if unique:
            idx = np.unique(idx)
        return source.subset(idx), idx

    def pair_images(self, rows) -> tuple[np.ndarray, np.ndarray]:
        p = self.pairs[rows]
        return self.view_a.images[p[:, 0]], self.view_b.images[p[:, 1]]

    def canonical_order(self) -> "MultiViewDataset":
        """Rows sorted by ascending pair id."""
        return self.subset(np.argsort(self.pair_ids, kind="stable"))


@dataclass
class MultiViewBenchmark:
    """A cross-validation pool of pairs plus a held-out test set."""

    name: str
    pool: MultiViewDataset
    test: MultiViewDataset
    folds: FoldAssignment
    config: dict[str, Any] = field(default_factory=dict)

    def split(self, fold: int) -> tuple[MultiViewDataset, MultiViewDataset]:
        if len(self.folds.fold_of_sample) != len(self.pool):
            raise InvalidInputError("fold assignment does not match the pair pool")
        train = self.pool.subset(self.folds.train_indices(fold), "train")
        val = self.pool.subset(self.folds.val_indices(fold), "val")
        return train, val


# ---------------------------------------------------------------------------
# image operations


def rescale_unit_interval(image) -> np.ndarray:
    """Affinely map an image onto [0, 1]; constant images map to zeros."""
    image = np.asarray(image, dtype=np.float64)
    if image.size == 0:
        raise InvalidInputError("cannot rescale an empty image")
    lo, hi = image.min(), image.max()
    if hi == lo:
        return np.zeros_like(image)
    return (image - lo) / (hi - lo)


def rescale_each(images: np.ndarray) -> np.ndarray:
    """Per-image unit-interval rescale of an ``N x ...`` batch."""
    images = np.asarray(images, dtype=np.float32)
    if images.size == 0:
        raise InvalidInputError("cannot rescale an empty batch")
    axes = tuple(range(1, images.ndim))
    lo = images.min(axis=axes, keepdims=True)
    span = images.max(axis=axes, keepdims=True) - lo
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (images - lo) / safe, 0.0)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def _to_nchw(images: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32)).permute(0, 3, 1, 2)


def _to_nhwc(t: torch.Tensor) -> np.ndarray:
    return t.permute(0, 2, 3, 1).contiguous().numpy()


def resize_images(images: np.ndarray, size: int, batch: int = 4096) -> np.ndarray:
    """Bilinear resize of NHWC images to ``size x size``."""
    if images.shape[1:3] == (size, size):
        return images.astype(np.float32, copy=True)
    out = []
    for start in range(0, len(images), batch):
        t = _to_nchw(images[start : start + batch])
        t = F.interpolate(t, size=(size, size), mode="bilinear", align_corners=False)
        out.append(_to_nhwc(t))
    return np.clip(np.concatenate(out), 0.0, 1.0)


def rotate_images(images: np.ndarray, angles: np.ndarray, batch: int = 4096) -> np.ndarray:
    """Rotate each NHWC image counter-clockwise by its angle (radians).

    Bilinear sampling; points outside the source frame read as zero.
    """
    angles = np.asarray(angles, dtype=np.float32)
    out = []
    for start in range(0, len(images), batch):
        t = _to_nchw(images[start : start + batch])
        a = torch.from_numpy(angles[start : start + batch])
        cos, sin = torch.cos(a), torch.sin(a)
        theta = torch.zeros(len(a), 2, 3)
        theta[:, 0, 0], theta[:, 0, 1] = cos, -sin
        theta[:, 1, 0], theta[:, 1, 1] = sin, cos
        grid = F.affine_grid(theta, list(t.shape), align_corners=False)
        r = F.grid_sample(t, grid, mode="bilinear", padding_mode="zeros", align_corners=False)
        out.append(_to_nhwc(r))
    return np.clip(np.concatenate(out), 0.0, 1.0)


# ---------------------------------------------------------------------------
# splits


def stratified_kfold_split(labels, k: int, seed: int) -> FoldAssignment:
    """Assign every sample a fold so that per-class fold counts differ by at most one.

    Within a class, members are shuffled and dealt round-robin; the dealing
    offset carries over between classes so overall fold sizes stay balanced.
    """
    labels = np.asarray(labels)
    if k < 2:
        raise StratificationError(f"k must be >= 2, got {k}")
    rng = np.random.default_rng(seed)
    folds = np.empty(len(labels), dtype=np.int64)
    offset = 0
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        if len(members) < k:
            raise StratificationError(
                f"class {cls} has {len(members)} members, fewer than k={k}"
            )
        members = rng.permutation(members)
        folds[members] = (np.arange(len(members)) + offset) % k
        offset = (offset + len(members)) % k
    return FoldAssignment(folds, k, seed)


def stratified_subsample(labels, fraction: float, seed: int) -> np.ndarray:
    """Sorted indices of a class-stratified random subset."""
    labels = np.asarray(labels)
    if not 0 < fraction <= 1:
        raise ConfigError("subsample", f"fraction must lie in (0, 1], got {fraction}")
    if fraction == 1:
        return np.arange(len(labels))
    rng = np.random.default_rng(seed)
    keep = []
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        n = max(1, int(round(fraction * len(members))))
        keep.append(rng.choice(members, size=n, replace=False))
    return np.sort(np.concatenate(keep))


def _check_classes(corpus: LabeledImageSet, what: str) -> None:
    counts = np.bincount(corpus.labels, minlength=corpus.class_count)
    missing = np.flatnonzero(counts == 0)
    if len(missing):
        raise StratificationError(f"{what} is missing classes {missing.tolist()}")


# ---------------------------------------------------------------------------
# benchmark construction


def _prepare_digits(images: np.ndarray, size: int = 32) -> np.ndarray:
    return resize_images(rescale_each(images), size)


def make_two_view_mnist(
    corpus: CorpusSplit,
    seed: int,
    k: int = 5,
    subsample: float = 1.0,
    max_angle: float = np.pi / 4,
) -> MultiViewBenchmark:
    """Rotated / noisy two-view digits paired by subject.

    Both views start from the unit-rescaled 32x32 digit.  View a is rotated by
    an angle drawn once per sample from ``U[-max_angle, max_angle]``; view b
    gets per-pixel ``U[0, 1]`` noise and a second unit rescale.
    """
    _check_classes(corpus.train, f"{corpus.name} train")
    _check_classes(corpus.test, f"{corpus.name} test")
    ss = np.random.SeedSequence(seed)
    sub_seed, fold_seed, train_seed, test_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(4))

    train_idx = stratified_subsample(corpus.train.labels, subsample, sub_seed)
    parts = {}
    for tag, base, s in (
        ("pool", corpus.train.subset(train_idx), train_seed),
        ("test", corpus.test, test_seed),
    ):
        rng = np.random.default_rng(s)
        clean = _prepare_digits(base.images)
        angles = rng.uniform(-max_angle, max_angle, size=len(base)).astype(np.float32)
        rotated = rotate_images(clean, angles)
        noise = rng.uniform(0.0, 1.0, size=clean.shape).astype(np.float32)
        noisy = rescale_each(clean + noise)
        n = len(base)
        parts[tag] = MultiViewDataset(
            view_a=LabeledImageSet(rotated, base.labels, base.class_count),
            view_b=LabeledImageSet(noisy, base.labels, base.class_count),
            pairs=np.stack([np.arange(n), np.arange(n)], axis=1),
            labels=base.labels,
            pairing_mode="by_subject",
            split_tag=tag,
            metadata={"rotation_angle": angles},
        )
    folds = stratified_kfold_split(parts["pool"].labels, k, fold_seed)
    config = {
        "kind": "two_view_mnist",
        "corpus": corpus.name,
        "seed": seed,
        "k": k,
        "subsample": subsample,
        "max_angle": max_angle,
        "train_indices_of_corpus": train_idx,
    }
    return MultiViewBenchmark("two_view_mnist", parts["pool"], parts["test"], folds, config)


def pair_by_label(
    labels_a, labels_b, pairs_per_instance: int, rng: np.random.Generator
) -> np.ndarray:
    """Pair every view-a instance with ``pairs_per_instance`` same-class view-b instances.

    View-b partners are dealt from successive random permutations of the
    class members, so view-b instances are used as evenly as possible.
    """
    labels_a, labels_b = np.asarray(labels_a), np.asarray(labels_b)
    if pairs_per_instance < 1:
        raise ConfigError("pairs_per_instance", "must be >= 1")
    out = []
    for cls in np.union1d(labels_a, labels_b):
        a = np.flatnonzero(labels_a == cls)
        b = np.flatnonzero(labels_b == cls)
        if len(a) == 0 or len(b) == 0:
            raise PairingError(f"class {cls} is empty in one corpus")
        need = len(a) * pairs_per_instance
        reps = -(-need // len(b))
        stream = np.concatenate([rng.permutation(b) for _ in range(reps)])[:need]
        a_col = np.concatenate([rng.permutation(a) for _ in range(pairs_per_instance)])
        out.append(np.stack([a_col, stream], axis=1))
    if not out:
        raise PairingError("no classes to pair")
    return np.concatenate(out)


def make_mnist_svhn(
    digits_a: CorpusSplit,
    digits_b: CorpusSplit,
    seed: int,
    pairs_per_instance: int = 20,
    k: int = 5,
    subsample: float = 1.0,
) -> MultiViewBenchmark:
    """Digits of one corpus paired by class with digits of another (e.g. MNIST-SVHN)."""
    if digits_a.train.class_count != digits_b.train.class_count:
        raise PairingError("corpora must share a label space")
    ss = np.random.SeedSequence(seed)
    sa, sb, fold_seed, train_seed, test_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(5))
    parts = {}
    for tag, a, b, s in (
        ("pool", digits_a.train, digits_b.train, train_seed),
        ("test", digits_a.test, digits_b.test, test_seed),
    ):
        if tag == "pool":
            a = a.subset(stratified_subsample(a.labels, subsample, sa))
            b = b.subset(stratified_subsample(b.labels, subsample, sb))
        for corpus, name in ((a, digits_a.name), (b, digits_b.name)):
            counts = np.bincount(corpus.labels, minlength=corpus.class_count)
            if (counts == 0).any():
                raise PairingError(
                    f"{name} {tag} has no instances of classes {np.flatnonzero(counts == 0).tolist()}"
                )
        va = LabeledImageSet(_prepare_digits(a.images), a.labels, a.class_count)
        vb = LabeledImageSet(_prepare_digits(b.images), b.labels, b.class_count)
        rng = np.random.default_rng(s)
        pairs = pair_by_label(va.labels, vb.labels, pairs_per_instance, rng)
        parts[tag] = MultiViewDataset(
            va, vb, pairs, va.labels[pairs[:, 0]], "by_label", tag
        )
    folds = stratified_kfold_split(parts["pool"].labels, k, fold_seed)
    config = {
        "kind": "mnist_svhn",
        "corpora": [digits_a.name, digits_b.name],
        "seed": seed,
        "k": k,
        "subsample": subsample,
        "pairs_per_instance": pairs_per_instance,
    }
    return MultiViewBenchmark(
        f"{digits_a.name}_{digits_b.name}", parts["pool"], parts["test"], folds, config
    )


# ---------------------------------------------------------------------------
# synthetic pipeline views

TRANSFORMS = ("identity", "gaussian_smooth", "affine_warp", "intensity_bias", "additive_noise")


@dataclass(frozen=True)
class TransformSpec:
    name: str
    params: Mapping[str, Any] = field(default_factory=dict)

    @classmethod
    def coerce(cls, obj) -> "TransformSpec":
        if isinstance(obj, TransformSpec):
            spec = obj
        elif isinstance(obj, str):
            spec = cls(obj)
        elif isinstance(obj, Mapping):
            params = dict(obj)
            spec = cls(params.pop("name", None), params)
        else:
            raise ConfigError("transforms", f"cannot interpret {obj!r}")
        if spec.name not in TRANSFORMS:
            raise ConfigError("transforms", f"unknown transform {spec.name!r}")
        return spec

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, **dict(self.params)}


def _smooth_field(shape: tuple[int, int], rng: np.random.Generator, scale: float) -> np.ndarray:
    coarse = rng.standard_normal((3, 3))
    field_ = ndimage.zoom(coarse, (shape[0] / 3, shape[1] / 3), order=3)
    field_ = ndimage.gaussian_filter(field_, scale)
    field_ = field_ / (np.abs(field_).max() + 1e-12)
    return field_[: shape[0], : shape[1]]


def apply_transform(images: np.ndarray, spec: TransformSpec, rng: np.random.Generator) -> np.ndarray:
    """Apply one pipeline surrogate to an NHWC batch; output stays in [0, 1]."""
    p = dict(spec.params)
    images = np.asarray(images, dtype=np.float32)
    if spec.name == "identity":
        return images.copy()
    if spec.name == "gaussian_smooth":
        sigma = float(p.get("sigma", 1.0))
        return np.clip(
            ndimage.gaussian_filter(images, sigma=(0, sigma, sigma, 0), mode="constant"), 0, 1
        ).astype(np.float32)
    if spec.name == "affine_warp":
        max_shift = float(p.get("max_shift", 2.0))
        max_rot = float(p.get("max_rotation", np.pi / 12))
        angles = rng.uniform(-max_rot, max_rot, size=len(images))
        shifts = rng.uniform(-max_shift, max_shift, size=(len(images), 2))
        out = rotate_images(images, angles)
        for i in range(len(out)):
            out[i] = ndimage.shift(out[i], (shifts[i, 0], shifts[i, 1], 0), order=1, cval=0.0)
        return np.clip(out, 0, 1)
    if spec.name == "intensity_bias":
        strength = float(p.get("strength", 0.3))
        h, w = images.shape[1:3]
        fields = np.stack([_smooth_field((h, w), rng, 2.0) for _ in range(len(images))])
        return np.clip(images * (1 + strength * fields[..., None]), 0, 1).astype(np.float32)
    if spec.name == "additive_noise":
        scale = float(p.get("scale", 0.2))
        if p.get("distribution", "gaussian") == "uniform":
            noise = rng.uniform(0, scale, size=images.shape)
        else:
            noise = rng.normal(0, scale, size=images.shape)
        return rescale_each(images + noise.astype(np.float32))
    raise ConfigError("transforms", f"unknown transform {spec.name!r}")


def synthetic_views(
    corpus: LabeledImageSet, transform_specs: Sequence, seed: int
) -> list[LabeledImageSet]:
    specs = [TransformSpec.coerce(t) for t in transform_specs]
    streams = np.random.SeedSequence(seed).spawn(len(specs))
    return [
        LabeledImageSet(
            apply_transform(corpus.images, spec, np.random.default_rng(stream)),
            corpus.labels,
            corpus.class_count,
        )
        for spec, stream in zip(specs, streams)
    ]


def synthetic_pipeline_views(
    corpus: LabeledImageSet, transform_specs: Sequence, seed: int, split_tag: str = "pool"
) -> dict[tuple[int, int], MultiViewDataset]:
    """Render every sample through each transform and pair the renderings.

    Returns one by-subject dataset per unordered pair of transforms, keyed by
    the transform positions.
    """
    if len(transform_specs) < 2:
        raise ConfigError("transforms", "need at least two transform descriptors")
    views = synthetic_views(corpus, transform_specs, seed)
    n = len(corpus)
    idx = np.stack([np.arange(n), np.arange(n)], axis=1)
    specs = [TransformSpec.coerce(t).to_dict() for t in transform_specs]
    return {
        (i, j): MultiViewDataset(
            views[i], views[j], idx, corpus.labels, "by_subject", split_tag,
            metadata={"transforms": [specs[i], specs[j]]},
        )
        for i, j in itertools.combinations(range(len(views)), 2)
    }


def make_synthetic_benchmark(
    corpus: CorpusSplit,
    transform_specs: Sequence,
    seed: int,
    k: int = 5,
    subsample: float = 1.0,
    view_pair: tuple[int, int] = (0, 1),
) -> MultiViewBenchmark:
    """Cross-validation benchmark from two synthetic pipeline views of a corpus."""
    ss = np.random.SeedSequence(seed)
    sub_seed, fold_seed, train_seed, test_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(4))
    base = corpus.train.subset(stratified_subsample(corpus.train.labels, subsample, sub_seed))
    prepared = {}
    for tag, src, s in (("pool", base, train_seed), ("test", corpus.test, test_seed)):
        src = LabeledImageSet(_prepare_digits(src.images), src.labels, src.class_count)
        prepared[tag] = synthetic_pipeline_views(src, transform_specs, s, split_tag=tag)[view_pair]
    folds = stratified_kfold_split(prepared["pool"].labels, k, fold_seed)
    config = {
        "kind": "synthetic",
        "corpus": corpus.name,
        "seed": seed,
        "k": k,
        "subsample": subsample,
        "transforms": [TransformSpec.coerce(t).to_dict() for t in transform_specs],
        "view_pair": list(view_pair),
    }
    return MultiViewBenchmark("synthetic", prepared["pool"], prepared["test"], folds, config)


# ---------------------------------------------------------------------------
# corpus loaders


def data_root(root: str | Path | None = None) -> Path:
    if root is not None:
        return Path(root)
    return Path(os.environ.get(DATA_ROOT_ENV, Path.home() / ".cache" / "pipeinv"))


def read_idx(path: str | Path) -> np.ndarray:
    """Read an IDX file (optionally gzipped) as used by the MNIST distribution."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        data = fh.read()
    zero, dtype_code, ndim = struct.unpack(">HBB", data[:4])
    if zero != 0 or dtype_code != 0x08:
        raise InvalidInputError(f"{path} is not an unsigned-byte IDX file")
    shape = struct.unpack(f">{ndim}I", data[4 : 4 + 4 * ndim])
    return np.frombuffer(data, dtype=np.uint8, offset=4 + 4 * ndim).reshape(shape)


def _find(root: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        if (root / name).exists():
            return root / name
    raise CorpusNotFoundError(f"missing {stem}[.gz] under {root}")


def load_mnist(root: str | Path | None = None) -> CorpusSplit:
    """MNIST from the four standard IDX archives in ``<root>/mnist``."""
    root = data_root(root) / "mnist"
    arrays = {}
    for split, prefix in (("train", "train"), ("test", "t10k")):
        images = read_idx(_find(root, f"{prefix}-images-idx3-ubyte"))
        labels = read_idx(_find(root, f"{prefix}-labels-idx1-ubyte"))
        arrays[split] = LabeledImageSet(images.astype(np.float32) / 255.0, labels, 10)
    return CorpusSplit("mnist", arrays["train"], arrays["test"])


def load_svhn(root: str | Path | None = None) -> CorpusSplit:
    """SVHN from the cropped-digit ``train_32x32.mat`` / ``test_32x32.mat`` files."""
    from scipy.io import loadmat

    root = data_root(root) / "svhn"
    arrays = {}
    for split in ("train", "test"):
        path = root / f"{split}_32x32.mat"
        if not path.exists():
            raise CorpusNotFoundError(f"missing {path}")
        mat = loadmat(path)
        images = np.transpose(mat["X"], (3, 0, 1, 2)).astype(np.float32) / 255.0
        labels = mat["y"].ravel().astype(np.int64) % 10  # digit 0 is stored as 10
        arrays[split] = LabeledImageSet(images, labels, 10)
    return CorpusSplit("svhn", arrays["train"], arrays["test"])


def load_mnist_5k(test_fraction: float = 0.2, seed: int = 0) -> CorpusSplit:
    """The 5,000-digit MNIST subset bundled with mlxtend, split stratified into train/test."""
    from mlxtend.data import mnist_data

    x, y = mnist_data()
    images = (x.reshape(-1, 28, 28, 1) / 255.0).astype(np.float32)
    folds = stratified_kfold_split(y, int(round(1 / test_fraction)), seed)
    test = folds.fold_of_sample == 0
    return CorpusSplit(
        "mnist_5k",
        LabeledImageSet(images[~test], y[~test], 10),
        LabeledImageSet(images[test], y[test], 10),
    )


CORPORA = {"mnist": load_mnist, "svhn": load_svhn, "mnist_5k": lambda root=None: load_mnist_5k()}


def load_corpus(name: str, root: str | Path | None = None) -> CorpusSplit:
    try:
        loader = CORPORA[name]
    except KeyError:
        raise ConfigError("dataset.corpus", f"unknown corpus {name!r}") from None
    return loader(root)


# ---------------------------------------------------------------------------
# cache


def _save_view(directory: Path, prefix: str, view: LabeledImageSet) -> dict[str, Any]:
    save_array(directory / f"{prefix}_images.npy", view.images)
    save_array(directory / f"{prefix}_labels.npy", view.labels)
    return {
        "images": f"{prefix}_images.npy",
        "labels": f"{prefix}_labels.npy",
        "shape": list(view.images.shape),
        "class_count": view.class_count,
        "fingerprint": array_fingerprint(view.images),
    }


def save_benchmark(bench: MultiViewBenchmark, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    parts = {}
    for tag, ds in (("pool", bench.pool), ("test", bench.test)):
        entry = {
            "view_a": _save_view(directory, f"{tag}_a", ds.view_a),
            "view_b": _save_view(directory, f"{tag}_b", ds.view_b),
            "pairing_mode": ds.pairing_mode,
            "count": len(ds),
            "metadata": {},
        }
        save_array(directory / f"{tag}_pairs.npy", ds.pairs)
        save_array(directory / f"{tag}_pair_ids.npy", ds.pair_ids)
        entry["pairs"] = f"{tag}_pairs.npy"
        entry["pair_ids"] = f"{tag}_pair_ids.npy"
        for key, value in ds.metadata.items():
            if isinstance(value, np.ndarray):
                save_array(directory / f"{tag}_{key}.npy", value)
                entry["metadata"][key] = {"array": f"{tag}_{key}.npy"}
            else:
                entry["metadata"][key] = value
        parts[tag] = entry
    save_array(directory / "folds.npy", bench.folds.fold_of_sample)
    config = {k: v for k, v in bench.config.items() if not isinstance(v, np.ndarray)}
    write_json(
        directory / "manifest.json",
        {
            "name": bench.name,
            "config": config,
            "folds": {"file": "folds.npy", "k": bench.folds.k, "seed": bench.folds.seed},
            "parts": parts,
        },
    )
    return directory


def load_benchmark(directory: str | Path) -> MultiViewBenchmark:
    directory = Path(directory)
    manifest = read_json(directory / "manifest.json")
    parts = {}
    for tag, entry in manifest["parts"].items():
        views = [
            LabeledImageSet(
                load_array(directory / entry[v]["images"]),
                load_array(directory / entry[v]["labels"]),
                entry[v]["class_count"],
            )
            for v in ("view_a", "view_b")
        ]
        pairs = load_array(directory / entry["pairs"])
        metadata = {
            key: load_array(directory / value["array"]) if isinstance(value, dict) and "array" in value else value
            for key, value in entry["metadata"].items()
        }
        parts[tag] = MultiViewDataset(
            views[0], views[1], pairs, views[0].labels[pairs[:, 0]],
            entry["pairing_mode"], tag,
            pair_ids=load_array(directory / entry["pair_ids"]),
            metadata=metadata,
        )
    f = manifest["folds"]
    folds = FoldAssignment(load_array(directory / f["file"]).astype(np.int64), f["k"], f["seed"])
    return MultiViewBenchmark(manifest["name"], parts["pool"], parts["test"], folds, manifest["config"])
