"""Accuracy, mutual agreement, frozen-encoder probes and minibatch CKA."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import CKAError, InvalidInputError


@dataclass
class PredictionSet:
    sample_ids: np.ndarray
    predicted: np.ndarray
    true: np.ndarray
    model_id: str = ""

    def __post_init__(self):
        self.sample_ids = np.asarray(self.sample_ids)
        self.predicted = np.asarray(self.predicted)
        self.true = np.asarray(self.true)
        if not len(self.sample_ids) == len(self.predicted) == len(self.true):
            raise InvalidInputError("sample_ids, predicted and true labels must align")


def accuracy(preds: PredictionSet) -> float:
    if len(preds.true) == 0:
        raise InvalidInputError("empty prediction set")
    return float(np.mean(preds.predicted == preds.true))


def mutual_agreement(preds_i: PredictionSet, preds_j: PredictionSet) -> float:
    """Fraction of samples on which both models predict the true label."""
    if len(preds_i.true) == 0:
        raise InvalidInputError("empty prediction set")
    if not np.array_equal(preds_i.sample_ids, preds_j.sample_ids):
        raise InvalidInputError("prediction sets cover different samples")
    if not np.array_equal(preds_i.true, preds_j.true):
        raise InvalidInputError("prediction sets disagree on the true labels")
    both = (preds_i.predicted == preds_i.true) & (preds_j.predicted == preds_j.true)
    return float(np.mean(both))


# ---------------------------------------------------------------------------
# linear probe


def fit_probe(z_train: np.ndarray, y_train: np.ndarray, c: float = 1.0, max_iter: int = 1000):
    """Standardize features with train statistics, then fit an L2 multinomial logistic regression."""
    from sklearn.linear_model import LogisticRegression
    from sklearn.pipeline import make_pipeline
    from sklearn.preprocessing import StandardScaler

    if len(np.unique(y_train)) < 2:
        raise InvalidInputError("probe training split must contain at least two classes")
    probe = make_pipeline(
        StandardScaler(), LogisticRegression(C=c, max_iter=max_iter)
    )
    return probe.fit(z_train, y_train)


def probe_accuracy(z_train, y_train, z_test, y_test, c: float = 1.0, max_iter: int = 1000) -> float:
    probe = fit_probe(np.asarray(z_train), np.asarray(y_train), c, max_iter)
    return float(np.mean(probe.predict(np.asarray(z_test)) == np.asarray(y_test)))


def linear_probe_transfer(model, train_set, test_set, c: float = 1.0, max_iter: int = 1000) -> float:
    """Test accuracy of a logistic-regression probe on a frozen encoder's representations.

    ``train_set`` / ``test_set`` are :class:`~pipeinv.datasets.LabeledImageSet`
    instances of a view the encoder was not trained on.  The encoder's
    parameters are checked to be unchanged on return.
    """
    from .encoders import parameter_hash
    from .training import representations

    before = parameter_hash(model)
    z_train = representations(model, train_set.images)
    z_test = representations(model, test_set.images)
    acc = probe_accuracy(z_train, train_set.labels, z_test, test_set.labels, c, max_iter)
    if parameter_hash(model) != before:
        raise RuntimeError("encoder parameters changed during the probe")
    return acc


# ---------------------------------------------------------------------------
# representational similarity


def flatten_activations(tensor: np.ndarray) -> np.ndarray:
    """``m x c x spatial...`` -> ``m x (c * prod(spatial))`` in C (row-major) order."""
    tensor = np.asarray(tensor)
    if tensor.ndim < 2 or tensor.shape[0] < 1:
        raise InvalidInputError(f"need an m x c x ... block with m >= 1, got {tensor.shape}")
    return tensor.reshape(tensor.shape[0], -1)


def unflatten_activations(matrix: np.ndarray, block_shape: Sequence[int]) -> np.ndarray:
    return np.asarray(matrix).reshape((len(matrix), *block_shape))


def unbiased_hsic(K: np.ndarray, L: np.ndarray) -> float:
    """Unbiased HSIC estimate from two n x n Gram matrices (n >= 4)."""
    K = np.asarray(K, dtype=np.float64)
    L = np.asarray(L, dtype=np.float64)
    if K.shape != L.shape or K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise InvalidInputError(f"need two square matrices of equal size, got {K.shape}, {L.shape}")
    n = K.shape[0]
    if n < 4:
        raise InvalidInputError(f"unbiased HSIC needs n >= 4, got {n}")
    Kt = K.copy()
    Lt = L.copy()
    np.fill_diagonal(Kt, 0.0)
    np.fill_diagonal(Lt, 0.0)
    ones_k = Kt.sum(axis=0)  # 1^T K~
    l_ones = Lt.sum(axis=1)  # L~ 1
    trace = np.sum(Kt * Lt.T)
    middle = ones_k.sum() * l_ones.sum() / ((n - 1) * (n - 2))
    last = 2.0 / (n - 2) * (ones_k @ l_ones)
    return float((trace + middle - last) / (n * (n - 3)))


def _batched_hsic(Ks: np.ndarray, Ls: np.ndarray) -> np.ndarray:
    """Vectorized unbiased HSIC over a stack of k Gram-matrix pairs."""
    n = Ks.shape[-1]
    mask = 1.0 - np.eye(n)
    Kt = Ks * mask
    Lt = Ls * mask
    ones_k = Kt.sum(axis=1)
    l_ones = Lt.sum(axis=2)
    trace = np.einsum("bij,bji->b", Kt, Lt)
    middle = ones_k.sum(1) * l_ones.sum(1) / ((n - 1) * (n - 2))
    last = 2.0 / (n - 2) * np.einsum("bi,bi->b", ones_k, l_ones)
    return (trace + middle - last) / (n * (n - 3))


def minibatch_batches(m: int, n: int, seed: int) -> np.ndarray:
    """Seeded random split of ``m`` rows into ``m // n`` batches of ``n`` (remainder dropped)."""
    if n < 4:
        raise InvalidInputError(f"minibatch size must be >= 4, got {n}")
    if m < n:
        raise InvalidInputError(f"{m} samples cannot fill a minibatch of {n}")
    k = m // n
    return np.random.default_rng(seed).permutation(m)[: k * n].reshape(k, n)


def minibatch_cka(X, Y, n: int = 8, seed: int = 0, batches: np.ndarray | None = None) -> float:
    """Linear CKA from batch-averaged unbiased HSIC terms.

    Rows of ``X`` and ``Y`` must describe the same samples in the same order.
    The value is not clamped; a negative variance estimate raises
    :class:`CKAError`.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or len(X) != len(Y):
        raise InvalidInputError(f"X and Y must be m x u with equal m, got {X.shape}, {Y.shape}")
    if batches is None:
        batches = minibatch_batches(len(X), n, seed)
    Xb, Yb = X[batches], Y[batches]
    K = Xb @ Xb.transpose(0, 2, 1)
    L = Yb @ Yb.transpose(0, 2, 1)
    hkl = _batched_hsic(K, L).mean()
    hkk = _batched_hsic(K, K).mean()
    hll = _batched_hsic(L, L).mean()
    # a constant kernel has zero self-HSIC; roundoff leaves a tiny residue of either sign
    tol_k = 1e-10 * np.mean(K**2)
    tol_l = 1e-10 * np.mean(L**2)
    if hkk <= tol_k or hll <= tol_l:
        raise CKAError(
            f"non-positive self-HSIC (H(K,K)={hkk:.3g}, H(L,L)={hll:.3g}); "
            "activations are near-constant across samples"
        )
    return float(hkl / (np.sqrt(hkk) * np.sqrt(hll)))


@dataclass
class CKAMatrix:
    values: np.ndarray
    layers_a: list[str]
    layers_b: list[str]
    n: int
    seed: int
    k: int
    sample_ids: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["layer"] + list(self.layers_b))
            for name, row in zip(self.layers_a, self.values):
                w.writerow([name] + [f"{v:.6f}" for v in row])


def cka_between(acts_a, acts_b, n: int = 8, seed: int = 0) -> CKAMatrix:
    """CKA for every layer pair of two lists of :class:`ActivationMatrix`.

    All layers share one seeded batch assignment.
    """
    ids = acts_a[0].sample_ids
    for act in list(acts_a) + list(acts_b):
        if not np.array_equal(act.sample_ids, ids):
            raise InvalidInputError("activation rows are not aligned by sample id")
    batches = minibatch_batches(len(ids), n, seed)
    values = np.array(
        [[minibatch_cka(a.values, b.values, batches=batches) for b in acts_b] for a in acts_a]
    )
    return CKAMatrix(
        values, [a.layer_id for a in acts_a], [b.layer_id for b in acts_b], n, seed, len(batches), ids
    )


def cka_matrix(
    model_a,
    model_b,
    images_a,
    images_b,
    sample_ids,
    layers_a: Sequence[str] | None = None,
    layers_b: Sequence[str] | None = None,
    n: int = 8,
    seed: int = 0,
) -> CKAMatrix:
    """Layer-by-layer CKA between two models.

    ``images_a`` feeds ``model_a`` and ``images_b`` feeds ``model_b``; row r of
    both arrays must be the same sample (``sample_ids[r]``).
    """
    from .encoders import extract_activations

    if len(images_a) != len(images_b) or len(images_a) != len(sample_ids):
        raise InvalidInputError("images and sample ids must align")
    layers_a = list(layers_a or model_a.spec.layer_ids)
    layers_b = list(layers_b or model_b.spec.layer_ids)
    acts_a = extract_activations(model_a, images_a, sample_ids, layers_a)
    acts_b = extract_activations(model_b, images_b, sample_ids, layers_b)
    return cka_between(acts_a, acts_b, n, seed)


def paired_comparison(a: Sequence[float], b: Sequence[float]) -> dict[str, float]:
    """Summary of paired differences ``a - b`` with a Wilcoxon signed-rank p-value."""
    from scipy.stats import wilcoxon

    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    diff = a - b
    out = {
        "mean_diff": float(diff.mean()),
        "wins": int((diff > 0).sum()),
        "ties": int((diff == 0).sum()),
        "losses": int((diff < 0).sum()),
    }
    out["p_value"] = float(wilcoxon(a, b).pvalue) if np.any(diff != 0) and len(diff) > 1 else float("nan")
    return out
