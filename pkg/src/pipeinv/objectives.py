"""Supervised, contrastive and combined training objectives.

The contrastive term is a symmetric NCE loss over critic scores between two
views' projected embeddings.  The critic is a scaled dot product passed
through a soft ``c * tanh(s / c)`` clip, with an L2 penalty on the raw
(unclipped) scores.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as F

from .encoders import ProjectionHeadSpec
from .errors import ConfigError, InvalidInputError

NCE_SCOPES = ("minibatch", "full_set")


@dataclass(frozen=True)
class ObjectiveConfig:
    lam: float = 0.75
    critic_scale: float | None = None  # None -> 1/sqrt(embedding dim)
    clip: float = 10.0
    penalty_weight: float = 4e-2
    projection_head: ProjectionHeadSpec = field(default_factory=ProjectionHeadSpec)
    nce_scope: str = "minibatch"
    include_positive_in_denominator: bool = False

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("objective.lambda", f"must lie in [0, 1], got {self.lam}")
        if self.critic_scale is not None and not self.critic_scale > 0:
            raise ConfigError("objective.critic_scale", "must be > 0")
        if not self.clip > 0:
            raise ConfigError("objective.clip", "must be > 0")
        if self.penalty_weight < 0:
            raise ConfigError("objective.penalty_weight", "must be >= 0")
        if self.nce_scope not in NCE_SCOPES:
            raise ConfigError("objective.nce_scope", f"must be one of {NCE_SCOPES}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


@dataclass
class ScoreMatrix:
    scores: torch.Tensor  # clipped critic values, row a = view-i item, column b = view-j item
    raw_scores: torch.Tensor

    @property
    def T(self) -> "ScoreMatrix":
        return ScoreMatrix(self.scores.T.contiguous(), self.raw_scores.T.contiguous())


def supervised_loss(logits_i: torch.Tensor, logits_j: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Sum of the two heads' batch-mean cross-entropies."""
    labels = torch.as_tensor(labels, dtype=torch.long)
    for logits in (logits_i, logits_j):
        if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
            raise InvalidInputError("logits must be batch x classes and align with labels")
        if labels.numel() and (labels.min() < 0 or labels.max() >= logits.shape[1]):
            raise InvalidInputError(f"labels must lie in [0, {logits.shape[1]})")
    return F.cross_entropy(logits_i, labels) + F.cross_entropy(logits_j, labels)


def pairwise_dot(a: torch.Tensor, b: torch.Tensor, chunk: int = 256) -> torch.Tensor:
    """``a @ b.T`` computed so that ``pairwise_dot(b, a)`` is exactly its transpose.

    Each entry is an elementwise product summed over the feature axis, which
    makes the result independent of operand order (matmul kernels are not).
    """
    rows = [(a[s : s + chunk, None, :] * b[None, :, :]).sum(-1) for s in range(0, len(a), chunk)]
    return torch.cat(rows) if rows else a.new_zeros((0, len(b)))


def critic_scores(h_i: torch.Tensor, h_j: torch.Tensor, config: ObjectiveConfig) -> ScoreMatrix:
    if h_i.ndim != 2 or h_j.ndim != 2 or h_i.shape[1] != h_j.shape[1]:
        raise InvalidInputError(
            f"embeddings must be n x d with matching d, got {tuple(h_i.shape)} and {tuple(h_j.shape)}"
        )
    scale = config.critic_scale if config.critic_scale is not None else 1 / math.sqrt(h_i.shape[1])
    raw = pairwise_dot(h_i, h_j) * scale
    c = config.clip
    return ScoreMatrix(c * torch.tanh(raw / c), raw)


def nce_direction_loss(scores: ScoreMatrix | torch.Tensor, include_positive: bool = False) -> torch.Tensor:
    """Mean over rows of ``-log(exp(s_nn) / sum_m exp(s_nm))``.

    By default the positive ``m == n`` is excluded from the denominator; set
    ``include_positive`` for the usual softmax (InfoNCE) form.
    """
    s = scores.scores if isinstance(scores, ScoreMatrix) else scores
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise InvalidInputError("score matrix must be square")
    n = s.shape[0]
    if n < 2:
        raise InvalidInputError("need at least two items so the denominator is non-empty")
    positive = torch.diagonal(s)
    if include_positive:
        denom = torch.logsumexp(s, dim=1)
    else:
        eye = torch.eye(n, dtype=torch.bool, device=s.device)
        denom = torch.logsumexp(s.masked_fill(eye, float("-inf")), dim=1)
    return (denom - positive).mean()


def _direction_term(s: ScoreMatrix, config: ObjectiveConfig) -> torch.Tensor:
    nce = nce_direction_loss(s, config.include_positive_in_denominator)
    return nce + 0.5 * config.penalty_weight * s.raw_scores.pow(2).mean()


def contrastive_loss(h_i: torch.Tensor, h_j: torch.Tensor, config: ObjectiveConfig) -> torch.Tensor:
    """Symmetric NCE: ``l(i->j) + l(j->i) + penalty_weight * mean(raw^2)``.

    The penalty is split evenly over the two directions so swapping the views
    reproduces the value bit for bit.
    """
    s = critic_scores(h_i, h_j, config)
    return _direction_term(s, config) + _direction_term(s.T, config)


def pxl_objective(sup: torch.Tensor, con: torch.Tensor, lam: float) -> torch.Tensor:
    """``lam * sup + (1 - lam) * con``; the endpoints return one term untouched."""
    if not 0.0 <= lam <= 1.0:
        raise ConfigError("objective.lambda", f"must lie in [0, 1], got {lam}")
    if lam == 1.0:
        return sup
    if lam == 0.0:
        return con
    return lam * sup + (1 - lam) * con
