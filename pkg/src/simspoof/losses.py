"""Training objectives.

Class index 0 is bona fide and 1 is spoof throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autograd as ag
from .autograd import ShapeError, Tensor
from .nn import Module, param

BONAFIDE, SPOOF = 0, 1
COS_EPS = 1e-7


@dataclass(frozen=True)
class AamConfig:
    scale: float = 32.0
    margin_bonafide: float = 0.2
    margin_spoof: float = 0.9
    class_weights: tuple = (0.9, 0.1)
    # False: weight sits inside the log as printed, adding -log(w)/B per sample.
    # True: weight multiplies each sample's log-loss.
    conventional_weighting: bool = False

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        for m in (self.margin_bonafide, self.margin_spoof):
            if not -1.0 <= m <= 1.0:
                raise ValueError(f"margin {m} outside [-1, 1]")
        if len(self.class_weights) != 2 or min(self.class_weights) <= 0:
            raise ValueError("class_weights must be two positive numbers")
        object.__setattr__(self, "class_weights", tuple(float(w) for w in self.class_weights))

    @property
    def margins(self) -> tuple:
        return (self.margin_bonafide, self.margin_spoof)


class AamHead(Module):
    """Two class anchors stored as the columns of a ``d x 2`` matrix, no bias."""

    def __init__(self, dim: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.weight = param(rng.normal(size=(dim, 2)) / math.sqrt(dim), dtype)

    def cosine(self, embeddings) -> Tensor:
        return cosine_logits(embeddings, self.weight)


def _labels(labels, batch: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.size != batch:
        raise ShapeError(f"{y.size} labels for a batch of {batch}")
    if np.any((y != BONAFIDE) & (y != SPOOF)):
        raise ValueError("labels must be 0 (bona fide) or 1 (spoof)")
    return y


def _one_hot(y: np.ndarray, dtype) -> np.ndarray:
    out = np.zeros((y.size, 2), dtype=dtype)
    out[np.arange(y.size), y] = 1.0
    return out


def log_softmax(logits: Tensor) -> Tensor:
    shift = Tensor(logits.data.max(axis=-1, keepdims=True))
    z = logits - shift
    return z - ag.log(ag.sum(ag.exp(z), axis=-1, keepdims=True))


def weighted_cross_entropy(logits, labels, weights: Sequence[float] = (0.9, 0.1)) -> Tensor:
    """``sum_i w_{y_i} * -log softmax_{y_i} / sum_i w_{y_i}``."""
    logits = ag.as_tensor(logits)
    if logits.ndim != 2 or logits.shape[1] != 2:
        raise ShapeError(f"expected B x 2 logits, got {logits.shape}")
    y = _labels(labels, logits.shape[0])
    w = np.asarray(weights, dtype=logits.dtype)[y]
    picked = ag.sum(log_softmax(logits) * Tensor(_one_hot(y, logits.dtype)), axis=1)
    return ag.scale(ag.sum(picked * Tensor(w)), -1.0 / float(w.sum()))


def l2_normalize(x: Tensor, axis: int) -> Tensor:
    norms = np.sqrt((x.data.astype(np.float64) ** 2).sum(axis=axis, keepdims=True))
    if np.any(norms == 0):
        raise ValueError("cannot normalize a zero vector")
    return x / ag.sqrt(ag.sum(ag.square(x), axis=axis, keepdims=True))


def cosine_logits(embeddings, anchors) -> Tensor:
    """Cosine between each embedding row and each anchor column, ``B x 2``."""
    embeddings, anchors = ag.as_tensor(embeddings), ag.as_tensor(anchors)
    if embeddings.ndim != 2 or embeddings.shape[1] != anchors.shape[0]:
        raise ShapeError(f"embeddings {embeddings.shape} incompatible with anchors {anchors.shape}")
    return ag.matmul(l2_normalize(embeddings, 1), l2_normalize(anchors, 0))


def aam_loss(embeddings, labels, head, cfg: AamConfig = AamConfig()) -> Tensor:
    """Weighted additive-angular-margin loss for two classes.

    Per sample, the margin of the true class is added to its angle
    (clamped to [0, pi]) before scaling by ``cfg.scale``.
    """
    embeddings = ag.as_tensor(embeddings)
    if embeddings.ndim != 2 or embeddings.shape[0] == 0:
        raise ShapeError(f"expected a non-empty B x d batch, got {embeddings.shape}")
    B = embeddings.shape[0]
    y = _labels(labels, B)
    anchors = head.weight if isinstance(head, AamHead) else ag.as_tensor(head)
    cos = ag.clip(cosine_logits(embeddings, anchors), -1.0 + COS_EPS, 1.0 - COS_EPS)
    dtype = cos.dtype
    onehot = Tensor(_one_hot(y, dtype))
    cos_target = ag.sum(cos * onehot, axis=1)
    cos_other = ag.sum(cos * Tensor(1.0 - _one_hot(y, dtype)), axis=1)
    margins = np.asarray(cfg.margins, dtype=dtype)[y]
    angle = ag.clip(ag.arccos(cos_target) + Tensor(margins), 0.0, math.pi)
    target = ag.scale(ag.cos(angle), cfg.scale)
    other = ag.scale(cos_other, cfg.scale)
    logits = ag.stack([target, other], axis=1)
    log_p = ag.getitem(log_softmax(logits), (slice(None), 0))
    w = np.asarray(cfg.class_weights, dtype=dtype)[y]
    if cfg.conventional_weighting:
        return ag.scale(ag.sum(log_p * Tensor(w)), -1.0 / B)
    return ag.scale(ag.sum(log_p + Tensor(np.log(w))), -1.0 / B)


def relation_mse_loss(scores, same_label_mask, n: Optional[int] = None, k: Optional[int] = None) -> Tensor:
    """Mean squared gap between relation scores and the 0/1 match indicator.

    ``scores`` is ``NK x 2K``; the mean divides by the pair count ``2NK^2``.
    """
    scores = ag.as_tensor(scores)
    mask = np.asarray(same_label_mask, dtype=scores.dtype)
    if scores.ndim != 2 or mask.shape != scores.shape:
        raise ShapeError(f"scores {scores.shape} and mask {mask.shape} must be matching matrices")
    if n is not None and k is not None and scores.shape != (n * k, 2 * k):
        raise ShapeError(f"scores {scores.shape} do not match an episode with N={n}, K={k}")
    return ag.mean(ag.square(scores - Tensor(mask)))


def total_loss(l_aam, l_mse, lambda_balance: float = 1.0) -> Tensor:
    if lambda_balance < 0:
        raise ValueError("lambda_balance must be non-negative")
    return ag.as_tensor(l_aam) + ag.scale(ag.as_tensor(l_mse), lambda_balance)
