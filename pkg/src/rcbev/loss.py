"""Centroid-aware focal loss over depth scores, and the cross-entropy baseline.

The centroid weight of a point inside a box is the geometric mean of the
three opposing face-distance ratios,

    w = cbrt( min(f,b)/max(f,b) * min(l,r)/max(l,r) * min(u,d)/max(u,d) ),

which is 1 exactly at the centroid, 0 on any face, and monotone toward the
centroid along each box axis. Positives are focal-weighted by w; negatives
use the plain focal term; Ignore elements contribute nothing to loss or
gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError
from .geometry import OrientedBox, face_distances
from .labels import IGNORE, NEGATIVE, NO_BOX, POSITIVE, LabelVolume
from .transform import FeatureTensor

LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class LossConfig:
    """Focal-loss parameters. Defaults are the standard focal values."""

    alpha: float = 0.25
    gamma: float = 2.0
    activation: str = "sigmoid"
    reduction: str = "mean"  # mean over supervised (non-Ignore) elements

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.activation not in ("sigmoid", "softmax"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.reduction not in ("sum", "mean"):
            raise ValueError(f"unknown reduction {self.reduction!r}")


@dataclass
class ScoreVolume:
    """Raw depth logits (D, H, W) plus the activation that normalizes them."""

    logits: np.ndarray
    activation: str = "sigmoid"

    def __post_init__(self):
        if self.logits.ndim != 3:
            raise ValueError("score volumes are (D, H, W)")
        if self.activation not in ("sigmoid", "softmax"):
            raise ValueError(f"unknown activation {self.activation!r}")

    def probabilities(self) -> np.ndarray:
        z = self.logits
        if self.activation == "sigmoid":
            out = np.empty_like(z)
            np.negative(np.abs(z), out=out)
            np.exp(out, out=out)
            return np.where(z >= 0, 1.0 / (1.0 + out), out / (1.0 + out))
        m = z.max(axis=0, keepdims=True)
        e = np.exp(z - m)
        return e / e.sum(axis=0, keepdims=True)


def cai_weight(p, box: OrientedBox):
    """Centroid-aware weight of interior point(s); scalar in [0, 1] or (...,)."""
    d = face_distances(p, box)
    f, b = d[..., 0], d[..., 1]
    l, r = d[..., 2], d[..., 3]
    u, dn = d[..., 4], d[..., 5]
    ratio = (
        (np.minimum(f, b) / np.maximum(f, b))
        * (np.minimum(l, r) / np.maximum(l, r))
        * (np.minimum(u, dn) / np.maximum(u, dn))
    )
    out = np.cbrt(ratio)
    return float(out) if out.ndim == 0 else out


def attach_cai_weights(
    labels: LabelVolume, points: np.ndarray, boxes: Sequence[OrientedBox]
) -> LabelVolume:
    """Fill every positive's centroid weight from its attached box.

    Background one-hot positives (box_id == NO_BOX) get weight 1; everything
    else gets 0.
    """
    out = labels.copy()
    pos = out.state == POSITIVE
    out.cai_weight[:] = 0.0
    out.cai_weight[pos & (out.box_id == NO_BOX)] = 1.0
    for idx in np.unique(out.box_id[pos]):
        if idx == NO_BOX:
            continue
        if idx < 0 or idx >= len(boxes):
            raise ValueError(f"label volume references box {idx} of {len(boxes)}")
        sel = pos & (out.box_id == idx)
        out.cai_weight[sel] = cai_weight(points[sel], boxes[idx]).astype(np.float32)
    return out


def _check_sigmoid(scores: ScoreVolume, labels: LabelVolume, cfg: LossConfig):
    if scores.activation != "sigmoid" or cfg.activation != "sigmoid":
        raise ConfigurationError("the centroid-aware focal loss requires sigmoid scores")
    if scores.logits.shape != labels.state.shape:
        raise ValueError(
            f"score shape {scores.logits.shape} != label shape {labels.state.shape}"
        )


def _focal_terms(p: np.ndarray, labels: LabelVolume, cfg: LossConfig):
    pos = labels.state == POSITIVE
    neg = labels.state == NEGATIVE
    w = labels.cai_weight.astype(p.dtype)
    alpha, gamma = cfg.alpha, cfg.gamma
    loss = np.zeros_like(p)
    loss[neg] = -(1 - alpha) * p[neg] ** gamma * np.log(np.maximum(1 - p[neg], LOG_CLAMP))
    loss[pos] = -w[pos] * alpha * (1 - p[pos]) ** gamma * np.log(np.maximum(p[pos], LOG_CLAMP))
    return loss, pos, neg


def _supervised_count(pos, neg) -> int:
    return int(np.count_nonzero(pos) + np.count_nonzero(neg))


def cai_focal_loss(scores: ScoreVolume, labels: LabelVolume, cfg: LossConfig | None = None) -> float:
    """Centroid-weighted sigmoid focal loss; Ignore elements contribute 0."""
    cfg = cfg or LossConfig()
    _check_sigmoid(scores, labels, cfg)
    p = scores.probabilities()
    loss, pos, neg = _focal_terms(p, labels, cfg)
    total = float(loss.sum())
    if cfg.reduction == "sum":
        return total
    n = _supervised_count(pos, neg)
    return total / n if n else 0.0


def cai_focal_grad(scores: ScoreVolume, labels: LabelVolume, cfg: LossConfig | None = None) -> FeatureTensor:
    """Analytic d(loss)/d(logit), including the reduction scaling.

    With p = sigmoid(z):
        y=1: d/dz = w * alpha * (1-p)^gamma * (gamma * p * log p - (1-p))
        y=0: d/dz = (1-alpha) * p^gamma * (p - gamma * (1-p) * log(1-p))
    Zero at Ignore elements; vanishes as p saturates toward the label.
    """
    cfg = cfg or LossConfig()
    _check_sigmoid(scores, labels, cfg)
    p = scores.probabilities()
    pos = labels.state == POSITIVE
    neg = labels.state == NEGATIVE
    w = labels.cai_weight.astype(p.dtype)
    alpha, gamma = cfg.alpha, cfg.gamma

    grad = np.zeros_like(p)
    pp = p[pos]
    grad[pos] = w[pos] * alpha * (1 - pp) ** gamma * (
        gamma * pp * np.log(np.maximum(pp, LOG_CLAMP)) - (1 - pp)
    )
    pn = p[neg]
    grad[neg] = (1 - alpha) * pn ** gamma * (
        pn - gamma * (1 - pn) * np.log(np.maximum(1 - pn, LOG_CLAMP))
    )
    if cfg.reduction == "mean":
        n = _supervised_count(pos, neg)
        if n:
            grad /= n
        else:
            grad[:] = 0.0
    return FeatureTensor(("D", "H", "W"), grad)


def ce_depth_loss(scores: ScoreVolume, onehot_labels: LabelVolume) -> float:
    """Softmax cross-entropy against one-hot depth labels (the baseline).

    Positive states mark the hot bin; pixels with no positive are
    unsupervised and contribute 0. More than one positive per pixel is a
    contract violation.
    """
    if scores.activation != "softmax":
        raise ConfigurationError("the cross-entropy depth loss requires softmax scores")
    if scores.logits.shape != onehot_labels.state.shape:
        raise ValueError("score and label shapes differ")
    hot = onehot_labels.state == POSITIVE
    per_pixel = hot.sum(axis=0)
    if np.any(per_pixel > 1):
        raise ValueError("one-hot labels must have at most one positive per pixel")
    supervised = per_pixel == 1
    if not np.any(supervised):
        return 0.0
    p = scores.probabilities()
    hot_p = p[hot]
    return float(np.mean(-np.log(np.maximum(hot_p, LOG_CLAMP))))
