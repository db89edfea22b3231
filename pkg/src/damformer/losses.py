"""Compound dual-task objective: BCE + Dice for buildings, CE + Lovasz-softmax for damage."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ConfigError, Tensor

N_DAMAGE = 5


@dataclass
class LossConfig:
    alpha: float = 1.0
    dice_eps: float = 1.0
    lovasz_classes: str = "present"  # or "all"
    w_bce: float = 1.0
    w_dice: float = 1.0
    w_ce: float = 1.0
    w_lovasz: float = 1.0

    def validate(self) -> None:
        if self.alpha < 0:
            raise ConfigError("loss.alpha must be >= 0")
        if self.dice_eps <= 0:
            raise ConfigError("loss.dice_eps must be > 0")
        if self.lovasz_classes not in ("present", "all"):
            raise ConfigError(f"loss.lovasz_classes must be present|all, got {self.lovasz_classes!r}")


def _binary_mask(mask, shape) -> np.ndarray:
    m = np.asarray(mask)
    if m.shape != shape:
        raise ValueError(f"mask shape {m.shape} does not match prediction {shape}")
    if not np.isin(m, (0, 1)).all():
        raise ValueError("localization mask must be binary")
    return m


def _class_mask(mask, shape, n_classes: int = N_DAMAGE) -> np.ndarray:
    m = np.asarray(mask)
    if m.shape != shape:
        raise ValueError(f"mask shape {m.shape} does not match prediction {shape}")
    if m.size and (
        m.min() < 0 or m.max() >= n_classes or (m.dtype.kind == "f" and not np.array_equal(m, np.round(m)))
    ):
        raise ValueError(f"damage mask entries must be integers in 0..{n_classes - 1}")
    return m.astype(np.int64)


def bce_loss(loc_logits: Tensor, loc_mask) -> Tensor:
    """Mean of softplus(z) - y*z, the stable form of binary cross-entropy on logits."""
    n, _, h, w = loc_logits.shape
    y = _binary_mask(loc_mask, (n, h, w)).reshape(loc_logits.shape).astype(loc_logits.dtype)
    return T.mean(T.sub(T.softplus(loc_logits), T.mul(loc_logits, Tensor(y))))


def dice_loss(loc_logits: Tensor, loc_mask, eps: float = 1.0) -> Tensor:
    n, _, h, w = loc_logits.shape
    y = _binary_mask(loc_mask, (n, h, w)).reshape(loc_logits.shape).astype(loc_logits.dtype)
    p = T.sigmoid(loc_logits)
    inter = T.sum_(T.mul(p, Tensor(y)))
    num = T.add(T.mul(inter, 2.0), eps)
    den = T.add(T.sum_(p), float(y.sum()) + eps)
    return T.sub(Tensor(np.ones((), dtype=loc_logits.dtype)), T.div(num, den))


def ce_loss(dam_logits: Tensor, dam_mask) -> Tensor:
    n, k, h, w = dam_logits.shape
    y = _class_mask(dam_mask, (n, h, w), k)
    logp = T.log_softmax(dam_logits, axis=1)
    # flat index of logp[n, y, h, w]
    nn_, hh, ww = np.indices((n, h, w))
    idx = ((nn_ * k + y) * h + hh) * w + ww
    return T.neg(T.mean(T.take(logp, idx)))


def lovasz_grad(gt_sorted) -> np.ndarray:
    """Gradient of the Lovasz extension of the Jaccard loss w.r.t. sorted errors.

    Works along the last axis, so a [K, P] array gives one row per class.
    """
    gt = np.asarray(gt_sorted, dtype=np.float64)
    if gt.size == 0:
        return gt
    total = gt.sum(axis=-1, keepdims=True)
    seen = np.cumsum(gt, axis=-1)
    intersection = total - seen
    union = total + np.arange(1, gt.shape[-1] + 1) - seen
    jaccard = 1.0 - intersection / union
    jaccard[..., 1:] = jaccard[..., 1:] - jaccard[..., :-1]
    return jaccard


def lovasz_class_losses(probs: Tensor, dam_mask, policy: str = "present") -> tuple[list[int], Tensor]:
    """Per-class Lovasz hinge on class probabilities ``probs[N,K,H,W]``.

    Returns the scored classes and a tensor with one loss per class.
    """
    n, k, h, w = probs.shape
    y = _class_mask(dam_mask, (n, h, w), k).ravel()
    classes = np.arange(k) if policy == "all" else np.unique(y)
    # flat index of probs[n, c, h, w] for every (class, pixel)
    pix = np.arange(n * h * w)
    pix = (pix // (h * w)) * (k * h * w) + pix % (h * w)
    rows = classes[:, None] * (h * w) + pix[None, :]
    fg = (y[None, :] == classes[:, None]).astype(probs.dtype)
    # stable descending sort of the errors: ties keep pixel order
    perm = np.argsort(-np.abs(fg - probs.data.reshape(-1)[rows]), axis=1, kind="stable")
    order = np.arange(len(classes))[:, None], perm
    fg_sorted = fg[order]
    errors = T.abs_(T.sub(Tensor(fg_sorted), T.take(probs, rows[order])))
    weights = lovasz_grad(fg_sorted).astype(probs.dtype)
    return classes.tolist(), T.sum_(T.mul(errors, Tensor(weights)), axis=1)


def lovasz_per_class(probs: Tensor, dam_mask, policy: str = "present") -> list[tuple[int, Tensor]]:
    classes, losses = lovasz_class_losses(probs, dam_mask, policy)
    return [(c, T.take(losses, np.array(i))) for i, c in enumerate(classes)]


def lovasz_softmax_probs(probs: Tensor, dam_mask, policy: str = "present") -> Tensor:
    _, losses = lovasz_class_losses(probs, dam_mask, policy)
    return T.mean(losses)


def lovasz_softmax(dam_logits: Tensor, dam_mask, policy: str = "present") -> Tensor:
    return lovasz_softmax_probs(T.softmax(dam_logits, axis=1), dam_mask, policy)


@dataclass
class LossBreakdown:
    overall: Tensor
    loc: float
    dam: float
    bce: float
    dice: float
    ce: float
    lovasz: float

    def as_dict(self) -> dict[str, float]:
        return {
            "overall": float(self.overall.data),
            "loc": self.loc,
            "dam": self.dam,
            "bce": self.bce,
            "dice": self.dice,
            "ce": self.ce,
            "lovasz": self.lovasz,
        }


def overall_loss(l_loc, l_dam, alpha: float):
    """L_loc + alpha * L_dam for floats or tensors."""
    if isinstance(l_loc, Tensor):
        return T.add(l_loc, T.mul(l_dam, alpha))
    return l_loc + alpha * l_dam


def compound_loss(loc_logits: Tensor, dam_logits: Tensor, loc_mask, dam_mask, cfg: LossConfig | None = None) -> LossBreakdown:
    """L_loc + alpha * L_dam, with the four component values reported alongside."""
    cfg = cfg or LossConfig()
    cfg.validate()
    bce = bce_loss(loc_logits, loc_mask)
    dice = dice_loss(loc_logits, loc_mask, cfg.dice_eps)
    ce = ce_loss(dam_logits, dam_mask)
    lov = lovasz_softmax(dam_logits, dam_mask, cfg.lovasz_classes)
    l_loc = T.add(T.mul(bce, cfg.w_bce), T.mul(dice, cfg.w_dice))
    l_dam = T.add(T.mul(ce, cfg.w_ce), T.mul(lov, cfg.w_lovasz))
    overall = overall_loss(l_loc, l_dam, cfg.alpha)
    return LossBreakdown(
        overall=overall,
        loc=float(l_loc.data),
        dam=float(l_dam.data),
        bce=float(bce.data),
        dice=float(dice.data),
        ce=float(ce.data),
        lovasz=float(lov.data),
    )
