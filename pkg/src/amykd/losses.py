"""Training objectives: BCE, triplet loss, contrastive-phase
regularizers, margin-augmented focal loss, feature distillation, and
temperature-scaled logit distillation.

All functions are pure and operate on torch tensors; teacher-side inputs
to distillation terms are detached inside the loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import DataError

LOG_EPS = 1e-8
_LOG_FLOOR = torch.log(torch.tensor(LOG_EPS)).item()


@dataclass(frozen=True)
class TripletLossConfig:
    margin: float = 1.0


@dataclass(frozen=True)
class Phase2RegConfig:
    l2_coeff: float = 0.01
    anchor_sim_threshold: float = 0.5
    anchorneg_sim_threshold: float = -0.1
    anchorneg_weight: float = 0.5


@dataclass(frozen=True)
class MarginFocalConfig:
    gamma: float = 2.0
    pos_weight: float = 1.0
    label_smoothing: float = 0.0
    gap_internal_scale: float = 0.1


@dataclass(frozen=True)
class DistillWeights:
    lambda_cls: float
    lambda_feat: float
    lambda_logit: float
    temperature: float = 1.0

    def __post_init__(self):
        if min(self.lambda_cls, self.lambda_feat, self.lambda_logit) < 0:
            raise DataError("distillation weights must be nonnegative")
        if self.temperature < 1.0:
            raise DataError("distillation temperature must be >= 1")


def _stable_bce(logits: torch.Tensor, targets: torch.Tensor,
                pos_weight: float = 1.0) -> torch.Tensor:
    """Per-sample weighted BCE-with-logits with log-probs floored at
    log(1e-8)."""
    log_p = torch.clamp(F.logsigmoid(logits), min=_LOG_FLOOR)
    log_1mp = torch.clamp(F.logsigmoid(-logits), min=_LOG_FLOOR)
    return -(pos_weight * targets * log_p + (1.0 - targets) * log_1mp)


def bce_loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    return _stable_bce(logits, targets).mean()


def triplet_loss(anchor: torch.Tensor, positive: torch.Tensor, negative: torch.Tensor,
                 margin: float = 1.0) -> torch.Tensor:
    """Mean hinge over the batch: max(0, d(a,p) - d(a,n) + m)."""
    if anchor.numel() == 0:
        raise DataError("triplet loss on an empty batch")
    d_pos = (anchor - positive).norm(dim=-1)
    d_neg = (anchor - negative).norm(dim=-1)
    return torch.clamp(d_pos - d_neg + margin, min=0.0).mean()


def phase2_reg_scale(epoch: int) -> float:
    """Progressive scale for the anti-collapse terms: 0.1 for epochs 1-3,
    linear to 1.0 by epoch 13, then 1.0."""
    if epoch <= 3:
        return 0.1
    if epoch >= 13:
        return 1.0
    return 0.1 + 0.9 * (epoch - 3) / 10.0


def _mean_pairwise_cos(x: torch.Tensor) -> torch.Tensor:
    # Zero-norm embeddings carry no direction; they are excluded rather
    # than given an arbitrary cosine.
    x = x[x.norm(dim=-1) > LOG_EPS]
    n = x.shape[0]
    if n < 2:
        return x.new_zeros(())
    xn = F.normalize(x, dim=-1, eps=LOG_EPS)
    sims = xn @ xn.t()
    off_diag = sims.sum() - sims.diagonal().sum()
    return off_diag / (n * (n - 1))


def phase2_regularizer(anchor: torch.Tensor, positive: torch.Tensor,
                       negative: torch.Tensor, epoch: int,
                       cfg: Phase2RegConfig = Phase2RegConfig()) -> torch.Tensor:
    """l2 norm penalty plus progressively scaled anti-collapse terms."""
    l2 = (anchor.pow(2).sum(-1).mean() + positive.pow(2).sum(-1).mean()
          + negative.pow(2).sum(-1).mean())
    inter_anchor = torch.clamp(_mean_pairwise_cos(anchor) - cfg.anchor_sim_threshold, min=0.0)
    valid = (anchor.norm(dim=-1) > LOG_EPS) & (negative.norm(dim=-1) > LOG_EPS)
    if valid.any():
        an_cos = F.cosine_similarity(anchor[valid], negative[valid], dim=-1, eps=LOG_EPS).mean()
        anchor_neg = torch.clamp(an_cos - cfg.anchorneg_sim_threshold, min=0.0)
    else:
        anchor_neg = anchor.new_zeros(())
    s = phase2_reg_scale(epoch)
    return cfg.l2_coeff * l2 + s * (inter_anchor + cfg.anchorneg_weight * anchor_neg)


def phase2_total(z_teacher: torch.Tensor, targets: torch.Tensor,
                 anchor: torch.Tensor, positive: torch.Tensor, negative: torch.Tensor,
                 epoch: int, margin: float = 1.0, lambda_cls: float = 1.0) -> torch.Tensor:
    return (triplet_loss(anchor, positive, negative, margin)
            + lambda_cls * bce_loss(z_teacher, targets)
            + phase2_regularizer(anchor, positive, negative, epoch))


def margin_focal(logits: torch.Tensor, targets: torch.Tensor, margin: float,
                 gamma: float = 2.0, lambda_gap: float = 0.1,
                 cfg: MarginFocalConfig = MarginFocalConfig()) -> torch.Tensor:
    """Margin-augmented focal loss with a batch-level logit-gap penalty.

    Logits are shifted against their class by the margin before the
    focal-weighted BCE; the gap term penalizes a positive/negative mean
    raw-logit separation below the margin (0 when a class is absent).
    """
    if logits.numel() == 0:
        raise DataError("margin_focal on an empty batch")
    y = targets.float()
    if cfg.label_smoothing > 0:
        y = y * (1.0 - cfg.label_smoothing) + 0.5 * cfg.label_smoothing
    hard = (y > 0.5).float()
    shifted = logits + margin * (1.0 - 2.0 * hard)
    p = torch.sigmoid(shifted)
    p_t = torch.clamp(y * p + (1.0 - y) * (1.0 - p), min=LOG_EPS, max=1.0 - LOG_EPS)
    focal = ((1.0 - p_t) ** gamma * _stable_bce(shifted, y, cfg.pos_weight)).mean()

    pos_mask, neg_mask = hard > 0.5, hard <= 0.5
    if pos_mask.any() and neg_mask.any():
        gap_deficit = torch.clamp(margin - (logits[pos_mask].mean() - logits[neg_mask].mean()),
                                  min=0.0)
    else:
        gap_deficit = logits.new_zeros(())
    return focal + lambda_gap * cfg.gap_internal_scale * gap_deficit


def feature_distill(e_student: torch.Tensor, e_teacher: torch.Tensor) -> torch.Tensor:
    """Mean squared distance between l2-normalized embeddings (teacher
    detached); bounded in [0, 4]."""
    e_teacher = e_teacher.detach()
    s = e_student / (e_student.norm(dim=-1, keepdim=True) + LOG_EPS)
    t = e_teacher / (e_teacher.norm(dim=-1, keepdim=True) + LOG_EPS)
    return (s - t).pow(2).sum(-1).mean()


def logit_distill(z_student: torch.Tensor, z_teacher: torch.Tensor,
                  temperature: float) -> torch.Tensor:
    """T^2-scaled BCE between softened student logits and softened
    teacher probabilities (teacher detached)."""
    if temperature < 1.0:
        raise DataError("distillation temperature must be >= 1")
    soft_targets = torch.sigmoid(z_teacher.detach() / temperature)
    return temperature ** 2 * _stable_bce(z_student / temperature, soft_targets).mean()


def distill_total(z_student: torch.Tensor, targets: torch.Tensor,
                  e_student: torch.Tensor, e_teacher: torch.Tensor,
                  z_teacher: torch.Tensor, weights: DistillWeights,
                  margin: float, lambda_gap: float = 0.1,
                  mf_cfg: MarginFocalConfig = MarginFocalConfig()) -> torch.Tensor:
    return (weights.lambda_cls * margin_focal(z_student, targets, margin,
                                              mf_cfg.gamma, lambda_gap, mf_cfg)
            + weights.lambda_feat * feature_distill(e_student, e_teacher)
            + weights.lambda_logit * logit_distill(z_student, z_teacher, weights.temperature))
