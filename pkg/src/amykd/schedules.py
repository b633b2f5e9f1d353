"""Epoch-indexed schedules for the distillation phase and gradient
control. Linear ramps attain their endpoint at the final ramp epoch.
"""

from __future__ import annotations

from .losses import DistillWeights

MARGIN_START, MARGIN_END = 0.3, 1.2
TEMP_START, TEMP_END = 2.5, 1.0


def schedule_margin(epoch: int) -> float:
    """0.3 through epoch 6, linear to 1.2 at epoch 20, fixed after."""
    if epoch <= 6:
        return MARGIN_START
    if epoch >= 20:
        return MARGIN_END
    return MARGIN_START + (MARGIN_END - MARGIN_START) * ((epoch - 6) / 14.0)


def schedule_temperature(epoch: int) -> float:
    """2.5 through epoch 6, linear to 1.0 at epoch 20, fixed after."""
    if epoch <= 6:
        return TEMP_START
    if epoch >= 20:
        return TEMP_END
    return TEMP_START + (TEMP_END - TEMP_START) * ((epoch - 6) / 14.0)


def schedule_weights(epoch: int) -> DistillWeights:
    """Linear warm-up from (0.3, 0.5, 0.2) at epoch 1 to (0.4, 0.4, 0.2)
    at epoch 10, then fixed."""
    t = min(max(epoch - 1, 0) / 9.0, 1.0)
    return DistillWeights(
        lambda_cls=0.3 + 0.1 * t,
        lambda_feat=0.5 - 0.1 * t,
        lambda_logit=0.2,
        temperature=schedule_temperature(epoch),
    )


def lambda_gap_for_epoch(epoch: int) -> float:
    """0.1 for epochs 1-10, 0.3 from epoch 11 on."""
    return 0.1 if epoch <= 10 else 0.3


def clip_norm_for_epoch(epoch: int) -> float:
    """Gradient-clip max norm: 1.0 (epochs 1-2), 2.0 (3-5), 5.0 after."""
    if epoch <= 2:
        return 1.0
    if epoch <= 5:
        return 2.0
    return 5.0
