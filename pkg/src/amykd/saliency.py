"""Interpretability maps: input-gradient saliency and HiResCAM
(elementwise gradient * activation, channel-summed, rectified).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DataError
from .nets import AmyloidNet


@dataclass
class SaliencyMap:
    per_slice: np.ndarray  # (S, 224, 224), nonnegative, max-normalized
    aggregated: np.ndarray  # (224, 224), max over slices

    @classmethod
    def from_raw(cls, raw: np.ndarray) -> "SaliencyMap":
        raw = np.maximum(raw, 0.0)
        peak = raw.max()
        if peak > 0:
            raw = raw / peak
        return cls(raw, raw.max(axis=0))


def gradient_saliency_fn(score_fn, x: torch.Tensor) -> np.ndarray:
    """|d score / d input| for an arbitrary scalar-valued score_fn."""
    x = x.clone().detach().requires_grad_(True)
    score = score_fn(x)
    if score.numel() != 1:
        raise DataError("score_fn must produce a scalar")
    score.sum().backward()
    return x.grad.detach().abs().numpy()


def gradient_saliency(model: AmyloidNet, mri_stack: torch.Tensor) -> SaliencyMap:
    """Per-pixel |d logit / d input| over the student's MRI path."""
    model.eval()
    if mri_stack.dim() == 3:
        mri_stack = mri_stack.unsqueeze(0)
    grads = gradient_saliency_fn(lambda x: model.forward_student(x)[1], mri_stack)
    return SaliencyMap.from_raw(grads[0])


def hirescam_fn(score_fn, activation_fn, x: torch.Tensor,
                grid: int | None = None, out_size: int = 224) -> np.ndarray:
    """HiResCAM at an arbitrary activation: ReLU(sum_c dz/dA_c * A_c).

    ``activation_fn`` maps the (differentiable) input to the activation
    tensor whose last dimension is channels; leading dimensions index
    spatial positions (optionally a flat token axis reshaped via
    ``grid``).
    """
    x = x.clone().detach().requires_grad_(True)
    act = activation_fn(x)
    act.retain_grad()
    score = score_fn(act)
    score.sum().backward()
    grad = act.grad
    if grad is None:
        raise DataError("activation did not receive a gradient")
    cam = (grad * act.detach()).sum(dim=-1)
    cam = torch.clamp(cam, min=0.0)
    if grid is not None:
        cam = cam.reshape(-1, grid, grid)
        cam = F.interpolate(cam.unsqueeze(1), size=(out_size, out_size),
                            mode="bilinear", align_corners=False).squeeze(1)
    return cam.detach().numpy()


def hirescam(model: AmyloidNet, mri_stack: torch.Tensor,
             layer: str = "final_block") -> SaliencyMap:
    """HiResCAM on the backbone's patch-token activations.

    Default layer is the final encoder block's token output; the token
    grid is reshaped to the patch layout and bilinearly upsampled.
    """
    model.eval()
    if mri_stack.dim() == 3:
        mri_stack = mri_stack.unsqueeze(0)
    b, s, h, w = mri_stack.shape
    if b != 1:
        raise DataError("hirescam expects a single session stack")
    backbone = model.backbone
    if layer != "final_block":
        raise DataError(f"unknown hirescam layer selector {layer!r}")

    images = mri_stack.reshape(s, 1, h, w)
    captured = {}

    def hook(_module, _inputs, output):
        output.retain_grad()
        captured["tokens"] = output
        return output

    handle = backbone.norm.register_forward_hook(hook)
    try:
        feats = backbone.head(captured_forward(backbone, images, captured))
        e = model.project(feats.view(1, s, -1))
        _, z, _ = model._finish(model.self_attend(e))
        z.sum().backward()
    finally:
        handle.remove()
    tokens = captured["tokens"]
    grad = tokens.grad
    cam = (grad * tokens.detach()).sum(dim=-1)[:, 1:]  # drop CLS token
    cam = torch.clamp(cam, min=0.0)
    grid = backbone.grid
    cam = cam.reshape(s, 1, grid, grid)
    cam = F.interpolate(cam, size=(h, w), mode="bilinear", align_corners=False).squeeze(1)
    return SaliencyMap.from_raw(cam.detach().numpy())


def captured_forward(backbone, images, captured):
    """Run the backbone token pipeline so the norm hook fires, then
    return the CLS row of the captured tokens."""
    tokens = backbone.forward_tokens(images)
    return captured["tokens"][:, 0] if "tokens" in captured else tokens[:, 0]
