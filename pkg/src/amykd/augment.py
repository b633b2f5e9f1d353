"""Seed-synchronized PET-MRI augmentation.

All stochastic parameters are drawn once per call from a generator seeded
with the caller's seed and applied identically to both stacks, preserving
anatomical correspondence between the modalities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DataError
from .slices import SliceStack


@dataclass(frozen=True)
class AugmentationConfig:
    rotation_deg: float = 7.0
    translate_frac: float = 0.05
    scale_range: tuple[float, float] = (0.95, 1.05)
    jitter_frac: float = 0.10
    blur_kernel: int = 3
    blur_p: float = 0.3
    gamma_range: tuple[float, float] = (0.9, 1.1)
    gamma_p: float = 0.5
    noise_sd_range: tuple[float, float] = (0.01, 0.03)
    noise_p: float = 0.5
    erase_p: float = 0.25
    erase_scale: tuple[float, float] = (0.05, 0.12)

    def __post_init__(self):
        for p in (self.blur_p, self.gamma_p, self.noise_p, self.erase_p):
            if not (0.0 <= p <= 1.0):
                raise DataError("augmentation probabilities must lie in [0,1]")
        for rng in (self.scale_range, self.gamma_range, self.noise_sd_range, self.erase_scale):
            if rng[0] > rng[1]:
                raise DataError("augmentation ranges must be ordered")


@dataclass
class AugmentParams:
    angle_deg: float
    translate: tuple[float, float]
    scale: float
    brightness: float
    contrast: float
    blur: bool
    gamma: float | None
    noise_sd: float | None
    noise_seed: int
    erase: tuple[float, float, float, float] | None  # (top, left, h, w) fractions


def draw_params(cfg: AugmentationConfig, seed: int) -> AugmentParams:
    rng = np.random.default_rng(seed)
    angle = float(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg))
    translate = (float(rng.uniform(-cfg.translate_frac, cfg.translate_frac)),
                 float(rng.uniform(-cfg.translate_frac, cfg.translate_frac)))
    scale = float(rng.uniform(*cfg.scale_range))
    brightness = float(rng.uniform(-cfg.jitter_frac, cfg.jitter_frac))
    contrast = float(rng.uniform(-cfg.jitter_frac, cfg.jitter_frac))
    blur = bool(rng.random() < cfg.blur_p)
    gamma = float(rng.uniform(*cfg.gamma_range)) if rng.random() < cfg.gamma_p else None
    noise_sd = float(rng.uniform(*cfg.noise_sd_range)) if rng.random() < cfg.noise_p else None
    noise_seed = int(rng.integers(0, 2**31 - 1))
    erase = None
    if rng.random() < cfg.erase_p:
        area = float(rng.uniform(*cfg.erase_scale))
        aspect = float(rng.uniform(0.5, 2.0))
        h = min(math.sqrt(area * aspect), 1.0)
        w = min(math.sqrt(area / aspect), 1.0)
        top = float(rng.uniform(0.0, 1.0 - h))
        left = float(rng.uniform(0.0, 1.0 - w))
        erase = (top, left, h, w)
    return AugmentParams(angle, translate, scale, brightness, contrast,
                         blur, gamma, noise_sd, noise_seed, erase)


def _apply(params: AugmentParams, slices: np.ndarray) -> np.ndarray:
    x = torch.from_numpy(np.ascontiguousarray(slices, dtype=np.float32)).unsqueeze(1)
    s, _, h, w = x.shape

    if params.angle_deg != 0.0 or params.translate != (0.0, 0.0) or params.scale != 1.0:
        a = math.radians(params.angle_deg)
        cos_a, sin_a = math.cos(a) / params.scale, math.sin(a) / params.scale
        # Inverse affine in normalized coordinates, as used by affine_grid.
        theta = torch.tensor([[cos_a, -sin_a, -2.0 * params.translate[0]],
                              [sin_a, cos_a, -2.0 * params.translate[1]]],
                             dtype=torch.float32)
        grid = F.affine_grid(theta.unsqueeze(0).expand(s, -1, -1), list(x.shape),
                             align_corners=False)
        x = F.grid_sample(x, grid, mode="bilinear", padding_mode="zeros",
                          align_corners=False)

    if params.brightness != 0.0:
        x = x * (1.0 + params.brightness)
    if params.contrast != 0.0:
        mean = x.mean(dim=(2, 3), keepdim=True)
        x = (x - mean) * (1.0 + params.contrast) + mean

    if params.blur:
        k = torch.full((1, 1, 3, 3), 1.0 / 9.0)
        x = F.conv2d(F.pad(x, (1, 1, 1, 1), mode="replicate"), k)

    if params.gamma is not None:
        x = torch.clamp(x, min=0.0).pow(params.gamma)

    if params.noise_sd is not None:
        gen = torch.Generator().manual_seed(params.noise_seed)
        x = x + params.noise_sd * torch.randn(x.shape, generator=gen)

    if params.erase is not None:
        top, left, eh, ew = params.erase
        r0, r1 = int(top * h), int((top + eh) * h)
        c0, c1 = int(left * w), int((left + ew) * w)
        x[:, :, r0:max(r1, r0 + 1), c0:max(c1, c0 + 1)] = 0.0

    return torch.clamp(x, 0.0, 1.0).squeeze(1).numpy()


def augment_pair(mri_stack: SliceStack, pet_stack: SliceStack,
                 cfg: AugmentationConfig, seed: int) -> tuple[SliceStack, SliceStack]:
    """Apply one shared set of transform parameters to both stacks."""
    if len(mri_stack) != len(pet_stack) or mri_stack.source_indices != pet_stack.source_indices:
        raise DataError("augment_pair requires matching stack lengths and source indices")
    params = draw_params(cfg, seed)
    mri_out = SliceStack(_apply(params, mri_stack.slices), list(mri_stack.source_indices),
                         mri_stack.modality, mri_stack.session_ref)
    pet_out = SliceStack(_apply(params, pet_stack.slices), list(pet_stack.source_indices),
                         pet_stack.modality, pet_stack.session_ref)
    return mri_out, pet_out
