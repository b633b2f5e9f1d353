"""Volume-to-slice preprocessing: intensity normalization, sagittal
extraction, uniform subsampling, and background filtering.

Axis convention: axis 0 of every volume is the left-right axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np

from .errors import ConfigurationError, DataError

TARGET_SIZE = 224


@dataclass(frozen=True)
class NormalizationConfig:
    clip_lo: float = 0.5
    clip_hi: float = 99.5
    gamma: float = 0.9

    def __post_init__(self):
        if not (0.0 <= self.clip_lo < self.clip_hi <= 100.0):
            raise ConfigurationError("clip percentiles must satisfy 0 <= lo < hi <= 100")
        if self.gamma <= 0:
            raise ConfigurationError("gamma must be positive")


@dataclass(frozen=True)
class ExtractionConfig:
    s_full: int = 40
    s_train: int = 25
    band: tuple[float, float] = (0.40, 0.60)
    background_mean_threshold: float = 0.01

    def __post_init__(self):
        if self.s_train > self.s_full:
            raise ConfigurationError("s_train must not exceed s_full")
        lo, hi = self.band
        if not (0.0 <= lo < hi <= 1.0):
            raise ConfigurationError("band must satisfy 0 <= lo < hi <= 1")


@dataclass
class SliceStack:
    slices: np.ndarray  # (S, 224, 224) float32 in [0, 1]
    source_indices: list[int]
    modality: str = ""
    session_ref: str = ""

    def __post_init__(self):
        if len(self.slices) != len(self.source_indices):
            raise DataError("slices and source_indices length mismatch")

    def __len__(self) -> int:
        return len(self.slices)


def normalize_intensity(volume: np.ndarray, cfg: NormalizationConfig = NormalizationConfig()) -> np.ndarray:
    """Percentile clip, min-max to [0,1], then gamma correction.

    A constant volume maps to all zeros (min = max leaves min-max
    undefined; zeros let background filtering drop it downstream).
    """
    if volume.size == 0:
        raise DataError("empty volume")
    vol = np.asarray(volume, dtype=np.float32)
    lo, hi = np.percentile(vol, [cfg.clip_lo, cfg.clip_hi])
    vol = np.clip(vol, lo, hi)
    vmin, vmax = float(vol.min()), float(vol.max())
    if vmax <= vmin:
        return np.zeros_like(vol)
    vol = (vol - vmin) / (vmax - vmin)
    return np.power(vol, cfg.gamma, dtype=np.float32)


def slice_positions(x: int, cfg: ExtractionConfig) -> np.ndarray:
    """Source voxel indices for s_full slices over the central band.

    Half-open uniform spacing over [lo*x, hi*x), nearest-integer rounding
    with halves rounded down; duplicates permitted when the band is
    narrower than s_full.
    """
    lo, hi = cfg.band
    if cfg.s_full == 1:
        positions = np.array([round((lo + hi) / 2.0 * x)])
    else:
        raw = np.linspace(lo * x, hi * x, cfg.s_full, endpoint=False)
        positions = np.ceil(raw - 0.5).astype(int)
    positions = np.clip(positions, 0, x - 1)
    if positions.size == 0:
        raise ConfigurationError("slice band is empty after rounding")
    return positions.astype(int)


def extract_slices(volume: np.ndarray, cfg: ExtractionConfig = ExtractionConfig(),
                   modality: str = "", session_ref: str = "") -> SliceStack:
    """Extract sagittal slices, resize to 224x224, drop background slices.

    A slice survives iff its mean intensity is >= the background
    threshold (boundary kept).
    """
    x = volume.shape[0]
    positions = slice_positions(x, cfg)
    kept_slices = []
    kept_indices = []
    for idx in positions:
        sl = cv2.resize(np.asarray(volume[idx], dtype=np.float32),
                        (TARGET_SIZE, TARGET_SIZE), interpolation=cv2.INTER_LINEAR)
        if float(sl.mean()) >= cfg.background_mean_threshold:
            kept_slices.append(np.clip(sl, 0.0, 1.0))
            kept_indices.append(int(idx))
    if kept_slices:
        stacked = np.stack(kept_slices)
    else:
        stacked = np.empty((0, TARGET_SIZE, TARGET_SIZE), dtype=np.float32)
    return SliceStack(stacked, kept_indices, modality, session_ref)


def subsample_uniform(stack: SliceStack, s_train: int) -> SliceStack:
    """Pick s_train uniformly spaced slices; shortfall repeats cyclically."""
    n = len(stack)
    if n == 0:
        raise DataError("cannot subsample an empty slice stack")
    if n >= s_train:
        picks = np.round(np.linspace(0, n - 1, s_train)).astype(int)
    else:
        picks = np.arange(s_train) % n
    return SliceStack(stack.slices[picks], [stack.source_indices[i] for i in picks],
                      stack.modality, stack.session_ref)
