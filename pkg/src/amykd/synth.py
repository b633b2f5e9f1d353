"""Deterministic synthetic paired PET/MRI cohort generator.

Volumes carry a planted, Centiloid-controlled signal: PET uptake in a
cortical shell scales with CL, MRI renders a weaker atrophy correlate as
shell erosion. This makes the full pipeline's discrimination verifiable
without access to real cohorts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from . import tensorio
from .cohort import ScanRecord, label_from_centiloid, write_manifest
from .errors import ConfigurationError, DataError

logger = logging.getLogger(__name__)

# Geometry of the planted signal, in normalized radial units (u = 0 at
# the brain center, u = 1 at the unatrophied cortical surface).
SHELL_BAND = (0.80, 1.0)
PET_UPTAKE_AMPLITUDE = 0.45
MAX_EROSION = 0.12
# Axis-0 range (fraction of the volume) eligible to host the focal
# atrophy slab; matches the sagittal slice-extraction band.
FOCAL_BAND = (0.40, 0.60)


@dataclass(frozen=True)
class PhantomSpec:
    volume_shape: tuple[int, int, int] = (64, 96, 96)
    cl_neg_mean: float = 5.0
    cl_neg_sd: float = 8.0
    cl_pos_mean: float = 60.0
    cl_pos_sd: float = 25.0
    cl_clamp: tuple[float, float] = (-10.0, 150.0)
    positive_fraction: float = 0.3
    mri_signal_strength: float = 0.7
    # Between-subject baseline cortical-thickness variation (radial units);
    # keeps the MRI channel from being a noiseless readout of CL.
    mri_atrophy_jitter: float = 0.01
    # Fraction of the focal band hosting the per-subject atrophy slab;
    # 1.0 renders diffuse (whole-shell) erosion instead.
    focal_fraction: float = 0.3
    noise_sd: float = 0.06
    contrasts: tuple[str, ...] = ("T1w", "T2w")
    seed: int = 0

    def __post_init__(self):
        if any(d <= 0 for d in self.volume_shape):
            raise ConfigurationError("volume_shape must be positive")
        if not (0.0 < self.positive_fraction < 1.0):
            raise ConfigurationError("positive_fraction must lie in (0,1)")
        if self.mri_signal_strength < 0 or self.noise_sd < 0:
            raise ConfigurationError("signal strength and noise_sd must be >= 0")
        if not (0.0 < self.focal_fraction <= 1.0):
            raise ConfigurationError("focal_fraction must lie in (0, 1]")
        for p in (self.cl_neg_mean, self.cl_neg_sd, self.cl_pos_mean, self.cl_pos_sd):
            if not np.isfinite(p):
                raise ConfigurationError("mixture parameters must be finite")


@dataclass
class SyntheticSubject:
    subject_id: str
    centiloid: float
    pet_volume: np.ndarray
    mri_volumes: dict[str, np.ndarray]
    label: int = field(init=False)

    def __post_init__(self):
        self.label = label_from_centiloid(self.centiloid)


# Radial intensity maps per contrast: intensity = a + b * u inside tissue.
_CONTRAST_MAPS = {
    "T1w": (0.75, -0.35),
    "T2w": (0.30, +0.35),
    "FLAIR": (0.60, -0.15),
    "T2star": (0.45, +0.10),
}


def uptake_fraction(cl: float) -> float:
    """Cortical uptake as a fraction of the planted PET amplitude.

    Approximately max(cl, 0)/100, plus a small strictly increasing
    nonspecific term so band-mean uptake is strictly monotone in CL even
    below zero.
    """
    return max(cl, 0.0) / 100.0 + 1e-4 * cl


def _radial_field(shape: tuple[int, int, int]) -> np.ndarray:
    axes = [np.linspace(-1.0, 1.0, n) for n in shape]
    x, y, z = np.meshgrid(*axes, indexing="ij")
    # Ellipsoidal head: slightly longer along y/z than the left-right axis.
    return np.sqrt((x / 0.80) ** 2 + (y / 0.88) ** 2 + (z / 0.88) ** 2)


def draw_centiloid(spec: PhantomSpec, rng: np.random.Generator) -> float:
    positive = rng.random() < spec.positive_fraction
    if positive:
        cl = rng.normal(spec.cl_pos_mean, spec.cl_pos_sd)
    else:
        cl = rng.normal(spec.cl_neg_mean, spec.cl_neg_sd)
    return float(np.clip(cl, *spec.cl_clamp))


def generate_subject(spec: PhantomSpec, subject_seed: int,
                     centiloid: float | None = None) -> SyntheticSubject:
    """Deterministic phantom for one subject; CL drawn from the mixture
    unless given explicitly."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed & 0x7FFFFFFF, subject_seed]))
    cl = draw_centiloid(spec, rng) if centiloid is None else float(centiloid)

    u = _radial_field(spec.volume_shape)
    brain = u <= 1.0
    shell = brain & (u >= SHELL_BAND[0])

    pet = np.zeros(spec.volume_shape, dtype=np.float32)
    pet[brain] = 0.15 + 0.10 * (1.0 - u[brain])
    pet[shell] += PET_UPTAKE_AMPLITUDE * uptake_fraction(cl)
    if spec.noise_sd > 0:
        pet = pet + rng.normal(0.0, spec.noise_sd, spec.volume_shape).astype(np.float32)
    pet = np.clip(pet, 0.0, 1.0).astype(np.float32)

    baseline = abs(rng.normal(0.0, spec.mri_atrophy_jitter))
    signal = MAX_EROSION * spec.mri_signal_strength * max(cl, 0.0) / 100.0
    x = spec.volume_shape[0]
    if spec.focal_fraction < 1.0:
        # Atrophy concentrates in a per-subject slab of sagittal planes
        # inside the focal band; elsewhere only the baseline applies.
        band_lo = int(round(FOCAL_BAND[0] * x))
        band_hi = int(round(FOCAL_BAND[1] * x))
        width = max(1, int(round(spec.focal_fraction * (band_hi - band_lo))))
        start = int(rng.integers(band_lo, band_hi - width + 1))
        plane_signal = np.zeros(x, dtype=np.float64)
        plane_signal[start:start + width] = signal
    else:
        plane_signal = np.full(x, signal, dtype=np.float64)
    erosion = (baseline + plane_signal)[:, None, None]
    tissue = u <= 1.0 - erosion
    mri_volumes = {}
    for contrast in spec.contrasts:
        a, b = _CONTRAST_MAPS[contrast]
        vol = np.zeros(spec.volume_shape, dtype=np.float32)
        vol[tissue] = a + b * u[tissue]
        if spec.noise_sd > 0:
            vol = vol + rng.normal(0.0, spec.noise_sd, spec.volume_shape).astype(np.float32)
        mri_volumes[contrast] = np.clip(vol, 0.0, 1.0).astype(np.float32)

    return SyntheticSubject(f"sub-{subject_seed:04d}", cl, pet, mri_volumes)


def pet_band_mean(volume: np.ndarray) -> float:
    """Mean PET intensity over the fixed cortical band (probe feature)."""
    u = _radial_field(volume.shape)
    band = (u >= SHELL_BAND[0]) & (u <= 1.0)
    return float(volume[band].mean())


def mri_shell_feature(volume: np.ndarray) -> float:
    """Mean MRI intensity over the outer shell; drops as cortex erodes."""
    u = _radial_field(volume.shape)
    band = (u >= 0.86) & (u <= 1.0)
    return float(volume[band].mean())


def generate_cohort(spec: PhantomSpec, n_subjects: int, out_dir: str | Path) -> Path:
    """Write volumes plus a cohort manifest; returns the manifest path."""
    if n_subjects < 2:
        raise ConfigurationError("need at least 2 subjects")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        vols_dir = out_dir / "volumes"
        vols_dir.mkdir(exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out_dir}: {exc}") from exc

    schedule_rng = np.random.default_rng(np.random.SeedSequence([spec.seed & 0x7FFFFFFF, 0xDA7E5]))
    records: list[ScanRecord] = []
    base = date(2020, 1, 1)
    for idx in range(n_subjects):
        subject = generate_subject(spec, spec.seed ^ idx)
        sid = f"sub-{idx:04d}"
        session = "ses-01"
        mri_date = base + timedelta(days=int(schedule_rng.integers(0, 1000)))
        pet_date = mri_date + timedelta(days=int(schedule_rng.integers(0, 301)))
        tracer = "PiB" if schedule_rng.random() < 0.5 else "AV45"

        for contrast, vol in subject.mri_volumes.items():
            path = vols_dir / f"{sid}_{session}_{contrast}.amt"
            tensorio.save_tensor(path, vol, {"modality": contrast,
                                             "subject_id": sid, "session_id": session})
            records.append(ScanRecord(sid, session, contrast, str(path), mri_date))
        pet_path = vols_dir / f"{sid}_{session}_PET.amt"
        tensorio.save_tensor(pet_path, subject.pet_volume,
                             {"modality": "PET", "subject_id": sid, "session_id": session})
        records.append(ScanRecord(sid, session, "PET", str(pet_path), pet_date,
                                  tracer=tracer, centiloid=subject.centiloid))

    manifest = out_dir / "manifest.csv"
    write_manifest(manifest, records)
    logger.info("generated %d subjects under %s", n_subjects, out_dir)
    return manifest
