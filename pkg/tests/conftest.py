"""Shared fixtures and builders for the test suite."""

from __future__ import annotations

from datetime import date, timedelta

import numpy as np
import pytest
import torch

from amykd.cohort import PairedSession, ScanRecord
from amykd.nets import AmyloidNet, BackboneSpec, LoRAConfig


def make_session(subject: str, centiloid: float, session: str = "ses-01",
                 tracer: str = "PiB", day: int = 0) -> PairedSession:
    """In-memory paired session without backing volume files."""
    d = date(2020, 1, 1) + timedelta(days=day)
    mri = ScanRecord(subject, session, "T1w", f"/nonexistent/{subject}_{session}_T1w.amt", d)
    pet = ScanRecord(subject, session, "PET", f"/nonexistent/{subject}_{session}_pet.amt",
                     d, tracer=tracer, centiloid=centiloid)
    return PairedSession(subject_id=subject, session_id=session,
                         mri_records=(mri,), pet_record=pet, gap_days=0)


def tiny_backbone_spec() -> BackboneSpec:
    # Small enough for CPU unit tests, still a real ViT with LoRA targets.
    return BackboneSpec(kind="tiny_vit", patch_size=56, width=32, depth=2, heads=2)


@pytest.fixture
def tiny_net() -> AmyloidNet:
    torch.manual_seed(0)
    return AmyloidNet(tiny_backbone_spec(), LoRAConfig(rank=4, alpha=4)).eval()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)
