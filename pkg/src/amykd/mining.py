"""Centiloid-aware online hard-negative mining with multi-stage fallback,
and triplet batch assembly.

Stage order: primary (gap >= 5.0, hardest = minimal eligible gap),
relaxed (gap >= 2.5 then >= 1.0, maximum gap), then a seeded uniform draw
over different-subject candidates. Negatives never share the anchor's
subject.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cohort import PairedSession
from .errors import ConfigurationError, DataError

STAGE_PRIMARY = "primary"
STAGE_RELAXED = "relaxed_{:g}"
STAGE_UNIFORM = "uniform"


@dataclass(frozen=True)
class MiningConfig:
    delta_min: float = 5.0
    fallback_thresholds: tuple[float, ...] = (2.5, 1.0)
    selection_rule: str = "hardest"  # or "uniform_eligible"
    seed: int = 0

    def __post_init__(self):
        if self.fallback_thresholds and self.delta_min <= max(self.fallback_thresholds):
            raise ConfigurationError("delta_min must exceed every fallback threshold")
        if list(self.fallback_thresholds) != sorted(self.fallback_thresholds, reverse=True):
            raise ConfigurationError("fallback thresholds must be decreasing")
        if self.selection_rule not in ("hardest", "uniform_eligible"):
            raise ConfigurationError(f"unknown selection rule {self.selection_rule!r}")


@dataclass
class TripletBatch:
    anchor_sessions: list[PairedSession]
    positive_sessions: list[PairedSession]
    negative_sessions: list[PairedSession]
    mining_stages: list[str]

    def __len__(self) -> int:
        return len(self.anchor_sessions)

    def audit_records(self) -> list[dict]:
        out = []
        for a, n, stage in zip(self.anchor_sessions, self.negative_sessions,
                               self.mining_stages):
            out.append({
                "anchor_subject": a.subject_id,
                "negative_subject": n.subject_id,
                "cl_gap": abs(a.centiloid - n.centiloid),
                "stage": stage,
            })
        return out


def _centiloid_of(session) -> float | None:
    cl = getattr(session, "centiloid", None)
    if cl is None:
        return None
    cl = float(cl)
    return cl if np.isfinite(cl) else None


def mine_negative(anchor: PairedSession, candidates: list[PairedSession],
                  cfg: MiningConfig, rng: np.random.Generator | None = None):
    """Select a negative for the anchor; returns (session, stage)."""
    pool = [c for c in candidates if c.subject_id != anchor.subject_id]
    if not pool:
        raise DataError(f"no different-subject candidate for anchor {anchor.subject_id}")
    anchor_cl = _centiloid_of(anchor)
    if anchor_cl is None:
        raise DataError(f"anchor {anchor.subject_id} has no usable centiloid")

    with_cl = [(abs(anchor_cl - _centiloid_of(c)), c) for c in pool
               if _centiloid_of(c) is not None]

    eligible = [(gap, c) for gap, c in with_cl if gap >= cfg.delta_min]
    if eligible:
        if cfg.selection_rule == "hardest":
            eligible.sort(key=lambda t: (t[0], t[1].subject_id, t[1].session_id))
            return eligible[0][1], STAGE_PRIMARY
        rng = rng or np.random.default_rng(cfg.seed)
        ordered = sorted(eligible, key=lambda t: (t[1].subject_id, t[1].session_id))
        return ordered[int(rng.integers(len(ordered)))][1], STAGE_PRIMARY

    for threshold in cfg.fallback_thresholds:
        relaxed = [(gap, c) for gap, c in with_cl if gap >= threshold]
        if relaxed:
            relaxed.sort(key=lambda t: (-t[0], t[1].subject_id, t[1].session_id))
            return relaxed[0][1], STAGE_RELAXED.format(threshold)

    rng = rng or np.random.default_rng(cfg.seed)
    ordered = sorted(pool, key=lambda c: (c.subject_id, c.session_id))
    return ordered[int(rng.integers(len(ordered)))], STAGE_UNIFORM


def assemble_triplets(batch: list[PairedSession], train_pool: list[PairedSession],
                      cfg: MiningConfig) -> TripletBatch:
    """One triplet per batch element: the element anchors and serves as
    its own positive source (intra-session consistency); the negative is
    mined from the training pool with a per-anchor derived seed."""
    anchors, positives, negatives, stages = [], [], [], []
    for i, session in enumerate(batch):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed & 0x7FFFFFFF, i]))
        negative, stage = mine_negative(session, train_pool, cfg, rng)
        anchors.append(session)
        positives.append(session)
        negatives.append(negative)
        stages.append(stage)
    return TripletBatch(anchors, positives, negatives, stages)


def append_audit_log(path: str | Path, batch: TripletBatch) -> None:
    """Append one JSON line per mined triplet."""
    with open(path, "a") as f:
        for record in batch.audit_records():
            f.write(json.dumps(record) + "\n")
