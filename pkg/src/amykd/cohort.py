"""Cohort data model: scan records, Centiloid labels, MRI-PET pairing,
leakage-free subject-level splits, and class-balancing weights.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError, InvalidInputError

logger = logging.getLogger(__name__)

CL_POSITIVE_THRESHOLD = 20.6

MRI_MODALITIES = ("T1w", "T2w", "FLAIR", "T2star")
MODALITIES = MRI_MODALITIES + ("PET",)
TRACERS = ("PiB", "AV45")

MANIFEST_HEADER = [
    "subject_id",
    "session_id",
    "modality",
    "volume_path",
    "acquisition_date",
    "tracer",
    "centiloid",
]


@dataclass(frozen=True)
class ScanRecord:
    subject_id: str
    session_id: str
    modality: str
    volume_path: str
    acquisition_date: date
    tracer: str | None = None
    centiloid: float | None = None

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise DataError(f"unknown modality {self.modality!r} "
                            f"(expected one of {MODALITIES})")
        is_pet = self.modality == "PET"
        if is_pet:
            if self.centiloid is None or self.tracer is None:
                raise DataError(f"PET record {self.subject_id}/{self.session_id} "
                                "must carry tracer and centiloid")
            if self.tracer not in TRACERS:
                raise DataError(f"unknown tracer {self.tracer!r}")
        else:
            if self.centiloid is not None or self.tracer is not None:
                raise DataError(f"non-PET record {self.subject_id}/{self.session_id} "
                                "must not carry tracer/centiloid")


def label_from_centiloid(cl: float) -> int:
    """Binary amyloid status: 1 iff cl strictly exceeds 20.6."""
    if not math.isfinite(cl):
        raise InvalidInputError(f"centiloid must be finite, got {cl!r}")
    return 1 if cl > CL_POSITIVE_THRESHOLD else 0


@dataclass(frozen=True)
class PairedSession:
    subject_id: str
    session_id: str
    mri_records: tuple[ScanRecord, ...]
    pet_record: ScanRecord
    gap_days: int

    @property
    def centiloid(self) -> float:
        return float(self.pet_record.centiloid)

    @property
    def label(self) -> int:
        return label_from_centiloid(self.centiloid)

    def mri_record(self, contrast: str) -> ScanRecord:
        for rec in self.mri_records:
            if rec.modality == contrast:
                return rec
        raise DataError(f"session {self.subject_id}/{self.session_id} "
                        f"has no {contrast} record")


def pair_sessions(mri: list[ScanRecord], pet: list[ScanRecord],
                  contrasts: set[str], max_gap_days: int = 365) -> list[PairedSession]:
    """Pair each complete MRI session with its temporally closest PET scan.

    Sessions missing any requested contrast are excluded; so are sessions
    with no PET within max_gap_days. Ties on |gap| go to the earlier PET.
    """
    contrasts = set(contrasts)
    if not contrasts:
        raise ConfigurationError("contrast selection is empty")
    for c in contrasts:
        if c not in MRI_MODALITIES:
            raise ConfigurationError(f"unknown MRI contrast {c!r}")

    by_session: dict[tuple[str, str], dict[str, ScanRecord]] = {}
    for rec in mri:
        key = (rec.subject_id, rec.session_id)
        by_session.setdefault(key, {})[rec.modality] = rec
    pet_by_subject: dict[str, list[ScanRecord]] = {}
    for rec in pet:
        if rec.modality != "PET":
            raise DataError(f"non-PET record in PET list: {rec.modality}")
        pet_by_subject.setdefault(rec.subject_id, []).append(rec)

    pairs = []
    n_excluded = 0
    for (subject_id, session_id) in sorted(by_session):
        recs = by_session[(subject_id, session_id)]
        if not contrasts.issubset(recs):
            n_excluded += 1
            continue
        mri_date = recs[sorted(contrasts)[0]].acquisition_date
        candidates = []
        for p in pet_by_subject.get(subject_id, []):
            gap = (p.acquisition_date - mri_date).days
            if abs(gap) <= max_gap_days:
                candidates.append((abs(gap), p.acquisition_date, gap, p))
        if not candidates:
            n_excluded += 1
            continue
        candidates.sort(key=lambda t: (t[0], t[1]))
        _, _, gap, best = candidates[0]
        pairs.append(PairedSession(
            subject_id=subject_id,
            session_id=session_id,
            mri_records=tuple(recs[c] for c in sorted(contrasts)),
            pet_record=best,
            gap_days=gap,
        ))
    if n_excluded:
        logger.info("pair_sessions: excluded %d MRI sessions (missing contrast or PET gap)",
                    n_excluded)
    return pairs


@dataclass
class SplitAssignment:
    fold_of_subject: dict[str, int]
    role_of_fold: dict[int, str]
    seed: int
    k: int
    per_fold_label_counts: list[dict[str, int]] = field(default_factory=list)

    def role_of_subject(self, subject_id: str) -> str:
        return self.role_of_fold[self.fold_of_subject[subject_id]]

    def subjects_with_role(self, role: str) -> list[str]:
        return sorted(s for s, f in self.fold_of_subject.items()
                      if self.role_of_fold[f] == role)

    def to_json(self) -> dict:
        return {
            "subjects": {s: {"fold": f, "role": self.role_of_fold[f]}
                         for s, f in sorted(self.fold_of_subject.items())},
            "meta": {
                "K": self.k,
                "seed": self.seed,
                "per_fold_label_counts": self.per_fold_label_counts,
            },
        }

    def save(self, path: str | Path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2)

    @classmethod
    def load(cls, path: str | Path) -> "SplitAssignment":
        with open(path) as f:
            payload = json.load(f)
        fold_of_subject = {s: v["fold"] for s, v in payload["subjects"].items()}
        role_of_fold = {v["fold"]: v["role"] for v in payload["subjects"].values()}
        meta = payload["meta"]
        return cls(fold_of_subject, role_of_fold, meta["seed"], meta["K"],
                   meta.get("per_fold_label_counts", []))


def default_role_of_fold(k: int) -> dict[int, str]:
    # Fixed mapping: first k-2 folds train, then one val, one test.
    roles = {i: "train" for i in range(k - 2)}
    roles[k - 2] = "val"
    roles[k - 1] = "test"
    return roles


def make_splits(sessions: list[PairedSession], k: int = 5, seed: int = 42) -> SplitAssignment:
    """Greedy subject-grouped, label-stratified fold assignment.

    Subjects are sorted by positive-session count (ties shuffled by the
    seeded RNG) and assigned to the fold that minimizes per-label count
    imbalance across folds, preferring smaller folds on ties.
    """
    subjects: dict[str, list[int]] = {}
    for s in sessions:
        subjects.setdefault(s.subject_id, []).append(s.label)
    if len(subjects) < k:
        raise ConfigurationError(f"need at least K={k} subjects, have {len(subjects)}")

    rng = np.random.default_rng(seed)
    order = sorted(subjects)
    rng.shuffle(order)
    order.sort(key=lambda sid: -sum(subjects[sid]))

    fold_pos = np.zeros(k)
    fold_neg = np.zeros(k)
    fold_subjects = np.zeros(k)
    fold_of_subject: dict[str, int] = {}
    for sid in order:
        pos = sum(subjects[sid])
        neg = len(subjects[sid]) - pos
        best = None
        for f in range(k):
            fold_pos[f] += pos
            fold_neg[f] += neg
            score = (fold_pos.std(), fold_neg.std(), fold_subjects[f], f)
            fold_pos[f] -= pos
            fold_neg[f] -= neg
            if best is None or score < best[0]:
                best = (score, f)
        f = best[1]
        fold_of_subject[sid] = f
        fold_pos[f] += pos
        fold_neg[f] += neg
        fold_subjects[f] += 1

    counts = [{"pos": int(fold_pos[f]), "neg": int(fold_neg[f])} for f in range(k)]
    split = SplitAssignment(fold_of_subject, default_role_of_fold(k), seed, k, counts)
    _check_tracer_drift(sessions, split)
    return split


def _check_tracer_drift(sessions: list[PairedSession], split: SplitAssignment) -> None:
    """Warn (never gate) when per-fold tracer proportions drift from the cohort."""
    total = {t: 0 for t in TRACERS}
    per_fold: dict[int, dict[str, int]] = {}
    for s in sessions:
        t = s.pet_record.tracer
        total[t] += 1
        per_fold.setdefault(split.fold_of_subject[s.subject_id], {t2: 0 for t2 in TRACERS})[t] += 1
    n = sum(total.values())
    if n == 0:
        return
    for f, counts in sorted(per_fold.items()):
        nf = sum(counts.values())
        for t in TRACERS:
            if nf and abs(counts[t] / nf - total[t] / n) > 0.25:
                logger.warning("tracer drift: fold %d %s proportion %.2f vs cohort %.2f",
                               f, t, counts[t] / nf, total[t] / n)


def inverse_frequency_weights(labels: list[int]) -> np.ndarray:
    """Per-sample weight 1/n_c where n_c counts training samples of class c."""
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("inverse-frequency weights need both classes present")
    return np.where(labels == 1, 1.0 / n_pos, 1.0 / n_neg)


def read_manifest(path: str | Path) -> list[ScanRecord]:
    """Load a cohort manifest CSV. Unknown modality strings are errors."""
    records = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != MANIFEST_HEADER:
            raise DataError(f"{path}: bad manifest header {reader.fieldnames}")
        for row in reader:
            records.append(ScanRecord(
                subject_id=row["subject_id"],
                session_id=row["session_id"],
                modality=row["modality"],
                volume_path=row["volume_path"],
                acquisition_date=date.fromisoformat(row["acquisition_date"]),
                tracer=row["tracer"] or None,
                centiloid=float(row["centiloid"]) if row["centiloid"] else None,
            ))
    return records


def write_manifest(path: str | Path, records: list[ScanRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(MANIFEST_HEADER)
        for r in records:
            writer.writerow([
                r.subject_id, r.session_id, r.modality, r.volume_path,
                r.acquisition_date.isoformat(),
                r.tracer or "",
                "" if r.centiloid is None else repr(float(r.centiloid)),
            ])


def split_records(records: list[ScanRecord]) -> tuple[list[ScanRecord], list[ScanRecord]]:
    mri = [r for r in records if r.modality != "PET"]
    pet = [r for r in records if r.modality == "PET"]
    return mri, pet
