"""Three-phase training orchestration: teacher pre-training (BCE),
contrastive teacher refinement with CL-aware mining, and student
distillation, plus cross-dataset distillation and ablation switches.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import augment as augmod
from . import losses, mining, schedules, tensorio
from .cohort import (PairedSession, SplitAssignment, inverse_frequency_weights,
                     make_splits, pair_sessions, read_manifest, split_records)
from .config import RunConfig
from .errors import ConfigurationError, DataError, DivergenceError
from .evalkit import (build_report, confusion_metrics, emit_report,
                      optimize_threshold, roc_auc)
from .nets import AmyloidNet, l2_normalize, make_student
from .slices import ExtractionConfig, NormalizationConfig, extract_slices, \
    normalize_intensity, subsample_uniform

logger = logging.getLogger(__name__)

HISTORY_HEADER = ["epoch", "train_loss", "val_loss", "val_f1", "val_auc", "val_sim",
                  "lr_groups", "margin", "temperature",
                  "lambda_cls", "lambda_feat", "lambda_logit"]

ABLATIONS = ("no_pretrain", "no_triplet", "no_feat", "no_logit")


@dataclass
class SessionData:
    session: PairedSession
    mri: torch.Tensor  # (S, 224, 224) float16
    pet: torch.Tensor  # (S, 224, 224) float16

    @property
    def label(self) -> int:
        return self.session.label


@dataclass
class CohortData:
    sessions: list[SessionData]
    split: SplitAssignment

    def of_role(self, role: str) -> list[SessionData]:
        return [s for s in self.sessions
                if self.split.role_of_subject(s.session.subject_id) == role]


@dataclass
class CheckpointMeta:
    phase: str
    epoch: int
    selection: str
    metric: float
    config_hash: str
    seed: int
    path: str = ""

    def to_dict(self) -> dict:
        return {"phase": self.phase, "epoch": self.epoch, "selection": self.selection,
                "metric": self.metric, "config_hash": self.config_hash,
                "seed": self.seed}


def save_checkpoint(path: Path, model: AmyloidNet, meta: CheckpointMeta) -> CheckpointMeta:
    torch.save({"state_dict": model.state_dict(), "meta": meta.to_dict()}, path)
    meta.path = str(path)
    return meta


def load_checkpoint(path: str | Path, cfg: RunConfig) -> tuple[AmyloidNet, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    model = AmyloidNet(cfg.backbone_spec(), cfg.lora_config())
    model.load_state_dict(payload["state_dict"])
    return model, payload["meta"]


def load_cohort(cfg: RunConfig, manifest: str | Path | None = None,
                split: SplitAssignment | None = None) -> CohortData:
    """Read the manifest, pair sessions, split, and preprocess volumes
    into cached slice stacks."""
    records = read_manifest(manifest or cfg.cohort)
    mri, pet = split_records(records)
    sessions = pair_sessions(mri, pet, {cfg.contrast}, cfg.max_gap_days)
    if not sessions:
        raise DataError("no paired sessions in cohort")
    if split is None:
        split = make_splits(sessions, cfg.k_folds, cfg.split_seed)

    norm = NormalizationConfig()
    extract = ExtractionConfig(s_full=cfg.s_full, s_train=cfg.s_train)
    data = []
    for s in sessions:
        stacks = {}
        for rec in (s.mri_record(cfg.contrast), s.pet_record):
            volume = normalize_intensity(tensorio.load_tensor(rec.volume_path), norm)
            stack = extract_slices(volume, extract, rec.modality,
                                   f"{s.subject_id}/{s.session_id}")
            stack = subsample_uniform(stack, cfg.s_train)
            stacks[rec.modality] = torch.from_numpy(stack.slices).to(torch.float16)
        data.append(SessionData(s, stacks[cfg.contrast], stacks["PET"]))
    return CohortData(data, split)


def _stack_batch(items: list[SessionData], which: str) -> torch.Tensor:
    return torch.stack([getattr(s, which) for s in items]).float()


def _augmented_batch(items: list[SessionData], cfg: RunConfig,
                     epoch: int, phase: int) -> tuple[torch.Tensor, torch.Tensor]:
    mri = _stack_batch(items, "mri")
    pet = _stack_batch(items, "pet")
    if not cfg.augment:
        return mri, pet
    aug_cfg = augmod.AugmentationConfig()
    for i, item in enumerate(items):
        seed = abs(hash((cfg.seed, phase, epoch, item.session.subject_id,
                         item.session.session_id))) % (2 ** 31)
        params = augmod.draw_params(aug_cfg, seed)
        mri[i] = torch.from_numpy(augmod._apply(params, mri[i].numpy()))
        pet[i] = torch.from_numpy(augmod._apply(params, pet[i].numpy()))
    return mri, pet


def _weighted_epoch_order(train: list[SessionData], seed: int) -> list[SessionData]:
    """Balanced sampling with replacement via inverse-frequency weights."""
    weights = inverse_frequency_weights([s.label for s in train])
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(train), size=len(train), replace=True, p=weights / weights.sum())
    return [train[i] for i in idx]


def _batches(items: list, size: int):
    for i in range(0, len(items), size):
        yield items[i:i + size]


def _check_finite(loss: torch.Tensor, run_dir: Path, context: dict) -> None:
    if not torch.isfinite(loss):
        dump = run_dir / "divergence_state.json"
        with open(dump, "w") as f:
            json.dump({"loss": float(loss.detach()), **context}, f, indent=2, default=str)
        raise DivergenceError(f"non-finite loss ({context}); state dumped to {dump}")


class HistoryWriter:
    def __init__(self, path: Path):
        self.path = path
        self.rows: list[dict] = []
        with open(path, "w", newline="") as f:
            csv.writer(f).writerow(HISTORY_HEADER)

    def append(self, **kwargs) -> None:
        row = {k: "" for k in HISTORY_HEADER}
        row.update({k: v for k, v in kwargs.items() if v is not None})
        self.rows.append(row)
        with open(self.path, "a", newline="") as f:
            csv.writer(f).writerow([row[k] for k in HISTORY_HEADER])


@torch.no_grad()
def predict_teacher(model: AmyloidNet, items: list[SessionData],
                    batch_size: int = 8) -> np.ndarray:
    model.eval()
    probs = []
    for chunk in _batches(items, batch_size):
        _, z, _ = model.forward_teacher(_stack_batch(chunk, "pet"),
                                        _stack_batch(chunk, "mri"))
        probs.append(torch.sigmoid(z))
    return torch.cat(probs).numpy()


@torch.no_grad()
def predict_student(model: AmyloidNet, items: list[SessionData],
                    batch_size: int = 8) -> np.ndarray:
    model.eval()
    probs = []
    for chunk in _batches(items, batch_size):
        _, z, _ = model.forward_student(_stack_batch(chunk, "mri"))
        probs.append(torch.sigmoid(z))
    return torch.cat(probs).numpy()


def _f1_auc(labels: np.ndarray, probs: np.ndarray) -> tuple[float, float]:
    # F1 at the threshold optimized on this same validation set; the raw
    # 0.5 cut degenerates to a constant (ties every epoch) whenever the
    # sigmoid outputs sit on one side of it.
    theta = optimize_threshold(labels, probs)
    f1 = confusion_metrics(labels, probs, theta).f1
    auc = roc_auc(labels, probs) if 0 < labels.sum() < len(labels) else 0.5
    return f1, auc


def select_checkpoint(history: list[dict], criterion: str) -> dict:
    """Earliest argmax of the criterion column."""
    if not history:
        raise DataError("empty history")
    best = history[0]
    for row in history[1:]:
        if row[criterion] > best[criterion]:
            best = row
    return best


def run_phase1(data: CohortData, cfg: RunConfig, run_dir: Path,
               model: AmyloidNet | None = None) -> CheckpointMeta:
    """Teacher pre-training with BCE, balanced sampling, warm-up, and
    clip-norm scheduling; checkpoint = best validation F1."""
    run_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.seed)
    p1 = cfg.phase1
    if model is None:
        model = AmyloidNet(cfg.backbone_spec(), cfg.lora_config())
    train, val = data.of_role("train"), data.of_role("val")
    optimizer = torch.optim.AdamW(model.parameters(), lr=p1.lr, weight_decay=p1.weight_decay)
    history = HistoryWriter(run_dir / "history_phase1.csv")
    best: tuple[float, int] | None = None
    meta = None

    for epoch in range(1, p1.epochs + 1):
        torch.manual_seed(cfg.seed * 1000 + epoch)
        warm = min(epoch / max(p1.warmup_epochs, 1), 1.0)
        for group in optimizer.param_groups:
            group["lr"] = p1.lr * warm
        model.train()
        order = _weighted_epoch_order(train, cfg.seed * 100 + epoch)
        epoch_loss = 0.0
        for step, chunk in enumerate(_batches(order, p1.batch_size)):
            mri, pet = _augmented_batch(chunk, cfg, epoch, phase=1)
            y = torch.tensor([s.label for s in chunk], dtype=torch.float32)
            _, z, _ = model.forward_teacher(pet, mri)
            loss = losses.bce_loss(z, y)
            _check_finite(loss, run_dir, {"phase": 1, "epoch": epoch, "step": step})
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(),
                                           schedules.clip_norm_for_epoch(epoch))
            optimizer.step()
            epoch_loss += float(loss.detach())
        epoch_loss /= max(1, -(-len(order) // p1.batch_size))

        val_probs = predict_teacher(model, val)
        val_labels = np.array([s.label for s in val])
        val_loss = float(losses.bce_loss(
            torch.logit(torch.tensor(val_probs, dtype=torch.float32), eps=1e-6),
            torch.tensor(val_labels, dtype=torch.float32)))
        val_f1, val_auc = _f1_auc(val_labels, val_probs)
        history.append(epoch=epoch, train_loss=epoch_loss, val_loss=val_loss,
                       val_f1=val_f1, val_auc=val_auc,
                       lr_groups=f"{optimizer.param_groups[0]['lr']:.2e}")
        if best is None or val_f1 > best[0]:
            best = (val_f1, epoch)
            meta = save_checkpoint(run_dir / "phase1_best_f1.pt", model,
                                   CheckpointMeta("phase1", epoch, "best_f1", val_f1,
                                                  cfg.config_hash(), cfg.seed))
        if epoch - best[1] >= p1.patience:
            break
    return meta


def _phase2_embeddings(model: AmyloidNet, batch: mining.TripletBatch,
                       tensors: dict[tuple[str, str], SessionData], cfg: RunConfig,
                       epoch: int):
    """Anchor via cross-attention (PET+, MRI); positive/negative via
    self-attention on PET+ / PET-."""
    def tensor_of(session: PairedSession) -> SessionData:
        return tensors[(session.subject_id, session.session_id)]

    items = [tensor_of(s) for s in batch.anchor_sessions]
    mri, pet = _augmented_batch(items, cfg, epoch, phase=2)
    e_pet = model.project(model.encode_slices(pet))
    e_mri = model.project(model.encode_slices(mri))
    anchor, _ = model.pool(model.cross_attend(e_pet, e_mri))
    z = model.classifier(anchor)
    positive, _ = model.pool(model.self_attend(e_pet))
    neg_items = [tensor_of(s) for s in batch.negative_sessions]
    neg_pet = _stack_batch(neg_items, "pet")
    negative = model.embed_self(neg_pet)
    return anchor, positive, negative, z


def run_phase2(data: CohortData, teacher_ckpt: CheckpointMeta, cfg: RunConfig,
               run_dir: Path, model: AmyloidNet | None = None) -> CheckpointMeta:
    """Contrastive teacher refinement over mined triplets; checkpoint =
    best combined score (triplet separation + 0.5 * F1)."""
    run_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.seed + 2)
    p2 = cfg.phase2
    if model is None:
        model, _ = load_checkpoint(teacher_ckpt.path, cfg)
    train, val = data.of_role("train"), data.of_role("val")
    tensors = {(s.session.subject_id, s.session.session_id): s
               for s in data.sessions}

    groups = model.param_groups()
    encoder_params = groups["adapters"] + groups["backbone"] + groups["projection"] \
        + groups["attention"]
    optimizer = torch.optim.AdamW([
        {"params": encoder_params, "lr": p2.lr_encoder, "weight_decay": p2.wd_encoder},
        {"params": groups["classifier"], "lr": p2.lr_classifier,
         "weight_decay": p2.wd_classifier},
    ])
    scheduler = torch.optim.lr_scheduler.CosineAnnealingWarmRestarts(
        optimizer, T_0=p2.t0, T_mult=p2.t_mult, eta_min=p2.eta_min)
    history = HistoryWriter(run_dir / "history_phase2.csv")
    audit_path = run_dir / "mining_audit.jsonl"
    best: tuple[float, int] | None = None
    meta = None
    train_sessions = [s.session for s in train]

    for epoch in range(1, p2.epochs + 1):
        torch.manual_seed(cfg.seed * 2000 + epoch)
        model.train()
        order = _weighted_epoch_order(train, cfg.seed * 200 + epoch)
        epoch_loss = 0.0
        for step, chunk in enumerate(_batches(order, p2.batch_size)):
            mine_cfg = cfg.mining_config(seed=cfg.seed * 4000 + epoch * 100 + step)
            batch = mining.assemble_triplets([s.session for s in chunk],
                                             train_sessions, mine_cfg)
            mining.append_audit_log(audit_path, batch)
            anchor, positive, negative, z = _phase2_embeddings(model, batch, tensors,
                                                               cfg, epoch)
            y = torch.tensor([s.label for s in chunk], dtype=torch.float32)
            loss = losses.phase2_total(z, y, anchor, positive, negative, epoch,
                                       margin=p2.triplet_margin)
            _check_finite(loss, run_dir, {"phase": 2, "epoch": epoch, "step": step})
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(),
                                           schedules.clip_norm_for_epoch(epoch))
            optimizer.step()
            epoch_loss += float(loss.detach())
        scheduler.step()
        epoch_loss /= max(1, -(-len(order) // p2.batch_size))

        separation = _validation_separation(model, val, data, cfg, epoch)
        val_probs = predict_teacher(model, val)
        val_labels = np.array([s.label for s in val])
        val_f1, val_auc = _f1_auc(val_labels, val_probs)
        combined = separation + 0.5 * val_f1
        history.append(epoch=epoch, train_loss=epoch_loss, val_loss=-combined,
                       val_f1=val_f1, val_auc=val_auc, val_sim=separation,
                       lr_groups="|".join(f"{g['lr']:.2e}" for g in optimizer.param_groups))
        if best is None or combined > best[0]:
            best = (combined, epoch)
            meta = save_checkpoint(run_dir / "phase2_best_combined.pt", model,
                                   CheckpointMeta("phase2", epoch, "best_combined",
                                                  combined, cfg.config_hash(), cfg.seed))
        if epoch - best[1] >= p2.patience:
            break
    return meta


@torch.no_grad()
def _validation_separation(model: AmyloidNet, val: list[SessionData],
                           data: CohortData, cfg: RunConfig, epoch: int) -> float:
    """mean ||a - n|| - mean ||a - p|| over validation triplets."""
    if len(val) < 2:
        return 0.0
    model.eval()
    tensors = {(s.session.subject_id, s.session.session_id): s for s in data.sessions}
    mine_cfg = cfg.mining_config(seed=cfg.seed * 5000 + epoch)
    try:
        batch = mining.assemble_triplets([s.session for s in val],
                                         [s.session for s in val], mine_cfg)
    except DataError:
        return 0.0
    no_aug = cfg.augment
    try:
        cfg.augment = False
        anchor, positive, negative, _ = _phase2_embeddings(model, batch, tensors, cfg, epoch)
    finally:
        cfg.augment = no_aug
    d_neg = (anchor - negative).norm(dim=-1).mean()
    d_pos = (anchor - positive).norm(dim=-1).mean()
    return float(d_neg - d_pos)


@torch.no_grad()
def _teacher_outputs(teacher: AmyloidNet, items: list[SessionData],
                     batch_size: int = 8) -> tuple[torch.Tensor, torch.Tensor]:
    teacher.eval()
    es, zs = [], []
    for chunk in _batches(items, batch_size):
        e, z, _ = teacher.forward_teacher(_stack_batch(chunk, "pet"),
                                          _stack_batch(chunk, "mri"))
        es.append(e)
        zs.append(z)
    return torch.cat(es), torch.cat(zs)


def run_phase3(data: CohortData, teacher_ckpt: CheckpointMeta, cfg: RunConfig,
               run_dir: Path, ablations: tuple[str, ...] = ()) -> tuple[CheckpointMeta, CheckpointMeta]:
    """Student distillation from the frozen teacher. Saves best-val-F1
    and best teacher-student-similarity checkpoints separately."""
    run_dir.mkdir(parents=True, exist_ok=True)
    for a in ablations:
        if a not in ABLATIONS:
            raise ConfigurationError(f"unknown ablation {a!r}")
    torch.manual_seed(cfg.seed + 3)
    p3 = cfg.phase3
    teacher, _ = load_checkpoint(teacher_ckpt.path, cfg)
    teacher.eval()
    for p in teacher.parameters():
        p.requires_grad_(False)
    student = make_student(teacher)

    train, val = data.of_role("train"), data.of_role("val")
    groups = student.param_groups()
    optimizer = torch.optim.AdamW([
        {"params": groups["adapters"], "lr": p3.lr_adapters, "weight_decay": 0.0},
        {"params": groups["projection"], "lr": p3.lr_projection,
         "weight_decay": p3.wd_projection},
        {"params": groups["attention"], "lr": p3.lr_attention,
         "weight_decay": p3.wd_attention},
        {"params": groups["classifier"], "lr": p3.lr_classifier,
         "weight_decay": p3.wd_classifier},
    ])
    scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer, mode="max", factor=p3.plateau_factor, patience=p3.plateau_patience,
        threshold=p3.plateau_threshold, min_lr=p3.plateau_min_lr,
        cooldown=p3.plateau_cooldown)
    history = HistoryWriter(run_dir / "history_phase3.csv")
    accum_steps = p3.effective_batch // p3.batch_size

    # With augmentation off the frozen teacher sees identical inputs every
    # epoch, so its outputs are computed once.
    cache = None
    if not cfg.augment:
        with torch.no_grad():
            e_t, z_t = _teacher_outputs(teacher, train)
        cache = {(s.session.subject_id, s.session.session_id): (e_t[i], z_t[i])
                 for i, s in enumerate(train)}

    val_labels = np.array([s.label for s in val])
    with torch.no_grad():
        val_e_t, _ = _teacher_outputs(teacher, val)

    best_f1: tuple[float, int] | None = None
    best_sim: tuple[float, int] | None = None
    meta_f1 = meta_sim = None

    for epoch in range(1, p3.epochs + 1):
        torch.manual_seed(cfg.seed * 3000 + epoch)
        margin = schedules.schedule_margin(epoch)
        weights = schedules.schedule_weights(epoch)
        if "no_feat" in ablations:
            weights = losses.DistillWeights(weights.lambda_cls, 0.0, weights.lambda_logit,
                                            weights.temperature)
        if "no_logit" in ablations:
            weights = losses.DistillWeights(weights.lambda_cls, weights.lambda_feat, 0.0,
                                            weights.temperature)
        lambda_gap = schedules.lambda_gap_for_epoch(epoch)

        student.train()
        rng = np.random.default_rng(cfg.seed * 300 + epoch)
        order = [train[i] for i in rng.permutation(len(train))]
        epoch_loss, n_steps = 0.0, 0
        optimizer.zero_grad()
        for step, chunk in enumerate(_batches(order, p3.batch_size)):
            mri, pet = _augmented_batch(chunk, cfg, epoch, phase=3)
            y = torch.tensor([s.label for s in chunk], dtype=torch.float32)
            if cache is not None:
                key = [(s.session.subject_id, s.session.session_id) for s in chunk]
                e_t = torch.stack([cache[k][0] for k in key])
                z_t = torch.stack([cache[k][1] for k in key])
            else:
                with torch.no_grad():
                    e_t, z_t, _ = teacher.forward_teacher(pet, mri)
            e_s, z_s, _ = student.forward_student(mri)
            loss = losses.distill_total(z_s, y, e_s, e_t, z_t, weights, margin, lambda_gap)
            _check_finite(loss, run_dir, {"phase": 3, "epoch": epoch, "step": step})
            (loss / accum_steps).backward()
            epoch_loss += float(loss.detach())
            n_steps += 1
            if (step + 1) % accum_steps == 0 or step + 1 == -(-len(order) // p3.batch_size):
                torch.nn.utils.clip_grad_norm_(
                    [p for g in optimizer.param_groups for p in g["params"]],
                    schedules.clip_norm_for_epoch(epoch))
                optimizer.step()
                optimizer.zero_grad()
        epoch_loss /= max(n_steps, 1)

        val_probs = predict_student(student, val)
        val_f1, val_auc = _f1_auc(val_labels, val_probs)
        with torch.no_grad():
            val_e_s = torch.cat([student.forward_student(_stack_batch(c, "mri"))[0]
                                 for c in _batches(val, 8)])
        val_sim = float((l2_normalize(val_e_s) * l2_normalize(val_e_t)).sum(-1).mean())
        scheduler.step(val_f1)
        history.append(epoch=epoch, train_loss=epoch_loss, val_f1=val_f1,
                       val_auc=val_auc, val_sim=val_sim,
                       lr_groups="|".join(f"{g['lr']:.2e}" for g in optimizer.param_groups),
                       margin=margin, temperature=weights.temperature,
                       lambda_cls=weights.lambda_cls, lambda_feat=weights.lambda_feat,
                       lambda_logit=weights.lambda_logit)

        if best_f1 is None or val_f1 > best_f1[0]:
            best_f1 = (val_f1, epoch)
            meta_f1 = save_checkpoint(run_dir / "phase3_best_f1.pt", student,
                                      CheckpointMeta("phase3", epoch, "best_f1", val_f1,
                                                     cfg.config_hash(), cfg.seed))
        if best_sim is None or val_sim > best_sim[0]:
            best_sim = (val_sim, epoch)
            meta_sim = save_checkpoint(run_dir / "phase3_best_sim.pt", student,
                                       CheckpointMeta("phase3", epoch, "best_sim", val_sim,
                                                      cfg.config_hash(), cfg.seed))
        if epoch - best_f1[1] >= p3.patience:
            break
    return meta_f1, meta_sim


def evaluate_student(ckpt: CheckpointMeta | str, data: CohortData, cfg: RunConfig,
                     out_dir: Path, tag_prefix: str = "") -> dict:
    """Metric reports on val and test for a student checkpoint; theta*
    optimized on validation."""
    path = ckpt.path if isinstance(ckpt, CheckpointMeta) else str(ckpt)
    model, _ = load_checkpoint(path, cfg)
    val, test = data.of_role("val"), data.of_role("test")
    y_val = np.array([s.label for s in val])
    p_val = predict_student(model, val)
    y_test = np.array([s.label for s in test])
    p_test = predict_student(model, test)
    reports = [
        build_report(tag_prefix + "val", y_val, p_val, y_val, p_val,
                     n_boot=cfg.n_boot, seed=cfg.seed),
        build_report(tag_prefix + "test", y_test, p_test, y_val, p_val,
                     n_boot=cfg.n_boot, seed=cfg.seed),
    ]
    emit_report(reports, {tag_prefix + "val": (y_val, p_val),
                          tag_prefix + "test": (y_test, p_test)}, out_dir)
    return {r.split: r for r in reports}


def run_all(cfg: RunConfig, run_dir: str | Path,
            ablations: tuple[str, ...] = ()) -> dict:
    """Full pipeline: split, three phases, and evaluation reports.

    Ablations: no_pretrain skips Phase 1, no_triplet skips Phase 2,
    no_feat / no_logit zero the corresponding distillation weight.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg.snapshot(run_dir)
    data = load_cohort(cfg)
    data.split.save(run_dir / "split.json")

    results: dict = {}
    if "no_pretrain" in ablations:
        torch.manual_seed(cfg.seed)
        fresh = AmyloidNet(cfg.backbone_spec(), cfg.lora_config())
        meta1 = save_checkpoint(run_dir / "phase1_best_f1.pt", fresh,
                                CheckpointMeta("phase1", 0, "skipped", 0.0,
                                               cfg.config_hash(), cfg.seed))
    else:
        meta1 = run_phase1(data, cfg, run_dir)
    results["phase1"] = meta1

    if "no_triplet" in ablations:
        meta2 = meta1
    else:
        meta2 = run_phase2(data, meta1, cfg, run_dir)
    results["phase2"] = meta2

    meta_f1, meta_sim = run_phase3(data, meta2, cfg, run_dir, ablations)
    results["phase3_f1"] = meta_f1
    results["phase3_sim"] = meta_sim

    # Teacher reference metrics on validation, for run summaries.
    teacher, _ = load_checkpoint(meta2.path, cfg)
    val = data.of_role("val")
    y_val = np.array([s.label for s in val])
    p_val = predict_teacher(teacher, val)
    teacher_f1, teacher_auc = _f1_auc(y_val, p_val)

    reports = evaluate_student(meta_f1, data, cfg, run_dir)
    results["reports"] = reports
    summary = {
        "teacher_val_f1": teacher_f1,
        "teacher_val_auc": teacher_auc,
        "student_val_auc": reports["val"].auc,
        "student_test_auc": reports["test"].auc,
        "ablations": list(ablations),
    }
    with open(run_dir / "summary.json", "w") as f:
        json.dump(summary, f, indent=2)
    results["summary"] = summary
    return results


def run_cdkd(teacher_ckpt: str | Path, target_cfg: RunConfig,
             run_dir: str | Path) -> dict:
    """Cross-dataset distillation: a source-cohort teacher distills an
    MRI-only student on the target cohort."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    target_cfg.snapshot(run_dir)
    data = load_cohort(target_cfg)
    data.split.save(run_dir / "split.json")
    payload = torch.load(teacher_ckpt, map_location="cpu", weights_only=True)
    meta = CheckpointMeta(path=str(teacher_ckpt), phase=payload["meta"]["phase"],
                          epoch=payload["meta"]["epoch"],
                          selection=payload["meta"]["selection"],
                          metric=payload["meta"]["metric"],
                          config_hash=payload["meta"]["config_hash"],
                          seed=payload["meta"]["seed"])
    meta_f1, meta_sim = run_phase3(data, meta, target_cfg, run_dir)
    reports = evaluate_student(meta_f1, data, target_cfg, run_dir)
    return {"phase3_f1": meta_f1, "phase3_sim": meta_sim, "reports": reports}
