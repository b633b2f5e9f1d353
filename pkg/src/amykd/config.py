"""Run configuration: dataclasses mirroring the TOML run file, plus the
desk-scale profile used for CPU verification runs.

CLI flags override file values; the fully resolved config is snapshotted
into every run directory.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ConfigurationError
from .mining import MiningConfig
from .nets import BackboneSpec, LoRAConfig


@dataclass
class Phase1Config:
    epochs: int = 30
    batch_size: int = 6
    lr: float = 2e-5
    weight_decay: float = 1e-3
    patience: int = 5
    warmup_epochs: int = 2


@dataclass
class Phase2Config:
    epochs: int = 15
    batch_size: int = 6
    lr_encoder: float = 5e-6
    wd_encoder: float = 1e-2
    lr_classifier: float = 2e-5
    wd_classifier: float = 5e-3
    t0: int = 5
    t_mult: int = 2
    eta_min: float = 1e-7
    patience: int = 3
    triplet_margin: float = 1.0


@dataclass
class Phase3Config:
    epochs: int = 100
    batch_size: int = 10
    effective_batch: int = 30
    lr_adapters: float = 2e-4
    lr_projection: float = 1e-4
    wd_projection: float = 1e-4
    lr_attention: float = 1e-4
    wd_attention: float = 1e-3
    lr_classifier: float = 1e-4
    wd_classifier: float = 1e-3
    plateau_factor: float = 0.7
    plateau_patience: int = 15
    plateau_threshold: float = 0.005
    plateau_min_lr: float = 1e-5
    plateau_cooldown: int = 2
    patience: int = 25

    def __post_init__(self):
        if self.effective_batch % self.batch_size != 0:
            raise ConfigurationError("effective batch must be a multiple of batch size")


@dataclass
class RunConfig:
    cohort: str = ""
    out_dir: str = "runs/run"
    contrast: str = "T1w"
    seed: int = 42
    k_folds: int = 5
    split_seed: int = 42
    max_gap_days: int = 365
    s_full: int = 40
    s_train: int = 25
    augment: bool = True
    backbone_kind: str = "tiny_vit"
    backbone_patch: int = 32
    backbone_width: int = 128
    backbone_depth: int = 2
    backbone_heads: int = 4
    external_weights: str | None = None
    lora_rank: int = 32
    lora_alpha: float = 32.0
    mining_delta_min: float = 5.0
    mining_selection: str = "hardest"
    n_boot: int = 1000
    phase1: Phase1Config = field(default_factory=Phase1Config)
    phase2: Phase2Config = field(default_factory=Phase2Config)
    phase3: Phase3Config = field(default_factory=Phase3Config)

    def backbone_spec(self) -> BackboneSpec:
        return BackboneSpec(kind=self.backbone_kind, patch_size=self.backbone_patch,
                            width=self.backbone_width, depth=self.backbone_depth,
                            heads=self.backbone_heads, external_weights=self.external_weights)

    def lora_config(self) -> LoRAConfig:
        return LoRAConfig(rank=self.lora_rank, alpha=self.lora_alpha)

    def mining_config(self, seed: int | None = None) -> MiningConfig:
        return MiningConfig(delta_min=self.mining_delta_min,
                            selection_rule=self.mining_selection,
                            seed=self.seed if seed is None else seed)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def snapshot(self, run_dir: str | Path) -> Path:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        path = run_dir / "resolved_config.json"
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
        return path


def desk_profile(cfg: RunConfig) -> RunConfig:
    """Desk-scale overrides: short phases, higher learning rates suited
    to a from-scratch tiny backbone, augmentation off. Used by the CPU
    acceptance run; paper-scale values stay the defaults."""
    cfg = dataclasses.replace(cfg)
    cfg.augment = False
    cfg.phase1 = dataclasses.replace(cfg.phase1, epochs=5, batch_size=3, lr=5e-4,
                                     warmup_epochs=1)
    cfg.phase2 = dataclasses.replace(cfg.phase2, epochs=3, lr_encoder=5e-6,
                                     lr_classifier=1e-5)
    cfg.phase3 = dataclasses.replace(cfg.phase3, epochs=15, batch_size=3,
                                     effective_batch=6, lr_adapters=2e-3,
                                     lr_projection=4e-3, lr_attention=4e-3,
                                     lr_classifier=1e-3)
    return cfg


_PHASE_TYPES = {"phase1": Phase1Config, "phase2": Phase2Config, "phase3": Phase3Config}


def _apply_section(obj, values: dict, section: str):
    valid = {f.name for f in dataclasses.fields(obj)}
    for key, value in values.items():
        if key not in valid:
            raise ConfigurationError(f"unknown config key {section}{key!r}")
        setattr(obj, key, value)
    return obj


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from an optional TOML file plus overrides.

    Overrides use dotted keys for phase sections (``phase1.epochs``).
    A top-level ``profile = "desk"`` (or override) applies the desk
    profile before any explicit keys.
    """
    data: dict = {}
    if path is not None:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    overrides = dict(overrides or {})

    profile = overrides.pop("profile", data.pop("profile", None))
    cfg = RunConfig()
    if profile == "desk":
        cfg = desk_profile(cfg)
    elif profile is not None:
        raise ConfigurationError(f"unknown profile {profile!r}")

    for section, cls in _PHASE_TYPES.items():
        if section in data:
            _apply_section(getattr(cfg, section), data.pop(section), f"{section}.")
    _apply_section(cfg, data, "")

    for key, value in overrides.items():
        if value is None:
            continue
        if "." in key:
            section, sub = key.split(".", 1)
            if section not in _PHASE_TYPES:
                raise ConfigurationError(f"unknown config section {section!r}")
            _apply_section(getattr(cfg, section), {sub: value}, f"{section}.")
        else:
            _apply_section(cfg, {key: value}, "")
    cfg.phase3.__post_init__()
    return cfg
