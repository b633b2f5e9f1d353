"""Model components: pluggable slice encoder with low-rank adapters,
projection head, cross-/self-attention over slice sequences, temperature
attention pooling, and the classifier head.

The default backbone is a small ViT trainable from scratch on CPU; an
external 768-dim encoder checkpoint can be plugged in instead via
``kind="external_import"``.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, DataError

EMBED_DIM = 768
PROJ_DIM = 128
POOL_TAU = 2.0


@dataclass(frozen=True)
class BackboneSpec:
    kind: str = "tiny_vit"
    embed_dim: int = EMBED_DIM
    patch_size: int = 32
    width: int = 128
    depth: int = 2
    heads: int = 4
    mlp_ratio: float = 2.0
    external_weights: str | None = None

    def __post_init__(self):
        if self.kind not in ("tiny_vit", "external_import"):
            raise ConfigurationError(f"unknown backbone kind {self.kind!r}")
        if self.embed_dim != EMBED_DIM:
            raise ConfigurationError("backbone embed_dim must be 768 (projection contract)")


@dataclass(frozen=True)
class LoRAConfig:
    rank: int = 32
    alpha: float = 32.0
    # Which transformer blocks receive adapters; None = last half.
    target_layers: tuple[int, ...] | None = None

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank


def lora_effective_weight(w0: torch.Tensor, a: torch.Tensor, b: torch.Tensor,
                          alpha: float, r: int) -> torch.Tensor:
    """W' = W0 + (alpha/r) * B A."""
    if r < 1:
        raise ConfigurationError("LoRA rank must be >= 1")
    if a.shape[0] != r or b.shape[1] != r or b.shape[0] != w0.shape[0] \
            or a.shape[1] != w0.shape[1]:
        raise ConfigurationError(
            f"LoRA shape mismatch: W0 {tuple(w0.shape)}, A {tuple(a.shape)}, B {tuple(b.shape)}")
    return w0 + (alpha / r) * (b @ a)


class LoRALinear(nn.Module):
    """Linear layer with a low-rank adapter; B starts at zero so the
    module is an exact identity over the base mapping at init."""

    def __init__(self, base: nn.Linear, cfg: LoRAConfig):
        super().__init__()
        self.base = base
        self.rank = min(cfg.rank, base.in_features, base.out_features)
        self.scaling = cfg.alpha / cfg.rank
        self.lora_a = nn.Parameter(torch.randn(self.rank, base.in_features) / math.sqrt(self.rank))
        self.lora_b = nn.Parameter(torch.zeros(base.out_features, self.rank))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + self.scaling * F.linear(F.linear(x, self.lora_a), self.lora_b)


class EncoderBlock(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: float, lora: LoRAConfig | None):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.norm1 = nn.LayerNorm(dim)

        def proj() -> nn.Module:
            lin = nn.Linear(dim, dim)
            return LoRALinear(lin, lora) if lora is not None else lin

        self.q_proj, self.k_proj, self.v_proj, self.o_proj = proj(), proj(), proj(), proj()
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def _attend(self, x: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        q = self.q_proj(x).view(b, n, self.heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(x).view(b, n, self.heads, self.head_dim).transpose(1, 2)
        v = self.v_proj(x).view(b, n, self.heads, self.head_dim).transpose(1, 2)
        out = F.scaled_dot_product_attention(q, k, v)
        return self.o_proj(out.transpose(1, 2).reshape(b, n, d))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self._attend(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class TinyViT(nn.Module):
    """Small from-scratch ViT emitting 768-dim CLS embeddings.

    Grayscale slices are replicated to 3 channels at the patch embedding.
    """

    def __init__(self, spec: BackboneSpec, lora: LoRAConfig | None = None):
        super().__init__()
        self.spec = spec
        dim = spec.width
        self.patch = nn.Conv2d(3, dim, spec.patch_size, spec.patch_size)
        n_patches = (224 // spec.patch_size) ** 2
        self.grid = 224 // spec.patch_size
        self.cls_token = nn.Parameter(torch.zeros(1, 1, dim))
        self.pos_embed = nn.Parameter(torch.randn(1, n_patches + 1, dim) * 0.02)
        if lora is not None and lora.target_layers is None:
            target = tuple(range(spec.depth // 2, spec.depth))
        elif lora is not None:
            target = tuple(i for i in lora.target_layers if i < spec.depth)
        else:
            target = ()
        self.blocks = nn.ModuleList([
            EncoderBlock(dim, spec.heads, spec.mlp_ratio, lora if i in target else None)
            for i in range(spec.depth)
        ])
        self.norm = nn.LayerNorm(dim)
        self.head = nn.Linear(dim, spec.embed_dim)

    def forward_tokens(self, images: torch.Tensor) -> torch.Tensor:
        """images: (N, 1, 224, 224) -> token sequence (N, 1+P, dim)."""
        x = self.patch(images.expand(-1, 3, -1, -1))
        x = x.flatten(2).transpose(1, 2)
        cls = self.cls_token.expand(x.shape[0], -1, -1)
        x = torch.cat([cls, x], dim=1) + self.pos_embed
        for block in self.blocks:
            x = block(x)
        return self.norm(x)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.head(self.forward_tokens(images)[:, 0])

    def freeze_base(self) -> None:
        """Freeze everything except low-rank adapter matrices."""
        for name, param in self.named_parameters():
            param.requires_grad = "lora_" in name

    def adapter_parameters(self):
        return [p for n, p in self.named_parameters() if "lora_" in n]


def build_backbone(spec: BackboneSpec, lora: LoRAConfig | None = None) -> nn.Module:
    if spec.kind == "tiny_vit":
        return TinyViT(spec, lora)
    if spec.external_weights is None:
        raise ConfigurationError("external_import backbone needs a weights path")
    backbone = TinyViT(BackboneSpec(kind="tiny_vit", patch_size=spec.patch_size,
                                    width=spec.width, depth=spec.depth,
                                    heads=spec.heads, mlp_ratio=spec.mlp_ratio), lora)
    state = torch.load(spec.external_weights, map_location="cpu", weights_only=True)
    backbone.load_state_dict(state, strict=False)
    return backbone


class ProjectionHead(nn.Module):
    """768 -> 256 -> 128 with LayerNorm, GELU, and per-phase dropout."""

    def __init__(self, p1: float = 0.5, p2: float = 0.4):
        super().__init__()
        self.fc1 = nn.Linear(EMBED_DIM, 256)
        self.ln1 = nn.LayerNorm(256)
        self.drop1 = nn.Dropout(p1)
        self.fc2 = nn.Linear(256, PROJ_DIM)
        self.ln2 = nn.LayerNorm(PROJ_DIM)
        self.drop2 = nn.Dropout(p2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.drop1(F.gelu(self.ln1(self.fc1(x))))
        return self.drop2(self.ln2(self.fc2(h)))

    def set_dropout(self, p1: float, p2: float) -> None:
        self.drop1.p = p1
        self.drop2.p = p2


class AttentionPool(nn.Module):
    """Softmax attention pooling with temperature over the slice axis."""

    def __init__(self, tau: float = POOL_TAU):
        super().__init__()
        self.tau = tau
        self.score = nn.Linear(PROJ_DIM, 1)
        nn.init.xavier_uniform_(self.score.weight, gain=1.0)
        nn.init.zeros_(self.score.bias)

    def forward(self, attended: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """attended: (B, S, 128) -> (pooled (B, 128), weights (B, S))."""
        scores = self.score(attended).squeeze(-1) / self.tau
        alpha = torch.softmax(scores, dim=-1)
        return torch.einsum("bs,bsd->bd", alpha, attended), alpha


class ClassifierHead(nn.Module):
    """128 -> 64 -> 1 MLP with ReLU and dropout."""

    def __init__(self, p: float = 0.6):
        super().__init__()
        self.fc1 = nn.Linear(PROJ_DIM, 64)
        self.drop = nn.Dropout(p)
        self.fc2 = nn.Linear(64, 1)

    def forward(self, e: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.drop(F.relu(self.fc1(e)))).squeeze(-1)

    def reinit_output(self) -> None:
        """Pre-distillation re-init of the final layer."""
        nn.init.xavier_uniform_(self.fc2.weight, gain=0.5)
        nn.init.zeros_(self.fc2.bias)


def l2_normalize(e: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    return e / (e.norm(dim=-1, keepdim=True) + eps)


class AmyloidNet(nn.Module):
    """Shared teacher/student architecture.

    Teacher path: encode both modalities, cross-attend PET queries over
    MRI keys/values, pool, classify. Student path: MRI-only with
    self-attention. No positional encoding is applied over the slice
    axis, so pooling is permutation invariant.
    """

    def __init__(self, backbone_spec: BackboneSpec = BackboneSpec(),
                 lora: LoRAConfig | None = LoRAConfig(),
                 proj_dropout: tuple[float, float] = (0.5, 0.4),
                 cls_dropout: float = 0.6):
        super().__init__()
        self.backbone_spec = backbone_spec
        self.backbone = build_backbone(backbone_spec, lora)
        self.projection = ProjectionHead(*proj_dropout)
        self.fuse = nn.MultiheadAttention(PROJ_DIM, 4, batch_first=True)
        self.pool = AttentionPool()
        self.classifier = ClassifierHead(cls_dropout)

    def encode_slices(self, stacks: torch.Tensor) -> torch.Tensor:
        """(B, S, 224, 224) slice stacks -> (B, S, 768) CLS embeddings."""
        if stacks.dim() == 3:
            stacks = stacks.unsqueeze(0)
        b, s, h, w = stacks.shape
        if (h, w) != (224, 224):
            raise DataError(f"slices must be 224x224, got {h}x{w}")
        feats = self.backbone(stacks.reshape(b * s, 1, h, w))
        return feats.view(b, s, -1)

    def project(self, feats: torch.Tensor) -> torch.Tensor:
        return self.projection(feats)

    def cross_attend(self, e_pet: torch.Tensor, e_mri: torch.Tensor) -> torch.Tensor:
        if e_pet.shape != e_mri.shape:
            raise DataError("cross_attend needs matching PET/MRI embedding shapes")
        out, _ = self.fuse(e_pet, e_mri, e_mri, need_weights=False)
        return out

    def self_attend(self, e: torch.Tensor) -> torch.Tensor:
        out, _ = self.fuse(e, e, e, need_weights=False)
        return out

    def _finish(self, attended: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        e, alpha = self.pool(attended)
        z = self.classifier(e)
        return e, z, alpha

    def forward_teacher(self, pet: torch.Tensor, mri: torch.Tensor):
        """Returns (e, z, alpha) from the cross-modal path."""
        if pet is None:
            raise DataError("teacher forward requires a PET stack")
        e_pet = self.project(self.encode_slices(pet))
        e_mri = self.project(self.encode_slices(mri))
        return self._finish(self.cross_attend(e_pet, e_mri))

    def forward_student(self, mri: torch.Tensor):
        """MRI-only self-attention path; returns (e, z, alpha)."""
        e_mri = self.project(self.encode_slices(mri))
        return self._finish(self.self_attend(e_mri))

    def embed_self(self, stacks: torch.Tensor) -> torch.Tensor:
        """Self-attention patient embedding of one modality (triplet roles)."""
        e = self.project(self.encode_slices(stacks))
        pooled, _ = self.pool(self.self_attend(e))
        return pooled

    def set_dropout_profile(self, profile: str) -> None:
        if profile == "teacher":
            self.projection.set_dropout(0.5, 0.4)
            self.classifier.drop.p = 0.6
        elif profile == "student":
            self.projection.set_dropout(0.3, 0.2)
            self.classifier.drop.p = 0.4
        else:
            raise ConfigurationError(f"unknown dropout profile {profile!r}")

    def param_groups(self) -> dict[str, list[nn.Parameter]]:
        """Named parameter groups for per-component optimizer settings."""
        groups = {"adapters": [], "backbone": [], "projection": [],
                  "attention": [], "classifier": []}
        for name, p in self.named_parameters():
            if "lora_" in name:
                groups["adapters"].append(p)
            elif name.startswith("backbone."):
                groups["backbone"].append(p)
            elif name.startswith("projection."):
                groups["projection"].append(p)
            elif name.startswith("fuse.") or name.startswith("pool."):
                groups["attention"].append(p)
            else:
                groups["classifier"].append(p)
        return groups


def make_student(teacher: AmyloidNet) -> AmyloidNet:
    """Student initialized from the teacher's MRI-path weights.

    The backbone base is frozen (adapters stay trainable), dropout drops
    to the student profile, and the classifier output layer is
    re-initialized.
    """
    student = copy.deepcopy(teacher)
    # The source teacher is typically frozen for distillation; the copy
    # must not inherit that state.
    for p in student.parameters():
        p.requires_grad_(True)
    student.set_dropout_profile("student")
    student.classifier.reinit_output()
    backbone = student.backbone
    if hasattr(backbone, "freeze_base"):
        backbone.freeze_base()
    return student
