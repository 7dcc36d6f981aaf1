"""Small from-scratch vision and text transformers with late fusion.

One vision encoder per modality image, one text encoder for the serialized
metadata; the per-encoder features are concatenated in fixed order
(clinical, meds, cxr, ecg, text), linearly projected, and fed to the task
head. Attention is implemented by hand so forward passes can record the
attention stacks used for the saliency overlays.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .textmeta import PAD_ID

MODALITY_ORDER = ("clinical", "meds", "cxr", "ecg")


@dataclass(frozen=True)
class EncoderConfig:
    image_size: int = 128
    patch_size: int = 16
    embed_dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    window_size: int = 0  # 0 = global attention
    mlp_ratio: float = 4.0
    feature_dim: int = 64

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ValueError("image_size must be divisible by patch_size")
        if self.embed_dim % self.n_heads != 0:
            raise ValueError("embed_dim must be divisible by n_heads")
        if self.window_size and (self.image_size // self.patch_size) % self.window_size != 0:
            raise ValueError("window_size must divide the patch-grid side")

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size

    @property
    def n_patches(self) -> int:
        return self.grid_size ** 2


@dataclass(frozen=True)
class TextConfig:
    vocab_size: int = 2048
    context_length: int = 512
    embed_dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    mlp_ratio: float = 4.0
    feature_dim: int = 64


@dataclass(frozen=True)
class TaskSpec:
    name: str = "mortality"
    n_outputs: int = 1

    def __post_init__(self):
        if self.name not in ("mortality", "phenotyping"):
            raise ValueError("task must be mortality or phenotyping")


@dataclass
class TrainConfig:
    learning_rates: tuple[float, ...] = (1e-5, 5e-6, 1e-6)  # one per epoch
    weight_decay: float = 3e-8
    epochs: int = 3
    batch_size: int = 8
    seed: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8


def _init_module(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, nn.Linear):
            nn.init.trunc_normal_(m.weight, std=0.02)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Embedding):
            nn.init.trunc_normal_(m.weight, std=0.02)
        elif isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, mask: torch.Tensor | None = None):
    """Scaled dot-product attention with row-max-stabilized softmax.

    q, k, v: (..., T, d_head). mask, if given, is broadcastable to the
    attention logits with True at positions to keep.
    """
    logits = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    if mask is not None:
        logits = logits.masked_fill(~mask, float("-inf"))
    logits = logits - logits.max(dim=-1, keepdim=True).values
    weights = torch.softmax(logits, dim=-1)
    return weights @ v, weights


class MultiHeadAttention(nn.Module):
    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, key_mask: torch.Tensor | None = None):
        b, t, d = x.shape
        qkv = self.qkv(x).reshape(b, t, 3, self.n_heads, d // self.n_heads)
        q, k, v = (qkv[:, :, i].transpose(1, 2) for i in range(3))  # (b, h, t, dh)
        mask = None
        if key_mask is not None:
            mask = key_mask[:, None, None, :]  # keep-columns per batch
        out, weights = attention(q, k, v, mask)
        out = out.transpose(1, 2).reshape(b, t, d)
        return self.proj(out), weights


class Mlp(nn.Module):
    def __init__(self, dim: int, ratio: float):
        super().__init__()
        hidden = int(dim * ratio)
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class Block(nn.Module):
    """Pre-norm transformer block."""

    def __init__(self, dim: int, n_heads: int, mlp_ratio: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, n_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio)

    def forward(self, x, key_mask=None):
        h, weights = self.attn(self.norm1(x), key_mask)
        x = x + h
        x = x + self.mlp(self.norm2(x))
        return x, weights


def window_partition(grid: torch.Tensor, window_size: int) -> torch.Tensor:
    """(B, g, g, d) -> (B, n_windows, w*w, d), row-major windows."""
    b, g, _, d = grid.shape
    w = window_size
    x = grid.reshape(b, g // w, w, g // w, w, d)
    x = x.permute(0, 1, 3, 2, 4, 5)
    return x.reshape(b, (g // w) ** 2, w * w, d)


def window_unpartition(windows: torch.Tensor, window_size: int, grid_side: int) -> torch.Tensor:
    """Inverse of window_partition."""
    b = windows.shape[0]
    w = window_size
    g = grid_side
    d = windows.shape[-1]
    x = windows.reshape(b, g // w, g // w, w, w, d)
    x = x.permute(0, 1, 3, 2, 4, 5)
    return x.reshape(b, g, g, d)


class WindowBlock(nn.Module):
    """Windowed self-attention over the patch grid with a separate global
    attention update for the CLS token.

    Alternate layers cyclically shift the grid by window_size // 2 before
    partitioning (and unshift after) so context propagates across windows.
    """

    def __init__(self, dim: int, n_heads: int, mlp_ratio: float, window_size: int, shifted: bool):
        super().__init__()
        self.window_size = window_size
        self.shifted = shifted
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, n_heads)
        self.cls_attn = MultiHeadAttention(dim, n_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio)

    def forward(self, x, key_mask=None):
        b, t, d = x.shape
        g = int(math.isqrt(t - 1))
        normed = self.norm1(x)
        cls, grid = normed[:, :1], normed[:, 1:].reshape(b, g, g, d)
        shift = self.window_size // 2 if self.shifted else 0
        if shift:
            grid = torch.roll(grid, shifts=(-shift, -shift), dims=(1, 2))
        windows = window_partition(grid, self.window_size)
        nw, ws = windows.shape[1], windows.shape[2]
        out, _ = self.attn(windows.reshape(b * nw, ws, d))
        out = window_unpartition(out.reshape(b, nw, ws, d), self.window_size, g)
        if shift:
            out = torch.roll(out, shifts=(shift, shift), dims=(1, 2))
        # CLS attends globally so the sequence-level feature sees every window
        q = self.cls_attn.qkv(cls).reshape(b, 1, 3, -1)[:, :, 0]
        kv = self.cls_attn.qkv(normed).reshape(b, t, 3, -1)
        h = self.cls_attn.n_heads
        dh = d // h
        qh = q.reshape(b, 1, h, dh).transpose(1, 2)
        kh = kv[:, :, 1].reshape(b, t, h, dh).transpose(1, 2)
        vh = kv[:, :, 2].reshape(b, t, h, dh).transpose(1, 2)
        cls_out, cls_weights = attention(qh, kh, vh)
        cls_out = self.cls_attn.proj(cls_out.transpose(1, 2).reshape(b, 1, d))
        x = x + torch.cat([cls_out, out.reshape(b, t - 1, d)], dim=1)
        x = x + self.mlp(self.norm2(x))
        return x, cls_weights


class VisionEncoder(nn.Module):
    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        p = config.patch_size
        self.patch_proj = nn.Linear(p * p * 3, config.embed_dim)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, config.embed_dim))
        self.pos_embed = nn.Parameter(torch.zeros(1, config.n_patches + 1, config.embed_dim))
        if config.window_size:
            self.blocks = nn.ModuleList(
                [
                    WindowBlock(
                        config.embed_dim,
                        config.n_heads,
                        config.mlp_ratio,
                        config.window_size,
                        shifted=bool(i % 2),
                    )
                    for i in range(config.n_layers)
                ]
            )
        else:
            self.blocks = nn.ModuleList(
                [Block(config.embed_dim, config.n_heads, config.mlp_ratio) for _ in range(config.n_layers)]
            )
        self.norm = nn.LayerNorm(config.embed_dim)
        self.feature = nn.Linear(config.embed_dim, config.feature_dim)
        _init_module(self)
        nn.init.trunc_normal_(self.cls_token, std=0.02)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)

    def patch_embed(self, images: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) -> (B, 1 + n_patches, embed_dim) with CLS first."""
        b = images.shape[0]
        p = self.config.patch_size
        g = self.config.grid_size
        x = images.reshape(b, 3, g, p, g, p)
        x = x.permute(0, 2, 4, 3, 5, 1).reshape(b, g * g, p * p * 3)
        tokens = self.patch_proj(x)
        cls = self.cls_token.expand(b, -1, -1)
        return torch.cat([cls, tokens], dim=1) + self.pos_embed

    def forward(self, images: torch.Tensor, record_attention: bool = False):
        x = self.patch_embed(images)
        stack = []
        for block in self.blocks:
            x, weights = block(x)
            if record_attention:
                stack.append(weights.detach())
        feat = self.feature(self.norm(x[:, 0]))
        return (feat, stack) if record_attention else feat


class TextEncoder(nn.Module):
    def __init__(self, config: TextConfig):
        super().__init__()
        self.config = config
        self.token_embed = nn.Embedding(config.vocab_size, config.embed_dim)
        self.pos_embed = nn.Parameter(torch.zeros(1, config.context_length, config.embed_dim))
        self.blocks = nn.ModuleList(
            [Block(config.embed_dim, config.n_heads, config.mlp_ratio) for _ in range(config.n_layers)]
        )
        self.norm = nn.LayerNorm(config.embed_dim)
        self.feature = nn.Linear(config.embed_dim, config.feature_dim)
        _init_module(self)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)

    def forward(self, ids: torch.Tensor, record_attention: bool = False):
        key_mask = ids != PAD_ID  # PAD never attended to
        x = self.token_embed(ids) + self.pos_embed[:, : ids.shape[1]]
        stack = []
        for block in self.blocks:
            x, weights = block(x, key_mask)
            if record_attention:
                stack.append(weights.detach())
        feat = self.feature(self.norm(x[:, 0]))
        return (feat, stack) if record_attention else feat


class FusionModel(nn.Module):
    """Per-modality encoders, concat, linear projection, task head."""

    def __init__(
        self,
        modalities: tuple[str, ...],
        encoder_config: EncoderConfig,
        task: TaskSpec,
        text_config: TextConfig | None = None,
        proj_dim: int | None = None,
    ):
        super().__init__()
        unknown = set(modalities) - set(MODALITY_ORDER)
        if unknown:
            raise ValueError(f"unknown modalities {sorted(unknown)}")
        if not modalities and text_config is None:
            raise ValueError("need at least one modality or text")
        self.modalities = tuple(m for m in MODALITY_ORDER if m in modalities)
        self.task = task
        self.encoder_config = encoder_config
        self.text_config = text_config
        self.encoders = nn.ModuleDict({m: VisionEncoder(encoder_config) for m in self.modalities})
        self.text_encoder = TextEncoder(text_config) if text_config else None
        concat_dim = len(self.modalities) * encoder_config.feature_dim
        if text_config:
            concat_dim += text_config.feature_dim
        proj_dim = proj_dim or encoder_config.feature_dim
        self.fusion_proj = nn.Linear(concat_dim, proj_dim)
        self.head = nn.Linear(proj_dim, task.n_outputs)
        _init_module(self.fusion_proj)
        _init_module(self.head)

    def forward(self, batch: dict[str, torch.Tensor], record_attention: bool = False):
        features = []
        stacks: dict[str, list[torch.Tensor]] = {}
        for m in self.modalities:
            if record_attention:
                feat, stack = self.encoders[m](batch[m], record_attention=True)
                stacks[m] = stack
            else:
                feat = self.encoders[m](batch[m])
            features.append(feat)
        if self.text_encoder is not None:
            if record_attention:
                feat, stack = self.text_encoder(batch["text"], record_attention=True)
                stacks["text"] = stack
            else:
                feat = self.text_encoder(batch["text"])
            features.append(feat)
        logits = self.head(self.fusion_proj(torch.cat(features, dim=1)))
        return (logits, stacks) if record_attention else logits

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def loss_fn(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean sigmoid cross-entropy over batch and outputs, log-space stable."""
    return F.binary_cross_entropy_with_logits(logits, labels.to(logits.dtype))


class TrainingDiverged(RuntimeError):
    def __init__(self, history):
        super().__init__("training diverged: loss is not finite")
        self.history = history


def _epoch_lr(cfg: TrainConfig, epoch: int) -> float:
    lrs = cfg.learning_rates
    return lrs[min(epoch, len(lrs) - 1)]


def train(
    model: FusionModel,
    train_batch: dict[str, torch.Tensor],
    train_labels: torch.Tensor,
    cfg: TrainConfig,
    val_batch: dict[str, torch.Tensor] | None = None,
    val_labels: torch.Tensor | None = None,
) -> list[dict]:
    """Seeded AdamW training; one learning rate per epoch; the checkpoint
    with the best validation AUROC is restored into the model at the end.

    Returns the per-epoch history.
    """
    from .metrics import auroc as auroc_metric

    torch.manual_seed(cfg.seed)
    optimizer = torch.optim.AdamW(
        model.parameters(),
        lr=_epoch_lr(cfg, 0),
        betas=cfg.betas,
        eps=cfg.eps,
        weight_decay=cfg.weight_decay,
    )
    n = train_labels.shape[0]
    gen = torch.Generator().manual_seed(cfg.seed)
    history = []
    best_val = -math.inf
    best_state = None
    for epoch in range(cfg.epochs):
        lr = _epoch_lr(cfg, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        model.train()
        perm = torch.randperm(n, generator=gen)
        epoch_loss = 0.0
        n_steps = 0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            batch = {k: v[idx] for k, v in train_batch.items()}
            labels = train_labels[idx]
            optimizer.zero_grad()
            logits = model(batch)
            loss = loss_fn(logits.squeeze(-1) if model.task.n_outputs == 1 else logits, labels)
            if not torch.isfinite(loss):
                raise TrainingDiverged(history)
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.detach())
            n_steps += 1
        record = {"epoch": epoch, "train_loss": epoch_loss / max(n_steps, 1), "lr": lr}
        if val_batch is not None and val_labels is not None:
            model.eval()
            with torch.no_grad():
                scores = predict(model, val_batch)
            if model.task.n_outputs == 1:
                val_auroc = auroc_metric(scores.numpy(), val_labels.numpy())
            else:
                per_class = [
                    auroc_metric(scores[:, j].numpy(), val_labels[:, j].numpy())
                    for j in range(model.task.n_outputs)
                    if 0 < val_labels[:, j].sum() < val_labels.shape[0]
                ]
                val_auroc = float(np.mean(per_class)) if per_class else 0.5
            record["val_auroc"] = val_auroc
            if val_auroc > best_val:
                best_val = val_auroc
                best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        history.append(record)
    if best_state is not None:
        model.load_state_dict(best_state)
    return history


def predict(model: FusionModel, batch: dict[str, torch.Tensor], chunk: int = 64) -> torch.Tensor:
    """Sigmoid scores, evaluated in fixed-size chunks."""
    model.eval()
    n = next(iter(batch.values())).shape[0]
    outs = []
    with torch.no_grad():
        for start in range(0, n, chunk):
            piece = {k: v[start : start + chunk] for k, v in batch.items()}
            logits = model(piece)
            outs.append(torch.sigmoid(logits))
    scores = torch.cat(outs, dim=0)
    return scores.squeeze(-1) if model.task.n_outputs == 1 else scores


def gradient_check(
    model: nn.Module,
    batch: dict[str, torch.Tensor],
    labels: torch.Tensor,
    eps: float = 1e-3,
) -> float:
    """Max guarded relative error between autograd and central finite
    differences over every parameter, at 64-bit."""
    model = model.double()
    batch = {k: (v.double() if v.is_floating_point() else v) for k, v in batch.items()}

    def compute_loss() -> torch.Tensor:
        logits = model(batch)
        target = labels.double()
        if logits.ndim == 2 and logits.shape[1] == 1 and target.ndim == 1:
            logits = logits.squeeze(-1)
        return loss_fn(logits, target)

    model.zero_grad()
    compute_loss().backward()
    max_rel = 0.0
    for param in model.parameters():
        grad = param.grad.detach().clone().reshape(-1)
        flat = param.data.reshape(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            with torch.no_grad():
                up = compute_loss().item()
            flat[i] = orig - eps
            with torch.no_grad():
                down = compute_loss().item()
            flat[i] = orig
            fd = (up - down) / (2 * eps)
            an = grad[i].item()
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-2)
            max_rel = max(max_rel, rel)
    return max_rel


def transfer_encoder(dst: FusionModel, src: FusionModel, modality: str) -> None:
    """Copy one modality's trained vision encoder into another model.

    Late fusion trained jointly from scratch tends to starve the
    harder-to-learn modality: whichever encoder fits first shrinks the loss
    and the other never amplifies. Initializing a fused model from
    per-modality pretrained encoders and fine-tuning sidesteps that.
    """
    if modality not in dst.encoders or modality not in src.encoders:
        raise ValueError(f"both models must have a {modality!r} encoder")
    if dst.encoder_config != src.encoder_config:
        raise ValueError("encoder configs differ")
    dst.encoders[modality].load_state_dict(src.encoders[modality].state_dict())


def whiten_features(
    model: FusionModel, batch: dict[str, torch.Tensor], modality: str, eps: float = 1e-6
) -> None:
    """Fold per-dimension feature standardization into one encoder's final
    linear layer, using the given reference batch (normally the train split).

    A trained encoder's feature vector is a large constant offset plus a
    small input-dependent part whose scale differs across modalities; a
    fusion head on raw concatenated features is badly conditioned and tends
    to fit only the largest-scale modality. After this rescaling the
    encoder's features have zero mean and unit variance on the reference
    batch, so the head sees every modality at the same scale.
    """
    encoder = model.encoders[modality]
    encoder.eval()
    with torch.no_grad():
        feats = encoder(batch[modality])
        mu = feats.mean(dim=0)
        sd = feats.std(dim=0) + eps
        encoder.feature.weight.div_(sd[:, None])
        encoder.feature.bias.sub_(mu)
        encoder.feature.bias.div_(sd)


def save_checkpoint(path, model: FusionModel, history: list[dict] | None = None) -> None:
    torch.save(
        {
            "version": 1,
            "modalities": model.modalities,
            "encoder_config": asdict(model.encoder_config),
            "text_config": asdict(model.text_config) if model.text_config else None,
            "task": asdict(model.task),
            "proj_dim": model.fusion_proj.out_features,
            "state_dict": model.state_dict(),
            "history": history or [],
        },
        path,
    )


def load_checkpoint(path) -> tuple[FusionModel, list[dict]]:
    payload = torch.load(path, weights_only=False)
    model = FusionModel(
        modalities=tuple(payload["modalities"]),
        encoder_config=EncoderConfig(**payload["encoder_config"]),
        task=TaskSpec(**payload["task"]),
        text_config=TextConfig(**payload["text_config"]) if payload["text_config"] else None,
        proj_dim=payload["proj_dim"],
    )
    model.load_state_dict(payload["state_dict"])
    return model, payload["history"]


def params_hash(model: nn.Module) -> str:
    import hashlib

    buf = io.BytesIO()
    for name, tensor in sorted(model.state_dict().items()):
        buf.write(name.encode())
        buf.write(tensor.detach().cpu().numpy().tobytes())
    return hashlib.sha256(buf.getvalue()).hexdigest()
