"""Frozen encoder and teacher/student head stacks.

The detector is a pair of lightweight head stacks (projection +
classifier) over a single shared, frozen vision-transformer encoder.
The encoder here is a small ViT with seeded random initialization: the
framework only relies on the encoder being a fixed, deterministic
feature map exposing pooled features, patch tokens and class-token
attention, so any backbone satisfying that interface can be swapped in
via ``encoder_id``. Heads are trained; the encoder never is.

All tensors are torch; images cross the boundary as float arrays in
[0, 1] and are channel-normalized here and nowhere else.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    image_size: int = 224
    patch_size: int = 16
    embed_dim: int = 128
    depth: int = 4
    num_heads: int = 4
    mlp_ratio: float = 2.0
    seed: int = 1234

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ModelError("image_size must be a multiple of patch_size")
        if self.embed_dim % self.num_heads != 0:
            raise ModelError("embed_dim must be a multiple of num_heads")

    @property
    def grid(self) -> tuple[int, int]:
        side = self.image_size // self.patch_size
        return (side, side)

    @property
    def encoder_id(self) -> str:
        return (
            f"vit-i{self.image_size}-p{self.patch_size}-d{self.embed_dim}"
            f"-l{self.depth}-h{self.num_heads}-s{self.seed}"
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EncoderConfig":
        return cls(**data)


@dataclass
class EncoderOutput:
    pooled: torch.Tensor  # (B, d)
    tokens: torch.Tensor  # (B, rows, cols, d)
    attention: torch.Tensor  # (B, rows, cols) class-token attention, head-averaged


class _Block(nn.Module):
    def __init__(self, dim: int, num_heads: int, mlp_ratio: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, num_heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x: torch.Tensor, need_weights: bool = False):
        y = self.norm1(x)
        out, weights = self.attn(y, y, y, need_weights=need_weights, average_attn_weights=True)
        x = x + out
        x = x + self.mlp(self.norm2(x))
        return x, weights


class FrozenEncoder(nn.Module):
    """Seeded, frozen ViT: images in, (pooled, tokens, attention) out.

    Weights are drawn once from a generator seeded by the config, then
    permanently frozen; two encoders built from the same config are
    bit-identical. The class token's attention in the final block
    (averaged over heads, restricted to patch keys) is exposed for the
    attention-similarity analysis.
    """

    def __init__(self, config: EncoderConfig | None = None):
        super().__init__()
        self.config = config or EncoderConfig()
        cfg = self.config
        with torch.random.fork_rng():
            torch.manual_seed(cfg.seed)
            self.patch_embed = nn.Conv2d(3, cfg.embed_dim, cfg.patch_size, stride=cfg.patch_size)
            n_patches = cfg.grid[0] * cfg.grid[1]
            self.cls_token = nn.Parameter(torch.randn(1, 1, cfg.embed_dim) * 0.02)
            self.pos_embed = nn.Parameter(torch.randn(1, n_patches + 1, cfg.embed_dim) * 0.02)
            self.blocks = nn.ModuleList(
                [_Block(cfg.embed_dim, cfg.num_heads, cfg.mlp_ratio) for _ in range(cfg.depth)]
            )
        self.norm = nn.LayerNorm(cfg.embed_dim)
        mean = torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1)
        std = torch.tensor(IMAGENET_STD).view(1, 3, 1, 1)
        self.register_buffer("pixel_mean", mean)
        self.register_buffer("pixel_std", std)
        self.requires_grad_(False)
        self.eval()

    @property
    def embed_dim(self) -> int:
        return self.config.embed_dim

    @property
    def patch_grid(self) -> tuple[int, int]:
        return self.config.grid

    @property
    def frozen(self) -> bool:
        return not any(p.requires_grad for p in self.parameters())

    def train(self, mode: bool = True):  # noqa: D102 - encoder is permanently eval
        return super().train(False)

    def _to_batch(self, images) -> torch.Tensor:
        if isinstance(images, torch.Tensor):
            x = images.detach().to(torch.float32)
        else:
            x = torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32))
        if x.ndim == 3:
            x = x.unsqueeze(0)
        if x.ndim != 4:
            raise ModelError(f"expected (B, H, W, 3) or (H, W, 3) images, got {tuple(x.shape)}")
        if x.shape[-1] == 3:
            x = x.permute(0, 3, 1, 2)
        size = self.config.image_size
        if x.shape[-2:] != (size, size):
            raise ModelError(
                f"encoder expects {size}x{size} inputs after preprocessing, got {tuple(x.shape[-2:])}"
            )
        return x

    @torch.no_grad()
    def encode(self, images) -> EncoderOutput:
        """Forward a batch of [0, 1] images; normalization happens here."""
        x = self._to_batch(images)
        x = (x - self.pixel_mean) / self.pixel_std
        x = self.patch_embed(x)  # (B, d, r, c)
        b, d, rows, cols = x.shape
        x = x.flatten(2).transpose(1, 2)  # (B, P, d)
        cls = self.cls_token.expand(b, -1, -1)
        x = torch.cat([cls, x], dim=1) + self.pos_embed
        attn = None
        for i, block in enumerate(self.blocks):
            last = i == len(self.blocks) - 1
            x, weights = block(x, need_weights=last)
            if last:
                attn = weights
        x = self.norm(x)
        pooled = x[:, 0]
        tokens = x[:, 1:].reshape(b, rows, cols, d)
        # class-token row of the head-averaged attention, patch keys only
        cls_attn = attn[:, 0, 1:].reshape(b, rows, cols)
        return EncoderOutput(pooled=pooled, tokens=tokens, attention=cls_attn)

    def weights_hash(self) -> str:
        return weights_hash(self)


def weights_hash(module: nn.Module) -> str:
    """SHA-256 over all parameters and buffers in state-dict order."""
    h = hashlib.sha256()
    for key, tensor in sorted(module.state_dict().items()):
        h.update(key.encode())
        h.update(tensor.detach().cpu().to(torch.float32).numpy().tobytes())
    return h.hexdigest()


def projection_dims(embed_dim: int, role: str) -> list[int]:
    """Layer widths d -> ... -> k for each role.

    At full scale (d >= 512) the teacher uses three layers
    d -> max(2048, 4d) -> 1024 -> 512 and the student two layers
    d -> 1024 -> 512; below that the same ratios are kept relative to d
    (teacher d -> 4d -> 2d -> d, student d -> 2d -> d).
    """
    if role == "teacher":
        if embed_dim >= 512:
            return [embed_dim, max(2048, 4 * embed_dim), 1024, 512]
        return [embed_dim, 4 * embed_dim, 2 * embed_dim, embed_dim]
    if role == "student":
        if embed_dim >= 512:
            return [embed_dim, 1024, 512]
        return [embed_dim, 2 * embed_dim, embed_dim]
    raise ModelError(f"unknown head role {role!r}")


@dataclass(frozen=True)
class HeadConfig:
    role: str
    embed_dim: int
    dims: tuple[int, ...] = ()
    dropout: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.role not in ("teacher", "student"):
            raise ModelError(f"unknown head role {self.role!r}")
        dims = tuple(self.dims) if self.dims else tuple(projection_dims(self.embed_dim, self.role))
        if dims[0] != self.embed_dim:
            raise ModelError("first projection dim must equal the encoder embed dim")
        object.__setattr__(self, "dims", dims)
        if self.dropout is None:
            object.__setattr__(self, "dropout", 0.1 if self.role == "teacher" else 0.2)

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    def to_dict(self) -> dict:
        return {
            "role": self.role,
            "embed_dim": self.embed_dim,
            "dims": list(self.dims),
            "dropout": self.dropout,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "HeadConfig":
        return cls(
            role=data["role"],
            embed_dim=int(data["embed_dim"]),
            dims=tuple(data["dims"]),
            dropout=float(data["dropout"]),
            seed=int(data["seed"]),
        )


class HeadStack(nn.Module):
    """Projection head (dropout-regularized MLP) + two-layer GELU classifier.

    Projection maps d -> k through the configured widths; the classifier
    maps k -> max(32, k // 2) -> 2 raw logits. Weights start from
    N(0, 1/fan_in) with zero biases, drawn from a seeded generator.
    """

    def __init__(self, config: HeadConfig):
        super().__init__()
        self.config = config
        dims = config.dims
        layers: list[nn.Module] = []
        for i in range(len(dims) - 1):
            layers.append(nn.Linear(dims[i], dims[i + 1]))
            if i < len(dims) - 2:
                layers.append(nn.GELU())
                layers.append(nn.Dropout(config.dropout))
        self.projection = nn.Sequential(*layers)
        k = config.out_dim
        hidden = max(32, k // 2)
        self.classifier = nn.Sequential(nn.Linear(k, hidden), nn.GELU(), nn.Linear(hidden, 2))
        self._init_weights(config.seed)

    def _init_weights(self, seed: int):
        g = torch.Generator().manual_seed(seed)
        for module in self.modules():
            if isinstance(module, nn.Linear):
                fan_in = module.weight.shape[1]
                with torch.no_grad():
                    module.weight.normal_(0.0, fan_in**-0.5, generator=g)
                    module.bias.zero_()

    def project_and_classify(
        self, h: torch.Tensor, train_mode: bool = False
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """h (B, d) -> (z (B, k), u (B, 2)); dropout active only in train_mode."""
        if h.shape[-1] != self.config.embed_dim:
            raise ModelError(
                f"feature dim {h.shape[-1]} does not match head input {self.config.embed_dim}"
            )
        self.train(train_mode)
        z = self.projection(h)
        u = self.classifier(z)
        if not train_mode:
            self.eval()
        return z, u

    def weights_hash(self) -> str:
        return weights_hash(self)


def project_and_classify(h: torch.Tensor, heads: HeadStack, train_mode: bool = False):
    return heads.project_and_classify(h, train_mode=train_mode)


def normalize(z: torch.Tensor, eps: float = 0.0) -> torch.Tensor:
    """Row-normalize to unit Euclidean norm; zero rows are an error."""
    norms = torch.linalg.vector_norm(z, dim=-1, keepdim=True)
    if torch.any(norms <= eps):
        raise ModelError("cannot normalize a zero-norm vector")
    return z / norms


def build_heads(role: str, embed_dim: int, seed: int, dims: tuple[int, ...] = ()) -> HeadStack:
    return HeadStack(HeadConfig(role=role, embed_dim=embed_dim, dims=dims, seed=seed))
