"""Multi-layer style projector: feature pyramid -> per-layer unit-norm style codes.

Each tap map is reduced by global max pooling and global average pooling
(peak and mean of the features), combined, passed through a 1x1 convolution
acting as a linear map and a two-hidden-layer perceptron, and L2-normalized.
The four output dimensions are (512, 1024, 2048, 2048).
"""

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .backbone import TAP_CHANNELS, FeaturePyramid

CODE_DIMS = (512, 1024, 2048, 2048)
NORM_EPS = 1e-8


@dataclass
class StyleCode:
    """M unit-norm style vectors, one per tap layer, batched as [B, K_i]."""

    codes: list[torch.Tensor]

    def __post_init__(self):
        if not self.codes:
            raise ValueError("style code must contain at least one layer")
        batch = self.codes[0].shape[0]
        for z in self.codes:
            if z.dim() != 2 or z.shape[0] != batch:
                raise ValueError("style code layers must be [B, K] with a shared batch")
            if not torch.isfinite(z).all():
                raise FloatingPointError("style code contains non-finite values")
            norms = z.detach().double().norm(dim=1)
            if (norms - 1.0).abs().max() > 1e-6:
                raise ValueError("style code vectors must be unit norm")

    def __len__(self):
        return len(self.codes)

    def __iter__(self):
        return iter(self.codes)

    @property
    def batch_size(self) -> int:
        return self.codes[0].shape[0]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(z.shape[1] for z in self.codes)

    def detached(self) -> "StyleCode":
        return StyleCode([z.detach() for z in self.codes])


@dataclass(frozen=True)
class ProjectorConfig:
    """Output dims, perceptron hidden widths, and pooling combination mode."""

    dims: tuple[int, ...] = CODE_DIMS
    hidden: tuple[int, ...] = ()
    channels: tuple[int, ...] = TAP_CHANNELS
    pooling: str = "concat"

    def __post_init__(self):
        hidden = self.hidden or self.dims
        object.__setattr__(self, "hidden", tuple(hidden))
        if len(self.dims) != len(self.channels) or len(self.hidden) != len(self.dims):
            raise ValueError("dims, hidden, and channels must have equal length")
        if any(d <= 0 for d in self.dims) or any(h <= 0 for h in self.hidden):
            raise ValueError("dims and hidden widths must be positive")
        if self.pooling not in ("concat", "sum"):
            raise ValueError(f"unknown pooling mode {self.pooling!r}")


class _LayerHead(nn.Module):
    """Projection head for one tap layer: pool -> 1x1 conv -> MLP -> normalize."""

    def __init__(self, channels: int, dim: int, hidden: int, pooling: str):
        super().__init__()
        self.pooling = pooling
        pooled = 2 * channels if pooling == "concat" else channels
        self.conv = nn.Conv2d(pooled, dim, kernel_size=1)
        self.mlp = nn.Sequential(
            nn.Linear(dim, hidden),
            nn.ReLU(inplace=False),
            nn.Linear(hidden, hidden),
            nn.ReLU(inplace=False),
            nn.Linear(hidden, dim),
        )

    def forward(self, feat: torch.Tensor) -> torch.Tensor:
        peak = feat.amax(dim=(2, 3), keepdim=True)
        mean = feat.mean(dim=(2, 3), keepdim=True)
        pooled = torch.cat([peak, mean], dim=1) if self.pooling == "concat" else peak + mean
        v = self.conv(pooled).flatten(1)
        v = self.mlp(v)
        # Normalize in float64: float32 norm accumulation over 2048 dims can
        # drift past the 1e-6 unit-norm tolerance.
        v64 = v.double()
        return (v64 / (v64.norm(dim=1, keepdim=True) + NORM_EPS)).to(v.dtype)


class StyleProjector(nn.Module):
    """Projects a feature pyramid into per-layer latent style codes."""

    def __init__(self, config: ProjectorConfig | None = None):
        super().__init__()
        self.config = config or ProjectorConfig()
        self.heads = nn.ModuleList(
            [
                _LayerHead(c, d, h, self.config.pooling)
                for c, d, h in zip(self.config.channels, self.config.dims, self.config.hidden)
            ]
        )

    def forward(self, features: FeaturePyramid | list) -> StyleCode:
        maps = list(features)
        if len(maps) != len(self.heads):
            raise ValueError(f"expected {len(self.heads)} feature maps, got {len(maps)}")
        for m, c in zip(maps, self.config.channels):
            if m.shape[1] != c:
                raise ValueError(
                    f"feature map has {m.shape[1]} channels, projector expects {c}"
                )
            if not torch.isfinite(m).all():
                raise FloatingPointError("feature map contains non-finite values")
        return StyleCode([head(m) for head, m in zip(self.heads, maps)])

    def project(self, features) -> StyleCode:
        return self.forward(features)
