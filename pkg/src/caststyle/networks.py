"""Generator and domain discriminators.

The generator is an encoder-transformation-decoder: a VGG-style encoder
through the relu4_1 stage (initialized from the shared backbone and
trainable), and a mirrored decoder. Style conditioning happens at four
modulation sites: the encoder/decoder junction plus the start of each
decoder upsampling stage. Each site instance-normalizes the content
features and applies a per-channel (scale, shift) produced from one style
code layer; sites consume code layers 4, 3, 2, 1 in that order.

Discriminators are 70x70 patch discriminators (plain convolutions, no
spectral norm) emitting per-patch probability maps squashed strictly
inside (0, 1).
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

from .projector import CODE_DIMS, StyleCode

# Probability maps are kept away from exactly 0/1 so log terms stay finite.
_PROB_MARGIN = 1e-6


def _check_image(img: torch.Tensor):
    if img.dim() != 4 or img.shape[1] != 3:
        raise ValueError(f"expected [B,3,H,W] input, got {tuple(img.shape)}")
    if img.shape[2] % 8 != 0 or img.shape[3] % 8 != 0:
        raise ValueError(
            f"input spatial size {img.shape[2]}x{img.shape[3]} must be divisible by 8"
        )


class ModulationHead(nn.Module):
    """Maps one style code layer to per-channel (scale, shift) at a site."""

    def __init__(self, code_dim: int, channels: int, hidden: int = 256):
        super().__init__()
        self.channels = channels
        self.net = nn.Sequential(
            nn.Linear(code_dim, hidden),
            nn.ReLU(inplace=False),
            nn.Linear(hidden, 2 * channels),
        )

    def forward(self, code: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        raw = self.net(code)
        scale = 1.0 + raw[:, : self.channels]
        shift = raw[:, self.channels :]
        return scale, shift


def _modulate(feat: torch.Tensor, scale: torch.Tensor, shift: torch.Tensor) -> torch.Tensor:
    normed = F.instance_norm(feat, eps=1e-5)
    return normed * scale[:, :, None, None] + shift[:, :, None, None]


def _conv3(cin: int, cout: int) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, kernel_size=3, padding=1, padding_mode="reflect")


class _Encoder(nn.Module):
    """VGG-19 conv stack through relu4_1; names match the backbone for weight copy."""

    PLAN = (
        ("conv1_1", 3, 64), ("conv1_2", 64, 64), ("pool",),
        ("conv2_1", 64, 128), ("conv2_2", 128, 128), ("pool",),
        ("conv3_1", 128, 256), ("conv3_2", 256, 256), ("conv3_3", 256, 256),
        ("conv3_4", 256, 256), ("pool",),
        ("conv4_1", 256, 512),
    )

    def __init__(self):
        super().__init__()
        self.convs = nn.ModuleDict(
            {e[0]: nn.Conv2d(e[1], e[2], kernel_size=3, padding=1) for e in self.PLAN if e[0] != "pool"}
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for entry in self.PLAN:
            if entry[0] == "pool":
                x = F.max_pool2d(x, kernel_size=2, stride=2)
            else:
                x = F.relu(self.convs[entry[0]](x))
        return x

    def load_backbone(self, state: dict):
        """Copy conv weights exported by FeatureExtractor.encoder_state_dict."""
        with torch.no_grad():
            for name, conv in self.convs.items():
                conv.weight.copy_(state[name + ".weight"])
                conv.bias.copy_(state[name + ".bias"])


class _DecoderStage(nn.Module):
    """One modulated decoder stage: modulation, convs, optional upsample."""

    def __init__(self, code_dim: int, channels: int, convs: list[tuple[int, int]], upsample: bool):
        super().__init__()
        self.head = ModulationHead(code_dim, channels)
        self.convs = nn.ModuleList([_conv3(cin, cout) for cin, cout in convs])
        self.upsample = upsample

    def forward(self, x, code, identity_modulation: bool):
        if identity_modulation:
            x = F.instance_norm(x, eps=1e-5)
        else:
            scale, shift = self.head(code)
            x = _modulate(x, scale, shift)
        for conv in self.convs:
            x = F.relu(conv(x))
        if self.upsample:
            x = F.interpolate(x, scale_factor=2, mode="nearest")
        return x


class Generator(nn.Module):
    """Style-code-conditioned image generator; output matches input H x W, in [-1, 1]."""

    def __init__(self, code_dims: tuple[int, ...] = CODE_DIMS):
        super().__init__()
        if len(code_dims) != 4:
            raise ValueError("generator expects four style code layers")
        self.code_dims = tuple(code_dims)
        self.encoder = _Encoder()
        # Sites consume code layers 4,3,2,1; channel widths mirror the encoder.
        self.stages = nn.ModuleList(
            [
                _DecoderStage(code_dims[3], 512, [(512, 256)], upsample=True),
                _DecoderStage(
                    code_dims[2], 256,
                    [(256, 256), (256, 256), (256, 256), (256, 128)], upsample=True,
                ),
                _DecoderStage(code_dims[1], 128, [(128, 128), (128, 64)], upsample=True),
                _DecoderStage(code_dims[0], 64, [(64, 64)], upsample=False),
            ]
        )
        self.to_rgb = _conv3(64, 3)

    def forward(
        self, content: torch.Tensor, style_code: StyleCode, identity_modulation: bool = False
    ) -> torch.Tensor:
        _check_image(content)
        if tuple(style_code.dims) != self.code_dims:
            raise ValueError(
                f"style code dims {style_code.dims} do not match generator {self.code_dims}"
            )
        if style_code.batch_size != content.shape[0]:
            raise ValueError("style code batch does not match content batch")
        x = self.encoder(content)
        codes = list(style_code.codes)[::-1]  # layers 4,3,2,1
        for stage, code in zip(self.stages, codes):
            x = stage(x, code, identity_modulation)
        return torch.tanh(self.to_rgb(x))

    def stylize(self, content: torch.Tensor, style_code: StyleCode, **kw) -> torch.Tensor:
        return self.forward(content, style_code, **kw)


def stylize_from_image(content, style_img, extractor, projector, generator, **kw):
    """Full stylization path: extract style features, project, generate."""
    code = projector(extractor(style_img))
    return generator(content, code, **kw)


class PatchDiscriminator(nn.Module):
    """70x70 patch discriminator, probability-map output.

    The canonical stack: four conv layers (64, 128, 256, 512) at strides
    (2, 2, 2, 1) with instance norm on all but the first, no spectral
    norm, then a 1-channel head.
    """

    CHANNELS = (64, 128, 256, 512)
    STRIDES = (2, 2, 2, 1)

    def __init__(self, in_channels: int = 3):
        super().__init__()
        layers = []
        cin = in_channels
        for i, (cout, stride) in enumerate(zip(self.CHANNELS, self.STRIDES)):
            layers.append(nn.Conv2d(cin, cout, kernel_size=4, stride=stride, padding=1))
            if i > 0:
                layers.append(nn.InstanceNorm2d(cout))
            layers.append(nn.LeakyReLU(0.2, inplace=False))
            cin = cout
        layers.append(nn.Conv2d(cin, 1, kernel_size=4, stride=1, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        _check_image(img)
        logits = self.net(img)
        # Affine-squashed sigmoid: output strictly inside (0,1) with live
        # gradients even at saturation, so log terms never hit -inf.
        return _PROB_MARGIN + (1.0 - 2.0 * _PROB_MARGIN) * torch.sigmoid(logits)

    @staticmethod
    def map_size(n: int) -> int:
        """Output spatial side for an n-pixel input side (stride arithmetic)."""
        for stride in PatchDiscriminator.STRIDES:
            n = (n - 2) // stride + 1
        return n - 1


class DomainDiscriminators(nn.Module):
    """Holds the per-domain discriminators for a given enhancement mode.

    ``dual`` keeps independent realistic and artistic discriminators;
    ``mixed`` shares a single discriminator across both domains;
    ``artistic_only`` drops the realistic one entirely.
    """

    MODES = ("dual", "mixed", "artistic_only")

    def __init__(self, mode: str = "dual"):
        super().__init__()
        if mode not in self.MODES:
            raise ValueError(f"mode must be one of {self.MODES}, got {mode!r}")
        self.mode = mode
        if mode == "dual":
            self.realistic = PatchDiscriminator()
            self.artistic = PatchDiscriminator()
        elif mode == "mixed":
            shared = PatchDiscriminator()
            self.realistic = shared
            self.artistic = shared
        else:
            self.realistic = None
            self.artistic = PatchDiscriminator()

    def discriminate(self, img: torch.Tensor, which: str) -> torch.Tensor:
        if which == "realistic":
            if self.realistic is None:
                raise ValueError("no realistic-domain discriminator in artistic_only mode")
            return self.realistic(img)
        if which == "artistic":
            return self.artistic(img)
        raise ValueError(f"unknown domain {which!r}; expected 'realistic' or 'artistic'")
