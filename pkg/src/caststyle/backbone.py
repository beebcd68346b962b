"""Frozen VGG-19 convolutional backbone with fixed multi-layer feature taps.

The style pipeline reads four post-activation taps (relu1_2, relu2_2,
relu3_3, relu4_3) with channel widths (64, 128, 256, 512) at spatial
strides (1, 2, 4, 8). The perceptual metric and the generator encoder use
the relu4_1 stage of the same stack.

Weights default to a deterministic random initialization (this sandbox has
no access to ImageNet checkpoints); externally trained weights load from a
``.pt`` archive with a JSON sidecar listing the tap names and a content
hash, and a converter accepts torchvision-style ``features.N.*`` keys.
"""

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn as nn

from .errors import ConfigError
from .runtime import atomic_output

TAP_LAYERS = ("relu1_2", "relu2_2", "relu3_3", "relu4_3")
TAP_CHANNELS = (64, 128, 256, 512)
TAP_STRIDES = (1, 2, 4, 8)
ENCODER_LAYER = "relu4_1"
WEIGHTS_FORMAT_VERSION = 1

# conv stack through relu4_3; pools halve resolution
_LAYER_PLAN = (
    ("conv1_1", 3, 64), ("relu1_1",), ("conv1_2", 64, 64), ("relu1_2",), ("pool1",),
    ("conv2_1", 64, 128), ("relu2_1",), ("conv2_2", 128, 128), ("relu2_2",), ("pool2",),
    ("conv3_1", 128, 256), ("relu3_1",), ("conv3_2", 256, 256), ("relu3_2",),
    ("conv3_3", 256, 256), ("relu3_3",), ("conv3_4", 256, 256), ("relu3_4",), ("pool3",),
    ("conv4_1", 256, 512), ("relu4_1",), ("conv4_2", 512, 512), ("relu4_2",),
    ("conv4_3", 512, 512), ("relu4_3",),
)

# Native input statistics of the pretrained backbone family.
_MEAN = (0.485, 0.456, 0.406)
_STD = (0.229, 0.224, 0.225)


@dataclass
class FeaturePyramid:
    """Ordered feature maps from the four tap layers."""

    maps: list[torch.Tensor]

    def __post_init__(self):
        if len(self.maps) != len(TAP_LAYERS):
            raise ValueError(f"expected {len(TAP_LAYERS)} maps, got {len(self.maps)}")
        for m, c in zip(self.maps, TAP_CHANNELS):
            if m.dim() != 4 or m.shape[1] != c:
                raise ValueError(
                    f"tap map has shape {tuple(m.shape)}, expected channel width {c}"
                )

    def __iter__(self):
        return iter(self.maps)

    def __len__(self):
        return len(self.maps)

    @property
    def batch_size(self) -> int:
        return self.maps[0].shape[0]


class FeatureExtractor(nn.Module):
    """VGG-19 conv stack through relu4_3, frozen, exposing the style taps.

    Input images are [-1, 1] tensors; the mapping onto the backbone's
    native statistics happens inside :meth:`forward`, so callers never see
    backbone conventions.
    """

    def __init__(self, seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.layers = nn.ModuleDict()
        for entry in _LAYER_PLAN:
            name = entry[0]
            if name.startswith("conv"):
                _, cin, cout = entry
                conv = nn.Conv2d(cin, cout, kernel_size=3, padding=1)
                with torch.no_grad():
                    w = torch.empty_like(conv.weight)
                    nn.init.kaiming_normal_(w, nonlinearity="relu", generator=gen)
                    conv.weight.copy_(w)
                    conv.bias.zero_()
                self.layers[name] = conv
            elif name.startswith("relu"):
                self.layers[name] = nn.ReLU(inplace=False)
            else:
                self.layers[name] = nn.MaxPool2d(kernel_size=2, stride=2)
        mean = torch.tensor(_MEAN).view(1, 3, 1, 1)
        std = torch.tensor(_STD).view(1, 3, 1, 1)
        self.register_buffer("input_mean", mean)
        self.register_buffer("input_std", std)
        self.freeze()

    def freeze(self):
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    @property
    def frozen(self) -> bool:
        return not any(p.requires_grad for p in self.parameters())

    def _check_input(self, img: torch.Tensor):
        if img.dim() != 4 or img.shape[1] != 3:
            raise ValueError(f"expected [B,3,H,W] input, got {tuple(img.shape)}")
        if img.shape[2] % 8 != 0 or img.shape[3] % 8 != 0:
            raise ValueError(
                f"input spatial size {img.shape[2]}x{img.shape[3]} must be divisible by 8"
            )
        if not torch.isfinite(img).all():
            raise FloatingPointError("input image contains non-finite values")

    def _normalize(self, img: torch.Tensor) -> torch.Tensor:
        return ((img + 1.0) * 0.5 - self.input_mean) / self.input_std

    def forward(self, img: torch.Tensor, upto: str | None = None):
        """Run the stack, returning tap maps (or the single ``upto`` map)."""
        self._check_input(img)
        x = self._normalize(img)
        taps = {}
        for name, layer in self.layers.items():
            x = layer(x)
            if upto is not None and name == upto:
                return x
            if name in TAP_LAYERS:
                taps[name] = x
        if upto is not None:
            raise ValueError(f"unknown layer {upto!r}")
        return FeaturePyramid([taps[n] for n in TAP_LAYERS])

    def extract(self, img: torch.Tensor) -> FeaturePyramid:
        return self.forward(img)

    def feature_map(self, img: torch.Tensor, layer: str = ENCODER_LAYER) -> torch.Tensor:
        return self.forward(img, upto=layer)

    def encoder_state_dict(self) -> dict:
        """Conv parameters through relu4_1, for initializing the generator encoder."""
        out = {}
        for name, layer in self.layers.items():
            if name.startswith("conv"):
                out[name + ".weight"] = layer.weight.detach().clone()
                out[name + ".bias"] = layer.bias.detach().clone()
            if name == ENCODER_LAYER:
                break
        return out


def save_extractor_weights(extractor: FeatureExtractor, archive_path):
    """Write the parameter archive plus its JSON sidecar (taps + sha256)."""
    archive_path = Path(archive_path)
    with atomic_output(archive_path) as tmp:
        torch.save(extractor.state_dict(), tmp)
    digest = hashlib.sha256(archive_path.read_bytes()).hexdigest()
    sidecar = {
        "format_version": WEIGHTS_FORMAT_VERSION,
        "taps": list(TAP_LAYERS),
        "sha256": digest,
    }
    with atomic_output(archive_path.with_suffix(".json")) as tmp:
        tmp.write_text(json.dumps(sidecar, indent=2))


def load_extractor_weights(archive_path) -> FeatureExtractor:
    """Load an extractor from an archive, verifying sidecar hash and tap names."""
    archive_path = Path(archive_path)
    sidecar_path = archive_path.with_suffix(".json")
    if not sidecar_path.exists():
        raise ConfigError(f"missing weights sidecar {sidecar_path}")
    sidecar = json.loads(sidecar_path.read_text())
    digest = hashlib.sha256(archive_path.read_bytes()).hexdigest()
    if sidecar.get("sha256") != digest:
        raise ConfigError(f"weights archive {archive_path} does not match sidecar hash")
    extractor = FeatureExtractor()
    if tuple(sidecar.get("taps", ())) != TAP_LAYERS:
        raise ConfigError(f"sidecar taps {sidecar.get('taps')} do not match {TAP_LAYERS}")
    state = torch.load(archive_path, map_location="cpu", weights_only=True)
    extractor.load_state_dict(state)
    extractor.freeze()
    return extractor


def convert_torchvision_vgg19(state: dict) -> dict:
    """Map torchvision ``features.N.*`` VGG-19 keys onto this module's names."""
    conv_names = [e[0] for e in _LAYER_PLAN if e[0].startswith("conv")]
    tv_indices = []
    idx = 0
    for entry in _LAYER_PLAN:
        name = entry[0]
        if name.startswith("conv"):
            tv_indices.append(idx)
            idx += 2  # conv + relu
        elif name.startswith("pool"):
            idx += 1
    out = {}
    for name, tv_idx in zip(conv_names, tv_indices):
        for kind in ("weight", "bias"):
            key = f"features.{tv_idx}.{kind}"
            if key not in state:
                raise ConfigError(f"torchvision state dict missing {key}")
            out[f"layers.{name}.{kind}"] = state[key]
    return out
