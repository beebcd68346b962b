"""Image corpora, augmentation pairs, and training batches.

Images live on disk as PNG/JPEG under one directory per domain
(``artistic`` or ``realistic``), optionally indexed by a ``manifest.json``
of the form ``{"domain": ..., "size": N, "entries": [{"path": ..., "label": ...}]}``.
All tensors produced here are float32 in [-1, 1] with exactly 3 channels.
"""

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import ConfigError, ImageDecodeError
from .runtime import atomic_output

DOMAINS = ("artistic", "realistic")
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def validate_image_tensor(t: torch.Tensor, size: int | None = None) -> torch.Tensor:
    """Check the batched-image contract: [B,3,H,W], finite, values in [-1,1].

    When ``size`` is given (training), H and W must both equal it.
    """
    if t.dim() != 4 or t.shape[1] != 3:
        raise ValueError(f"expected a [B,3,H,W] image tensor, got shape {tuple(t.shape)}")
    if not torch.isfinite(t).all():
        raise FloatingPointError("image tensor contains non-finite values")
    if t.min() < -1.0 - 1e-6 or t.max() > 1.0 + 1e-6:
        raise ValueError("image tensor values outside [-1, 1]")
    if size is not None and (t.shape[2] != size or t.shape[3] != size):
        raise ValueError(f"expected {size}x{size} images, got {t.shape[2]}x{t.shape[3]}")
    return t


@dataclass
class ManifestEntry:
    path: Path
    label: str | None = None


@dataclass
class CorpusManifest:
    """An ordered list of image files for one domain, with optional style labels."""

    root: Path
    domain: str
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self):
        self.root = Path(self.root)
        if self.domain not in DOMAINS:
            raise ConfigError(f"domain must be one of {DOMAINS}, got {self.domain!r}")

    def __len__(self):
        return len(self.entries)

    @property
    def labels(self) -> list[str]:
        """Sorted distinct labels present in the manifest."""
        return sorted({e.label for e in self.entries if e.label is not None})

    def validate(self):
        """Check every listed path exists (decode validity surfaces on load)."""
        for e in self.entries:
            if not e.path.exists():
                raise ConfigError(f"manifest entry does not exist: {e.path}")

    @classmethod
    def from_directory(cls, root, domain: str) -> "CorpusManifest":
        """Scan a directory tree for images; immediate subdirectory names become labels."""
        root = Path(root)
        if not root.is_dir():
            raise ConfigError(f"corpus directory not found: {root}")
        entries = []
        for p in sorted(root.rglob("*")):
            if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file():
                rel = p.relative_to(root)
                label = rel.parts[0] if len(rel.parts) > 1 else None
                entries.append(ManifestEntry(path=p, label=label))
        return cls(root=root, domain=domain, entries=entries)

    @classmethod
    def load(cls, json_path) -> "CorpusManifest":
        json_path = Path(json_path)
        try:
            spec = json.loads(json_path.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read manifest {json_path}: {e}") from e
        root = json_path.parent
        entries = [
            ManifestEntry(path=root / item["path"], label=item.get("label"))
            for item in spec.get("entries", [])
        ]
        manifest = cls(root=root, domain=spec.get("domain", ""), entries=entries)
        declared = spec.get("size")
        if declared is not None and declared != len(entries):
            raise ConfigError(
                f"manifest {json_path} declares size {declared} but lists {len(entries)} entries"
            )
        manifest.validate()
        return manifest

    def save(self, json_path):
        json_path = Path(json_path)
        payload = {
            "domain": self.domain,
            "size": len(self.entries),
            "entries": [
                {"path": str(e.path.relative_to(json_path.parent)), **({"label": e.label} if e.label else {})}
                for e in self.entries
            ],
        }
        with atomic_output(json_path) as tmp:
            tmp.write_text(json.dumps(payload, indent=2))


@dataclass(frozen=True)
class AugmentSpec:
    """Parameters of the random view used to form contrastive positive pairs.

    ``rotation`` is the half-width of a rotation range symmetric about 0,
    in degrees. ``scale_range`` multiplies both image sides before the
    random crop, so its minimum must keep the image at least ``crop_size``.
    """

    scale_range: tuple[float, float] = (1.0, 1.25)
    crop_size: int = 256
    rotation: float = 15.0

    def __post_init__(self):
        lo, hi = self.scale_range
        if not (0 < lo <= hi):
            raise ValueError(f"invalid scale range {self.scale_range}")
        if self.crop_size <= 0:
            raise ValueError("crop_size must be positive")
        if self.rotation < 0:
            raise ValueError("rotation half-width must be >= 0")


def load_image(path, size: int) -> torch.Tensor:
    """Load one image as a 1x3x``size``x``size`` tensor in [-1, 1].

    Non-square inputs are resized so the shorter side equals ``size`` and
    then center-cropped. Grayscale inputs are replicated to 3 channels.
    """
    if size <= 0:
        raise ValueError(f"size must be positive, got {size}")
    path = Path(path)
    try:
        with Image.open(path) as img:
            img.load()
            img = img.convert("RGB")
    except (OSError, SyntaxError, ValueError) as e:
        raise ImageDecodeError(f"cannot decode image {path}: {e}") from e

    w, h = img.size
    scale = size / min(w, h)
    new_w = max(size, round(w * scale))
    new_h = max(size, round(h * scale))
    if (new_w, new_h) != (w, h):
        img = img.resize((new_w, new_h), Image.BILINEAR)

    t = torch.from_numpy(np.asarray(img).copy()).float()
    t = t.permute(2, 0, 1).unsqueeze(0) / 255.0
    t = _center_crop(t, size)
    return t * 2.0 - 1.0


def save_image(tensor: torch.Tensor, path):
    """Write a [1,3,H,W] tensor in [-1,1] as PNG/JPEG (atomic on failure)."""
    if tensor.dim() != 4 or tensor.shape[0] != 1 or tensor.shape[1] != 3:
        raise ValueError(f"expected a [1,3,H,W] tensor, got {tuple(tensor.shape)}")
    arr = ((tensor[0].detach().cpu().clamp(-1, 1) + 1.0) * 127.5).round().byte()
    img = Image.fromarray(arr.permute(1, 2, 0).numpy())
    path = Path(path)
    fmt = "JPEG" if path.suffix.lower() in (".jpg", ".jpeg") else "PNG"
    with atomic_output(path) as tmp:
        img.save(tmp, format=fmt)


def _center_crop(img: torch.Tensor, size: int) -> torch.Tensor:
    h, w = img.shape[2], img.shape[3]
    if size > h or size > w:
        raise ValueError(f"crop size {size} exceeds image size {h}x{w}")
    top = (h - size) // 2
    left = (w - size) // 2
    return img[:, :, top : top + size, left : left + size]


def _rotate_reflect(img: torch.Tensor, degrees: float) -> torch.Tensor:
    """Rotate about the image center, bilinear, reflection-padded borders."""
    theta_rad = math.radians(degrees)
    c, s = math.cos(theta_rad), math.sin(theta_rad)
    h, w = img.shape[2], img.shape[3]
    # Normalized-coordinate rotation needs aspect correction for H != W.
    mat = torch.tensor(
        [[c, -s * h / w, 0.0], [s * w / h, c, 0.0]], dtype=img.dtype
    ).unsqueeze(0)
    grid = F.affine_grid(mat, list(img.shape), align_corners=False)
    return F.grid_sample(img, grid, mode="bilinear", padding_mode="reflection", align_corners=False)


def augment_pair(
    img: torch.Tensor, spec: AugmentSpec, rng: random.Random
) -> tuple[torch.Tensor, torch.Tensor]:
    """Build a contrastive positive pair from one image.

    Returns ``(anchor, view)``: the anchor is the input center-cropped to
    ``spec.crop_size``; the view is independently resized, rotated, and
    randomly cropped using parameters drawn from ``rng``. With the same
    seed the result is bit-identical across calls.
    """
    if img.dim() != 4 or img.shape[0] != 1:
        raise ValueError("augment_pair expects a single [1,3,H,W] image")
    h, w = img.shape[2], img.shape[3]
    if spec.crop_size > min(h, w):
        raise ValueError(f"crop size {spec.crop_size} exceeds image size {h}x{w}")
    min_side = math.floor(min(h, w) * spec.scale_range[0])
    if spec.crop_size > min_side:
        raise ValueError(
            f"crop size {spec.crop_size} exceeds minimum post-resize side {min_side}"
        )

    anchor = _center_crop(img, spec.crop_size)

    scale = rng.uniform(*spec.scale_range)
    angle = rng.uniform(-spec.rotation, spec.rotation)
    view = img
    if scale != 1.0:
        view = F.interpolate(
            view,
            size=(round(h * scale), round(w * scale)),
            mode="bilinear",
            align_corners=False,
        )
    if angle != 0.0:
        view = _rotate_reflect(view, angle)
    vh, vw = view.shape[2], view.shape[3]
    top = rng.randrange(vh - spec.crop_size + 1)
    left = rng.randrange(vw - spec.crop_size + 1)
    view = view[:, :, top : top + spec.crop_size, left : left + spec.crop_size]
    return anchor, view.clamp(-1.0, 1.0)


def next_batch(
    artistic: CorpusManifest,
    realistic: CorpusManifest,
    batch: int,
    rng: random.Random,
    size: int = 256,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Sample a training batch: ``(contents, styles)``.

    Contents are drawn from the realistic manifest and styles from the
    artistic one, uniformly with replacement.
    """
    if len(artistic) == 0 or len(realistic) == 0:
        raise ConfigError("both corpora must be non-empty")
    if batch <= 0:
        raise ValueError("batch must be positive")
    contents = torch.cat(
        [load_image(realistic.entries[rng.randrange(len(realistic))].path, size) for _ in range(batch)]
    )
    styles = torch.cat(
        [load_image(artistic.entries[rng.randrange(len(artistic))].path, size) for _ in range(batch)]
    )
    validate_image_tensor(contents, size)
    validate_image_tensor(styles, size)
    return contents, styles


class BatchIterator:
    """Stateful batch sampler for the training loop.

    Each instance owns its rng and must not be shared across concurrent
    consumers; separate instances (with separate seeds or a prefetch
    wrapper) are safe to run in parallel since :func:`load_image` is
    reentrant.
    """

    def __init__(self, artistic, realistic, batch: int, size: int, seed: int = 0):
        if len(artistic) == 0 or len(realistic) == 0:
            raise ConfigError("both corpora must be non-empty")
        self.artistic = artistic
        self.realistic = realistic
        self.batch = batch
        self.size = size
        self.rng = random.Random(seed)

    def __iter__(self):
        return self

    def __next__(self):
        return next_batch(self.artistic, self.realistic, self.batch, self.rng, self.size)

    def state(self):
        return self.rng.getstate()

    def restore(self, state):
        self.rng.setstate(state)
