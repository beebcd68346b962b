"""Synthetic desk-scale corpora for smoke tests and demos.

Three procedurally generated artistic styles with strongly distinct
palettes and textures (so a small classifier can separate them), plus a
realistic domain of simple scene-like compositions. Images are written as
PNGs with a manifest, matching the corpus layout the loaders expect.
"""

import random
from pathlib import Path

import numpy as np
from PIL import Image

from .data import CorpusManifest, ManifestEntry

STYLE_NAMES = ("warm_wash", "cool_stripes", "dark_dots")


def _warm_wash(rng: np.random.Generator, size: int) -> np.ndarray:
    """Smooth warm gradients, sunset-like."""
    y = np.linspace(0, 1, size)[:, None] * np.ones((1, size))
    phase = rng.uniform(0, np.pi)
    r = 0.75 + 0.25 * np.sin(2 * np.pi * y * rng.uniform(0.5, 1.5) + phase)
    g = 0.35 + 0.25 * y + 0.05 * rng.standard_normal((size, size))
    b = 0.08 + 0.10 * (1 - y)
    img = np.stack([r, g, b], axis=-1)
    img += rng.uniform(-0.05, 0.05, size=(1, 1, 3))
    return img


def _cool_stripes(rng: np.random.Generator, size: int) -> np.ndarray:
    """Bold diagonal stripes in blues and cyans."""
    xx, yy = np.meshgrid(np.arange(size), np.arange(size))
    angle = rng.uniform(0.3, 1.2)
    freq = rng.uniform(0.15, 0.35)
    stripes = np.sin((xx * np.cos(angle) + yy * np.sin(angle)) * freq) > 0
    r = np.where(stripes, 0.05, 0.25)
    g = np.where(stripes, 0.35, 0.75)
    b = np.where(stripes, 0.65, 0.95)
    img = np.stack([r, g, b], axis=-1).astype(np.float64)
    img += 0.03 * rng.standard_normal((size, size, 3))
    return img


def _dark_dots(rng: np.random.Generator, size: int) -> np.ndarray:
    """Near-black field with bright green/magenta dots."""
    img = np.full((size, size, 3), 0.06)
    xx, yy = np.meshgrid(np.arange(size), np.arange(size))
    for _ in range(rng.integers(8, 16)):
        cx, cy = rng.uniform(0, size, 2)
        rad = rng.uniform(size * 0.03, size * 0.09)
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 < rad**2
        color = (0.1, 0.9, 0.3) if rng.random() < 0.5 else (0.9, 0.1, 0.8)
        for c in range(3):
            img[:, :, c] = np.where(mask, color[c], img[:, :, c])
    img += 0.02 * rng.standard_normal((size, size, 3))
    return img


_STYLE_PAINTERS = {
    "warm_wash": _warm_wash,
    "cool_stripes": _cool_stripes,
    "dark_dots": _dark_dots,
}


def _realistic_scene(rng: np.random.Generator, size: int) -> np.ndarray:
    """Photo-ish composition: sky gradient, ground band, a few solid shapes."""
    y = np.linspace(0, 1, size)[:, None] * np.ones((1, size))
    sky = np.stack([0.45 + 0.2 * (1 - y), 0.55 + 0.2 * (1 - y), 0.75 + 0.2 * (1 - y)], axis=-1)
    horizon = rng.uniform(0.45, 0.7)
    ground_color = np.array([rng.uniform(0.25, 0.45), rng.uniform(0.35, 0.55), rng.uniform(0.15, 0.3)])
    img = sky.copy()
    img[y[:, 0] > horizon, :] = ground_color
    xx, yy = np.meshgrid(np.arange(size), np.arange(size))
    for _ in range(rng.integers(2, 5)):
        x0, y0 = rng.uniform(0, size * 0.8, 2)
        w, h = rng.uniform(size * 0.1, size * 0.3, 2)
        mask = (xx >= x0) & (xx < x0 + w) & (yy >= y0) & (yy < y0 + h)
        color = rng.uniform(0.2, 0.7, 3)
        for c in range(3):
            img[:, :, c] = np.where(mask, color[c], img[:, :, c])
    img += 0.02 * rng.standard_normal((size, size, 3))
    return img


def _save(img: np.ndarray, path: Path):
    arr = (np.clip(img, 0, 1) * 255).round().astype(np.uint8)
    Image.fromarray(arr).save(path)


def generate_toy_corpus(
    root, domain: str, count: int, size: int = 64, seed: int = 0
) -> CorpusManifest:
    """Write ``count`` synthetic images plus a manifest; returns the manifest.

    Artistic corpora cycle through the three toy styles (stored in labeled
    subdirectories); realistic corpora hold scene compositions.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    if domain == "artistic":
        for i in range(count):
            style = STYLE_NAMES[i % len(STYLE_NAMES)]
            style_dir = root / style
            style_dir.mkdir(exist_ok=True)
            path = style_dir / f"{style}_{i:04d}.png"
            _save(_STYLE_PAINTERS[style](rng, size), path)
            entries.append(ManifestEntry(path=path, label=style))
    else:
        for i in range(count):
            path = root / f"scene_{i:04d}.png"
            _save(_realistic_scene(rng, size), path)
            entries.append(ManifestEntry(path=path))
    manifest = CorpusManifest(root=root, domain=domain, entries=entries)
    manifest.save(root / "manifest.json")
    return manifest


def _cli():
    import argparse

    parser = argparse.ArgumentParser(description="generate toy corpora")
    parser.add_argument("--out", required=True)
    parser.add_argument("--domain", choices=("artistic", "realistic"), required=True)
    parser.add_argument("--count", type=int, default=60)
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    manifest = generate_toy_corpus(args.out, args.domain, args.count, args.size, args.seed)
    print(f"wrote {len(manifest)} {args.domain} images under {args.out}")


if __name__ == "__main__":
    _cli()
