"""Quantitative evaluation: perceptual distances and the deception rate.

The perceptual metric is a backbone-feature distance (mean squared
difference of relu4_1 feature maps); the deception rate is the fraction of
stylized images a style classifier assigns to the intended target style.
The classifier is the shared frozen backbone plus a linear head trained
with cross-entropy on pooled tap features.
"""

import json
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import ENCODER_LAYER, TAP_CHANNELS, FeatureExtractor
from .data import CorpusManifest, load_image
from .runtime import atomic_output


def perceptual_distance(
    extractor: FeatureExtractor, a: torch.Tensor, b: torch.Tensor, layer: str = ENCODER_LAYER
) -> float:
    """Mean squared distance between backbone feature maps of two images."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    with torch.no_grad():
        fa = extractor.feature_map(a, layer)
        fb = extractor.feature_map(b, layer)
    return float(F.mse_loss(fa, fb))


def content_loss(extractor: FeatureExtractor, content: torch.Tensor, stylized: torch.Tensor) -> float:
    """Perceptual distance between a content image and its stylization."""
    return perceptual_distance(extractor, content, stylized)


class StyleClassifier(nn.Module):
    """Frozen-backbone style classifier: pooled tap features -> linear head."""

    def __init__(self, extractor: FeatureExtractor, classes: list[str]):
        super().__init__()
        if len(classes) < 2:
            raise ValueError("need at least 2 style classes")
        self.extractor = extractor
        self.classes = list(classes)
        feat_dim = 2 * sum(TAP_CHANNELS)
        self.head = nn.Linear(feat_dim, len(self.classes))

    def features(self, images: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            pyramid = self.extractor(images)
        pooled = []
        for m in pyramid:
            pooled.append(m.amax(dim=(2, 3)))
            pooled.append(m.mean(dim=(2, 3)))
        return torch.cat(pooled, dim=1)

    def fit_head(self, images: torch.Tensor, labels: list[str], epochs: int = 200, lr: float = 1e-2):
        """Train the linear head with cross-entropy on precomputed features."""
        unknown = set(labels) - set(self.classes)
        if unknown:
            raise ValueError(f"labels not in classifier set: {sorted(unknown)}")
        feats = self.features(images)
        targets = torch.tensor([self.classes.index(l) for l in labels])
        opt = torch.optim.Adam(self.head.parameters(), lr=lr)
        for _ in range(epochs):
            opt.zero_grad()
            loss = F.cross_entropy(self.head(feats), targets)
            loss.backward()
            opt.step()
        return float(loss.detach())

    def predict(self, images: torch.Tensor) -> list[str]:
        with torch.no_grad():
            logits = self.head(self.features(images))
        return [self.classes[int(i)] for i in logits.argmax(dim=1)]

    def accuracy(self, images: torch.Tensor, labels: list[str]) -> float:
        preds = self.predict(images)
        return sum(p == t for p, t in zip(preds, labels)) / len(labels)


@dataclass
class StyleClassifierConfig:
    """How to build the deception-rate classifier from a labeled corpus."""

    classes: list[str]
    epochs: int = 200
    train_fraction: float = 0.75

    def __post_init__(self):
        if len(self.classes) < 2:
            raise ValueError("need at least 2 style classes")


def train_style_classifier(
    extractor: FeatureExtractor,
    manifest: CorpusManifest,
    config: StyleClassifierConfig,
    size: int,
) -> tuple[StyleClassifier, float]:
    """Train on a labeled manifest; returns (classifier, held-out accuracy).

    Entries are split per class by ``train_fraction`` so every class
    appears in both splits.
    """
    missing = set(config.classes) - set(manifest.labels)
    if missing:
        raise ValueError(f"classes missing from manifest: {sorted(missing)}")
    by_class = {c: [e for e in manifest.entries if e.label == c] for c in config.classes}
    train_entries, test_entries = [], []
    for c, entries in by_class.items():
        cut = max(1, int(len(entries) * config.train_fraction))
        train_entries += entries[:cut]
        test_entries += entries[cut:] or entries[:1]

    def _stack(entries):
        imgs = torch.cat([load_image(e.path, size) for e in entries])
        return imgs, [e.label for e in entries]

    clf = StyleClassifier(extractor, config.classes)
    train_imgs, train_labels = _stack(train_entries)
    test_imgs, test_labels = _stack(test_entries)
    clf.fit_head(train_imgs, train_labels, epochs=config.epochs)
    return clf, clf.accuracy(test_imgs, test_labels)


def deception_rate(images: torch.Tensor, target_labels: list[str], clf: StyleClassifier) -> float:
    """Fraction of images whose predicted style equals the target label."""
    if images.shape[0] == 0 or not target_labels:
        raise ValueError("deception_rate needs a non-empty image set")
    if images.shape[0] != len(target_labels):
        raise ValueError("image count and label count differ")
    unknown = set(target_labels) - set(clf.classes)
    if unknown:
        raise ValueError(f"target labels not in classifier set: {sorted(unknown)}")
    preds = clf.predict(images)
    return sum(p == t for p, t in zip(preds, target_labels)) / len(target_labels)


@dataclass
class EvalReport:
    """Aggregate metrics over a set of (content, style) pairs.

    ``content_loss`` is the mean perceptual distance between each content
    image and its stylization; ``perceptual_pair_distance`` is the same
    metric between each stylization and its style reference;
    ``deception_rate`` is None when no labels/classifier were available.
    """

    content_loss: float
    perceptual_pair_distance: float
    deception_rate: float | None
    n: int

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError("sample count must be positive")
        if self.deception_rate is not None and not (0.0 <= self.deception_rate <= 1.0):
            raise ValueError("deception rate must lie in [0, 1]")

    def to_json(self) -> dict:
        return {
            "content_loss": self.content_loss,
            "perceptual_pair_distance": self.perceptual_pair_distance,
            "deception_rate": self.deception_rate,
            "n": self.n,
        }

    def save(self, path):
        with atomic_output(path) as tmp:
            tmp.write_text(json.dumps(self.to_json(), indent=2))


def evaluate_pairs(
    extractor: FeatureExtractor,
    projector,
    generator,
    pairs: list[dict],
    size: int,
    classifier: StyleClassifier | None = None,
) -> EvalReport:
    """Stylize each manifest pair and aggregate the metrics.

    ``pairs`` entries are ``{"content": path, "style": path, "target_label": optional}``.
    """
    if not pairs:
        raise ValueError("pair manifest is empty")
    content_total, pair_total = 0.0, 0.0
    labeled_images, labels = [], []
    for pair in pairs:
        content = load_image(pair["content"], size)
        style = load_image(pair["style"], size)
        with torch.no_grad():
            code = projector(extractor(style))
            out = generator(content, code)
        content_total += perceptual_distance(extractor, content, out)
        pair_total += perceptual_distance(extractor, out, style)
        if pair.get("target_label") is not None:
            labeled_images.append(out)
            labels.append(pair["target_label"])
    rate = None
    if classifier is not None and labeled_images:
        rate = deception_rate(torch.cat(labeled_images), labels, classifier)
    return EvalReport(
        content_loss=content_total / len(pairs),
        perceptual_pair_distance=pair_total / len(pairs),
        deception_rate=rate,
        n=len(pairs),
    )
