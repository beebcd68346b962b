"""Contrastive arbitrary style transfer.

A multi-layer style projector learned with a memory-bank contrastive loss,
a style-code-conditioned generator, and dual-domain adversarial training
with cycle consistency.
"""

from .backbone import FeatureExtractor, FeaturePyramid
from .bank import StyleBank
from .data import AugmentSpec, CorpusManifest, augment_pair, load_image, next_batch
from .losses import (
    LossReport,
    LossWeights,
    adversarial_loss,
    cycle_loss,
    gram_style_loss,
    info_nce,
    total_loss,
)
from .networks import DomainDiscriminators, Generator, PatchDiscriminator, stylize_from_image
from .projector import ProjectorConfig, StyleCode, StyleProjector
from .training import CheckpointBundle, TrainConfig, TrainState, fit, train_step

__version__ = "0.1.0"

__all__ = [
    "AugmentSpec",
    "CheckpointBundle",
    "CorpusManifest",
    "DomainDiscriminators",
    "FeatureExtractor",
    "FeaturePyramid",
    "Generator",
    "LossReport",
    "LossWeights",
    "PatchDiscriminator",
    "ProjectorConfig",
    "StyleBank",
    "StyleCode",
    "StyleProjector",
    "TrainConfig",
    "TrainState",
    "adversarial_loss",
    "augment_pair",
    "cycle_loss",
    "fit",
    "gram_style_loss",
    "info_nce",
    "load_image",
    "next_batch",
    "stylize_from_image",
    "total_loss",
    "train_step",
]
