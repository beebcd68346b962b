"""Scalar training objectives.

Contains the memory-bank contrastive loss (used both for projector
training and for the generator's style term), the dual-domain adversarial
losses, the cycle-consistency L1, the weighted total, and the Gram-matrix
style loss used as an ablation substitute for the contrastive term.
"""

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn.functional as F

from .projector import StyleCode


@dataclass(frozen=True)
class LossWeights:
    """Weights of the generator objective and the contrastive temperature."""

    lambda_adv: float = 1.0
    lambda_cyc: float = 2.0
    lambda_contra: float = 0.2
    temperature: float = 0.07

    def __post_init__(self):
        for name in ("lambda_adv", "lambda_cyc", "lambda_contra", "temperature"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class LossReport:
    """Per-step scalar loss values; ``total`` is the weighted generator objective."""

    step: int
    adv: float
    cyc: float
    contra_msp: float
    contra_g: float
    total: float

    CSV_FIELDS = ("step", "adv", "cyc", "contra_msp", "contra_g", "total")

    @classmethod
    def from_components(
        cls, step: int, adv: float, cyc: float, contra_msp: float, contra_g: float,
        weights: LossWeights,
    ) -> "LossReport":
        total = weights.lambda_adv * adv + weights.lambda_cyc * cyc + weights.lambda_contra * contra_g
        return cls(step=step, adv=adv, cyc=cyc, contra_msp=contra_msp,
                   contra_g=contra_g, total=total)

    def check_composition(self, weights: LossWeights, tol: float = 1e-6) -> bool:
        expected = (
            weights.lambda_adv * self.adv
            + weights.lambda_cyc * self.cyc
            + weights.lambda_contra * self.contra_g
        )
        return abs(expected - self.total) <= tol

    def as_row(self) -> list:
        return [getattr(self, f) for f in self.CSV_FIELDS]


def append_report_csv(path, report: LossReport):
    """Append one report row, writing the header on first use."""
    path = Path(path)
    new = not path.exists()
    with path.open("a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(LossReport.CSV_FIELDS)
        writer.writerow(report.as_row())


def _code_layers(code) -> list[torch.Tensor]:
    layers = list(code.codes) if isinstance(code, StyleCode) else list(code)
    return [z.unsqueeze(0) if z.dim() == 1 else z for z in layers]


def info_nce(anchor, positive, negatives, tau: float) -> torch.Tensor:
    """Multi-layer contrastive loss against a set of negative codes.

    Per layer i the loss is
    ``-log(exp(z_i . z_i+ / tau) / (exp(z_i . z_i+ / tau) + sum_j exp(z_i . z_ij- / tau)))``
    summed over layers; batched anchors/positives are averaged over the
    batch. With no negatives the denominator equals the numerator and the
    loss is exactly zero.
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    anchors = _code_layers(anchor)
    positives = _code_layers(positive)
    negs = list(negatives)
    if not (len(anchors) == len(positives) == len(negs)):
        raise ValueError("anchor, positive, and negatives must have the same layer count")
    total = None
    for a, p, n in zip(anchors, positives, negs):
        if a.shape != p.shape:
            raise ValueError(f"anchor/positive shape mismatch: {a.shape} vs {p.shape}")
        if n.dim() != 2 or n.shape[1] != a.shape[1]:
            raise ValueError(f"negative matrix shape {tuple(n.shape)} does not match dim {a.shape[1]}")
        pos_sim = (a * p).sum(dim=1, keepdim=True)
        logits = torch.cat([pos_sim, a @ n.to(a.dtype).T], dim=1) / tau
        target = torch.zeros(a.shape[0], dtype=torch.long, device=a.device)
        layer_loss = F.cross_entropy(logits, target)
        total = layer_loss if total is None else total + layer_loss
    return total


def _check_probability_map(name: str, t: torch.Tensor):
    if not torch.isfinite(t).all():
        raise FloatingPointError(f"{name} contains non-finite values")
    if (t <= 0).any() or (t >= 1).any():
        raise ValueError(f"{name} must lie strictly inside (0, 1); apply the output nonlinearity")


def single_domain_adversarial_loss(
    real: torch.Tensor, fake: torch.Tensor, saturating: bool = False
) -> tuple[torch.Tensor, torch.Tensor]:
    """Adversarial losses for one discriminator given probability maps.

    Returns ``(d_loss, g_loss)``: the discriminator minimizes
    ``-(E[log D(real)] + E[log(1 - D(fake))])`` and the generator by
    default uses the non-saturating ``-E[log D(fake)]``; with
    ``saturating=True`` it minimizes ``E[log(1 - D(fake))]`` literally.
    """
    _check_probability_map("real map", real)
    _check_probability_map("fake map", fake)
    d_loss = -(torch.log(real).mean() + torch.log1p(-fake).mean())
    if saturating:
        g_loss = torch.log1p(-fake).mean()
    else:
        g_loss = -torch.log(fake).mean()
    return d_loss, g_loss


def adversarial_loss(
    d_r_real: torch.Tensor,
    d_r_fake: torch.Tensor,
    d_a_real: torch.Tensor,
    d_a_fake: torch.Tensor,
    saturating: bool = False,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Dual-domain adversarial losses.

    ``d_r_*`` are realistic-domain discriminator outputs (real = content
    images, fake = outputs stylized toward the realistic domain) and
    ``d_a_*`` artistic-domain ones. Expectations are means over batch and
    spatial positions.
    """
    d_r, g_r = single_domain_adversarial_loss(d_r_real, d_r_fake, saturating)
    d_a, g_a = single_domain_adversarial_loss(d_a_real, d_a_fake, saturating)
    return d_r + d_a, g_r + g_a


def cycle_loss(
    i_c: torch.Tensor, rec_c: torch.Tensor, i_s: torch.Tensor, rec_s: torch.Tensor
) -> torch.Tensor:
    """Mean-reduced L1 reconstruction loss over both domain round trips."""
    if i_c.shape != rec_c.shape or i_s.shape != rec_s.shape:
        raise ValueError("cycle_loss inputs must match pairwise in shape")
    return (i_c - rec_c).abs().mean() + (i_s - rec_s).abs().mean()


def total_loss(adv_g, cyc, contra_g, weights: LossWeights):
    """Weighted generator objective: ``l1*adv + l2*cyc + l3*contra``."""
    for name, v in (("adv_g", adv_g), ("cyc", cyc), ("contra_g", contra_g)):
        value = float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        if not math.isfinite(value):
            raise FloatingPointError(f"non-finite {name}: {value}")
    return (
        weights.lambda_adv * adv_g
        + weights.lambda_cyc * cyc
        + weights.lambda_contra * contra_g
    )


def _gram(feat: torch.Tensor) -> torch.Tensor:
    b, c, h, w = feat.shape
    flat = feat.reshape(b, c, h * w)
    return flat @ flat.transpose(1, 2)


def gram_style_loss(f_out, f_style) -> torch.Tensor:
    """Gram-matrix style loss: per-layer squared Frobenius distance of the
    channel inner-product matrices, normalized by (C*H*W)^2, summed over
    layers and averaged over the batch."""
    out_maps = list(f_out)
    style_maps = list(f_style)
    if len(out_maps) != len(style_maps):
        raise ValueError("pyramids must have the same layer count")
    total = None
    for a, b in zip(out_maps, style_maps):
        if a.shape != b.shape:
            raise ValueError(f"pyramid shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
        _, c, h, w = a.shape
        diff = _gram(a) - _gram(b)
        layer = (diff**2).sum(dim=(1, 2)) / float(c * h * w) ** 2
        layer = layer.mean()
        total = layer if total is None else total + layer
    return total
