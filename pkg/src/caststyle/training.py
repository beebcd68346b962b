"""Joint training loop: alternating discriminator / generator / projector updates.

Each step, in order: (1) generate the cross-domain images, (2) update the
discriminators, (3) update the generator on the weighted total objective,
(4) update the style projector on the contrastive loss over an augmented
pair, (5) push the style images' codes into the memory bank, (6) advance
the linear learning-rate decay. Ablation flags skip or retarget individual
terms. Checkpoints capture every parameter group, optimizer state, the
bank, and all rng streams, so a resumed run continues the loss stream
exactly.
"""

import dataclasses
import hashlib
import json
import math
import random
import sys
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn.functional as F

from .backbone import FeatureExtractor
from .bank import DEFAULT_CAPACITY, StyleBank
from .data import AugmentSpec, BatchIterator, augment_pair, load_image, next_batch, save_image
from .errors import CheckpointError, ConfigError, NonFiniteLossError
from .losses import (
    LossReport,
    LossWeights,
    adversarial_loss,
    append_report_csv,
    cycle_loss,
    gram_style_loss,
    info_nce,
    single_domain_adversarial_loss,
    total_loss,
)
from .networks import DomainDiscriminators, Generator
from .projector import ProjectorConfig, StyleProjector
from .runtime import atomic_output, resolve_device

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    """Hyperparameters and ablation switches for one training run."""

    iterations: int = 800_000
    batch: int = 4
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    image_size: int = 256
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    bank_capacity: int = DEFAULT_CAPACITY
    checkpoint_every: int = 10_000
    sample_every: int = 1_000
    augment_scale: tuple[float, float] = (1.0, 1.25)
    augment_rotation: float = 15.0
    # Ablation and behavior flags.
    no_de: bool = False
    mix_de: bool = False
    one_de: bool = False
    half_cycle: bool = False
    gram_substitute: bool = False
    saturating_adv: bool = False
    joint_msp_grad: bool = False
    augment_both_views: bool = False
    warm_start_bank: bool = False
    msp_pretrain_steps: int = 0

    def __post_init__(self):
        if self.iterations <= 0:
            raise ConfigError("iterations must be positive")
        if self.batch <= 0:
            raise ConfigError("batch must be positive")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.image_size <= 0 or self.image_size % 8 != 0:
            raise ConfigError("image_size must be a positive multiple of 8")
        if self.no_de and (self.mix_de or self.one_de):
            raise ConfigError("no_de excludes mix_de and one_de")
        if self.mix_de and self.one_de:
            raise ConfigError("mix_de and one_de are mutually exclusive")
        if self.msp_pretrain_steps < 0:
            raise ConfigError("msp_pretrain_steps must be >= 0")

    @property
    def discriminator_mode(self) -> str:
        if self.one_de:
            return "artistic_only"
        if self.mix_de:
            return "mixed"
        return "dual"

    def augment_spec(self) -> AugmentSpec:
        return AugmentSpec(
            scale_range=self.augment_scale,
            crop_size=self.image_size,
            rotation=self.augment_rotation,
        )

    def lr_at(self, step: int) -> float:
        return self.lr * (1.0 - step / self.iterations)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        w = d.pop("weights")
        d.update(w)
        d["augment_scale"] = list(self.augment_scale)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        weight_keys = ("lambda_adv", "lambda_cyc", "lambda_contra", "temperature")
        w = {k: d.pop(k) for k in weight_keys if k in d}
        if "augment_scale" in d:
            d["augment_scale"] = tuple(d["augment_scale"])
        known = {f.name for f in dataclasses.fields(cls)} - {"weights"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(weights=LossWeights(**w), **d)

    @classmethod
    def from_toml(cls, path) -> "TrainConfig":
        if sys.version_info >= (3, 11):
            import tomllib
        else:
            import tomli as tomllib
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        return cls.from_dict(raw.get("train", raw))


class TrainState:
    """All mutable pieces of a run: modules, optimizers, bank, rngs, step."""

    def __init__(self, config: TrainConfig, device=None, extractor: FeatureExtractor | None = None):
        self.config = config
        self.device = device or resolve_device()
        torch.manual_seed(config.seed)
        self.extractor = (extractor or FeatureExtractor(seed=config.seed)).to(self.device)
        self.extractor.freeze()
        self.projector = StyleProjector(ProjectorConfig()).to(self.device)
        self.generator = Generator().to(self.device)
        self.generator.encoder.load_backbone(self.extractor.encoder_state_dict())
        self.discriminators = DomainDiscriminators(config.discriminator_mode).to(self.device)
        self.bank = StyleBank(capacity=config.bank_capacity)
        betas = (config.beta1, config.beta2)
        self.optim_g = torch.optim.Adam(self.generator.parameters(), lr=config.lr, betas=betas)
        self.optim_d = torch.optim.Adam(self.discriminators.parameters(), lr=config.lr, betas=betas)
        self.optim_msp = torch.optim.Adam(self.projector.parameters(), lr=config.lr, betas=betas)
        self.data_rng = random.Random(config.seed)
        self.augment_rng = random.Random(config.seed + 1)
        self.step = 0

    def to_bundle(self) -> "CheckpointBundle":
        weights = {
            "extractor": self.extractor.state_dict(),
            "projector": self.projector.state_dict(),
            "generator": self.generator.state_dict(),
            "discriminators": self.discriminators.state_dict(),
            "optim_g": self.optim_g.state_dict(),
            "optim_d": self.optim_d.state_dict(),
            "optim_msp": self.optim_msp.state_dict(),
            "torch_rng": torch.get_rng_state(),
            "data_rng": self.data_rng.getstate(),
            "augment_rng": self.augment_rng.getstate(),
        }
        return CheckpointBundle(
            step=self.step,
            config=self.config,
            weights=weights,
            bank_state=self.bank.state_dict(),
        )

    @classmethod
    def from_bundle(cls, bundle: "CheckpointBundle", device=None) -> "TrainState":
        state = cls(bundle.config, device=device)
        w = bundle.weights
        state.extractor.load_state_dict(w["extractor"])
        state.extractor.freeze()
        state.projector.load_state_dict(w["projector"])
        state.generator.load_state_dict(w["generator"])
        state.discriminators.load_state_dict(w["discriminators"])
        state.optim_g.load_state_dict(w["optim_g"])
        state.optim_d.load_state_dict(w["optim_d"])
        state.optim_msp.load_state_dict(w["optim_msp"])
        torch.set_rng_state(w["torch_rng"].cpu().to(torch.uint8))
        state.data_rng.setstate(_rng_state_tuple(w["data_rng"]))
        state.augment_rng.setstate(_rng_state_tuple(w["augment_rng"]))
        state.bank = StyleBank.from_state_dict(bundle.bank_state)
        state.step = bundle.step
        return state


def _rng_state_tuple(state):
    # torch.save round-trips tuples as lists; random.setstate needs tuples.
    version, internal, gauss = state
    return (version, tuple(internal), gauss)


def _set_requires_grad(module, flag: bool):
    if module is None:
        return
    for p in module.parameters():
        p.requires_grad_(flag)


def _check_finite(name: str, value, step: int) -> float:
    scalar = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
    if not math.isfinite(scalar):
        raise NonFiniteLossError(name, step, scalar)
    return scalar


def _apply_lr(state: TrainState):
    lr = state.config.lr_at(state.step)
    for opt in (state.optim_g, state.optim_d, state.optim_msp):
        for group in opt.param_groups:
            group["lr"] = lr


def _image_ids(images: torch.Tensor) -> list[str]:
    """Content hash per image, identifying its source across steps."""
    return [
        hashlib.sha1(img.detach().cpu().numpy().tobytes()).hexdigest()
        for img in images
    ]


def _contrastive_vs_bank(state: TrainState, anchors, positives, anchor_ids) -> torch.Tensor:
    """Contrastive loss against the bank, one anchor at a time.

    Negatives are other artistic images: rows whose source id matches the
    anchor's own image are excluded, so an image is never its own negative
    (at full scale self-collisions are rare; with a small corpus the queue
    would otherwise be flooded with copies of the anchor itself).
    """
    negatives = state.bank.negatives()
    neg_ids = state.bank.negative_ids()
    tau = state.config.weights.temperature
    batch = anchors.batch_size
    total = None
    for b in range(batch):
        keep = [nid != anchor_ids[b] for nid in neg_ids]
        if all(keep):
            negs_b = negatives
        else:
            mask = torch.tensor(keep, dtype=torch.bool)
            negs_b = [n[mask] for n in negatives]
        loss_b = info_nce(
            [z[b : b + 1] for z in anchors.codes],
            [z[b : b + 1] for z in positives.codes],
            negs_b,
            tau,
        )
        total = loss_b if total is None else total + loss_b
    return total / batch


def _generate(state: TrainState, contents, styles):
    """Phase 1: conditioning codes (detached) and cross-domain generations."""
    with torch.no_grad():
        z_s = state.projector(state.extractor(styles))
        z_c = state.projector(state.extractor(contents))
    i_cs = state.generator(contents, z_s)
    i_sc = None
    if not state.config.one_de:
        i_sc = state.generator(styles, z_c)
    return z_s, z_c, i_cs, i_sc


def _discriminator_step(state: TrainState, contents, styles, i_cs, i_sc):
    """Phase 2: update discriminators on detached fakes. Returns d_loss or None."""
    cfg = state.config
    if cfg.no_de:
        return None
    disc = state.discriminators
    _set_requires_grad(disc, True)
    state.optim_d.zero_grad()
    if cfg.one_de:
        d_loss, _ = single_domain_adversarial_loss(
            disc.discriminate(styles, "artistic"),
            disc.discriminate(i_cs.detach(), "artistic"),
        )
    else:
        d_loss, _ = adversarial_loss(
            disc.discriminate(contents, "realistic"),
            disc.discriminate(i_sc.detach(), "realistic"),
            disc.discriminate(styles, "artistic"),
            disc.discriminate(i_cs.detach(), "artistic"),
        )
    _check_finite("d_loss", d_loss, state.step)
    d_loss.backward()
    state.optim_d.step()
    return d_loss


def _generator_step(state: TrainState, contents, styles, i_cs, i_sc, z_s, z_c, style_ids=None):
    """Phase 3: update the generator on the weighted total objective."""
    cfg = state.config
    if style_ids is None:
        style_ids = _image_ids(styles)
    disc = state.discriminators
    _set_requires_grad(disc, False)
    state.optim_g.zero_grad()
    state.optim_msp.zero_grad()

    if cfg.no_de:
        adv_g = 0.0
    elif cfg.one_de:
        with torch.no_grad():
            real_map = disc.discriminate(styles, "artistic")
        _, adv_g = single_domain_adversarial_loss(
            real_map, disc.discriminate(i_cs, "artistic"), cfg.saturating_adv
        )
    else:
        with torch.no_grad():
            d_r_real = disc.discriminate(contents, "realistic")
            d_a_real = disc.discriminate(styles, "artistic")
        _, adv_g = adversarial_loss(
            d_r_real,
            disc.discriminate(i_sc, "realistic"),
            d_a_real,
            disc.discriminate(i_cs, "artistic"),
            cfg.saturating_adv,
        )
    _check_finite("adv_g", adv_g, state.step)

    rec_c = state.generator(i_cs, z_c)
    if cfg.half_cycle or cfg.one_de:
        cyc = F.l1_loss(contents, rec_c)
    else:
        rec_s = state.generator(i_sc, z_s)
        cyc = cycle_loss(contents, rec_c, styles, rec_s)
    _check_finite("cyc", cyc, state.step)

    if cfg.gram_substitute:
        with torch.no_grad():
            f_style = state.extractor(styles)
        style_term = gram_style_loss(state.extractor(i_cs), f_style)
    else:
        if not cfg.joint_msp_grad:
            _set_requires_grad(state.projector, False)
        try:
            z_tilde = state.projector(state.extractor(i_cs))
            style_term = _contrastive_vs_bank(state, z_tilde, z_s, style_ids)
        finally:
            if not cfg.joint_msp_grad:
                _set_requires_grad(state.projector, True)
    _check_finite("contra_g", style_term, state.step)

    total = total_loss(adv_g, cyc, style_term, cfg.weights)
    total.backward()
    state.optim_g.step()
    if not cfg.no_de:
        _set_requires_grad(disc, True)
    return adv_g, cyc, style_term


def _projector_step(state: TrainState, styles, style_ids=None):
    """Phase 4: contrastive update of the projector on an augmented pair."""
    cfg = state.config
    if style_ids is None:
        style_ids = _image_ids(styles)
    spec = cfg.augment_spec()
    anchors, views = [], []
    for b in range(styles.shape[0]):
        sample = styles[b : b + 1]
        anchor, view = augment_pair(sample, spec, state.augment_rng)
        if cfg.augment_both_views:
            _, anchor = augment_pair(sample, spec, state.augment_rng)
        anchors.append(anchor)
        views.append(view)
    anchor_batch = torch.cat(anchors)
    view_batch = torch.cat(views)
    with torch.no_grad():
        f_anchor = state.extractor(anchor_batch)
        f_view = state.extractor(view_batch)
    z_anchor = state.projector(f_anchor)
    z_view = state.projector(f_view)
    contra = _contrastive_vs_bank(state, z_anchor, z_view, style_ids)
    _check_finite("contra_msp", contra, state.step)
    if not cfg.joint_msp_grad:
        state.optim_msp.zero_grad()
    contra.backward()
    state.optim_msp.step()
    return contra


def train_step(state: TrainState, batch) -> LossReport:
    """Run one full training step and return its loss report.

    The state is updated in place; ``report.step`` is the index of the
    executed step (learning rate ``lr0 * (1 - step/iterations)``).
    """
    contents, styles = batch
    contents = contents.to(state.device)
    styles = styles.to(state.device)
    if contents.shape[0] != state.config.batch or styles.shape[0] != state.config.batch:
        raise ValueError("batch size does not match config")
    _apply_lr(state)
    step = state.step
    style_ids = _image_ids(styles)

    if step < state.config.msp_pretrain_steps:
        contra_msp = _projector_step(state, styles, style_ids)
        with torch.no_grad():
            z_s = state.projector(state.extractor(styles))
        state.bank.push(z_s, style_ids)
        state.step += 1
        return LossReport.from_components(
            step, 0.0, 0.0, float(contra_msp.detach()), 0.0, state.config.weights
        )

    z_s, z_c, i_cs, i_sc = _generate(state, contents, styles)
    _discriminator_step(state, contents, styles, i_cs, i_sc)
    adv_g, cyc, style_term = _generator_step(
        state, contents, styles, i_cs, i_sc, z_s, z_c, style_ids
    )
    contra_msp = _projector_step(state, styles, style_ids)
    state.bank.push(z_s, style_ids)
    state.step += 1
    return LossReport.from_components(
        step,
        float(adv_g.detach()) if isinstance(adv_g, torch.Tensor) else float(adv_g),
        float(cyc.detach()),
        float(contra_msp.detach()),
        float(style_term.detach()),
        state.config.weights,
    )


@dataclass
class CheckpointBundle:
    """Everything needed to resume: parameters, optimizers, bank, rng streams."""

    step: int
    config: TrainConfig
    weights: dict
    bank_state: dict
    format_version: int = CHECKPOINT_FORMAT_VERSION

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with atomic_output(directory / "weights.pt") as tmp:
            torch.save(self.weights, tmp)
        with atomic_output(directory / "bank.pt") as tmp:
            torch.save(self.bank_state, tmp)
        manifest = {
            "format_version": self.format_version,
            "step": self.step,
            "config": self.config.to_dict(),
            "files": {
                name: hashlib.sha256((directory / name).read_bytes()).hexdigest()
                for name in ("weights.pt", "bank.pt")
            },
        }
        # Manifest goes last: its presence marks the checkpoint complete.
        with atomic_output(directory / "manifest.json") as tmp:
            tmp.write_text(json.dumps(manifest, indent=2))
        return directory

    @classmethod
    def load(cls, directory) -> "CheckpointBundle":
        directory = Path(directory)
        manifest_path = directory / "manifest.json"
        if not manifest_path.exists():
            raise CheckpointError(f"no checkpoint manifest in {directory}")
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint version {manifest.get('format_version')}"
            )
        for name, expected in manifest["files"].items():
            path = directory / name
            if not path.exists():
                raise CheckpointError(f"checkpoint file missing: {path}")
            digest = hashlib.sha256(path.read_bytes()).hexdigest()
            if digest != expected:
                raise CheckpointError(f"checkpoint file corrupt: {path}")
        weights = torch.load(directory / "weights.pt", map_location="cpu", weights_only=True)
        bank_state = torch.load(directory / "bank.pt", map_location="cpu", weights_only=True)
        return cls(
            step=manifest["step"],
            config=TrainConfig.from_dict(manifest["config"]),
            weights=weights,
            bank_state=bank_state,
        )


def _warm_start_bank(state: TrainState, artistic, size: int):
    """Fill the bank with corpus style codes before step 0 (MoCo-style warm queue)."""
    codes, ids = [], []
    with torch.no_grad():
        for entry in artistic.entries:
            img = load_image(entry.path, size).to(state.device)
            codes.append(state.projector(state.extractor(img)))
            ids.append(_image_ids(img)[0])
    i = 0
    while len(state.bank) < state.bank.capacity:
        state.bank.push(codes[i % len(codes)], [ids[i % len(ids)]])
        i += 1


def fit(
    config: TrainConfig,
    artistic,
    realistic,
    out_dir,
    resume=None,
    device=None,
    quiet: bool = True,
) -> CheckpointBundle:
    """Train for ``config.iterations`` steps, checkpointing periodically.

    ``artistic`` and ``realistic`` are corpus manifests. Writes
    ``losses.csv``, ``samples/``, and ``checkpoint-*/`` under ``out_dir``
    and returns the final bundle. With ``resume`` pointing at a checkpoint
    directory, continues the run (the loss stream picks up at the saved
    step with the matching learning rate).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if resume is not None:
        bundle = CheckpointBundle.load(resume)
        state = TrainState.from_bundle(bundle, device=device)
    else:
        state = TrainState(config, device=device)
        if config.warm_start_bank:
            _warm_start_bank(state, artistic, config.image_size)
    config = state.config

    iterator = BatchIterator(artistic, realistic, config.batch, config.image_size, seed=config.seed)
    # Single source of truth for the sampling stream: the state rng, which
    # checkpoints capture, so resumed runs continue the exact sequence.
    iterator.rng = state.data_rng

    # Preview images come from a dedicated rng so sampling them never
    # perturbs the training stream.
    preview_rng = random.Random(config.seed ^ 0x5EED)
    preview = next_batch(artistic, realistic, min(4, config.batch), preview_rng, config.image_size)

    log_path = out_dir / "losses.csv"
    while state.step < config.iterations:
        batch = next(iterator)
        report = train_step(state, batch)
        append_report_csv(log_path, report)
        if not quiet and report.step % 50 == 0:
            print(
                f"step {report.step}: total={report.total:.4f} adv={report.adv:.4f} "
                f"cyc={report.cyc:.4f} contra_g={report.contra_g:.4f}",
                flush=True,
            )
        done = state.step >= config.iterations
        if state.step % config.checkpoint_every == 0 or done:
            state.to_bundle().save(out_dir / f"checkpoint-{state.step:08d}")
        if state.step % config.sample_every == 0 or done:
            _write_samples(state, preview, out_dir / "samples" / f"step-{state.step:08d}.png")

    bundle = state.to_bundle()
    bundle.save(out_dir / "checkpoint-final")
    return bundle


def _write_samples(state: TrainState, preview, path):
    contents, styles = preview
    contents = contents.to(state.device)
    styles = styles.to(state.device)
    with torch.no_grad():
        z = state.projector(state.extractor(styles))
        outputs = state.generator(contents, z)
    grid = torch.cat([contents, styles, outputs], dim=3)  # side by side per row
    rows = torch.cat(list(grid), dim=1).unsqueeze(0)
    save_image(rows, path)
