import copy
import csv
import random

import pytest
import torch
import torch.nn.functional as F

from caststyle.data import next_batch
from caststyle.errors import CheckpointError, ConfigError, NonFiniteLossError
from caststyle.losses import LossWeights, gram_style_loss
from caststyle.toydata import generate_toy_corpus
from caststyle.training import (
    CheckpointBundle,
    TrainConfig,
    TrainState,
    fit,
    train_step,
)

SIZE = 32
CPU = torch.device("cpu")


@pytest.fixture(scope="module")
def corpora(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    artistic = generate_toy_corpus(root / "art", "artistic", 6, size=SIZE, seed=0)
    realistic = generate_toy_corpus(root / "real", "realistic", 6, size=SIZE, seed=1)
    return artistic, realistic


def tiny_config(**kw):
    defaults = dict(
        iterations=50, batch=2, image_size=SIZE, seed=0, bank_capacity=16,
        checkpoint_every=1000, sample_every=1000,
    )
    defaults.update(kw)
    return TrainConfig(**defaults)


def make_batch(corpora, config, seed=123):
    artistic, realistic = corpora
    return next_batch(artistic, realistic, config.batch, random.Random(seed), config.image_size)


def flat_params(module):
    return torch.cat([p.detach().reshape(-1).clone() for p in module.parameters()])


def replay_generation(state, batch):
    """Recompute the generation-phase tensors from a state snapshot.

    Pure forward passes, no rng: gives an independent expectation for the
    per-flag loss terms of the next train_step on the same batch.
    """
    contents, styles = batch
    with torch.no_grad():
        z_s = state.projector(state.extractor(styles))
        z_c = state.projector(state.extractor(contents))
        i_cs = state.generator(contents, z_s)
        rec_c = state.generator(i_cs, z_c)
        out = {"i_cs": i_cs, "rec_c": rec_c, "z_s": z_s, "z_c": z_c}
        out["cyc_half"] = float(F.l1_loss(contents, rec_c))
        if not state.config.one_de:
            i_sc = state.generator(styles, z_c)
            rec_s = state.generator(i_sc, z_s)
            out["cyc_full"] = out["cyc_half"] + float(F.l1_loss(styles, rec_s))
        out["gram"] = float(gram_style_loss(state.extractor(i_cs), state.extractor(styles)))
    return out


class TestTrainStep:
    def test_fixed_seed_reproducible(self, corpora):
        reports = []
        for _ in range(2):
            config = tiny_config()
            state = TrainState(config, device=CPU)
            batch = make_batch(corpora, config)
            reports.append([train_step(state, batch), train_step(state, batch)])
        for a, b in zip(reports[0], reports[1]):
            assert a == b

    def test_lr_schedule(self, corpora):
        config = tiny_config(iterations=10)
        state = TrainState(config, device=CPU)
        batch = make_batch(corpora, config)
        for t in range(3):
            train_step(state, batch)
            got = state.optim_g.param_groups[0]["lr"]
            assert got == pytest.approx(config.lr * (1 - t / config.iterations))

    def test_no_de_zeroes_adv_and_freezes_discriminators(self, corpora):
        config = tiny_config(no_de=True)
        state = TrainState(config, device=CPU)
        before = flat_params(state.discriminators)
        report = train_step(state, make_batch(corpora, config))
        assert report.adv == 0.0
        assert torch.equal(before, flat_params(state.discriminators))

    def test_update_isolation(self, corpora):
        from caststyle.training import _discriminator_step, _generate, _generator_step

        config = tiny_config()
        state = TrainState(config, device=CPU)
        contents, styles = make_batch(corpora, config)
        z_s, z_c, i_cs, i_sc = _generate(state, contents, styles)

        g_before = flat_params(state.generator)
        msp_before = flat_params(state.projector)
        _discriminator_step(state, contents, styles, i_cs, i_sc)
        assert torch.equal(g_before, flat_params(state.generator))
        assert torch.equal(msp_before, flat_params(state.projector))

        d_before = flat_params(state.discriminators)
        _generator_step(state, contents, styles, i_cs, i_sc, z_s, z_c)
        assert torch.equal(d_before, flat_params(state.discriminators))
        assert torch.equal(msp_before, flat_params(state.projector))

    def test_extractor_bit_identical_after_step(self, corpora):
        config = tiny_config()
        state = TrainState(config, device=CPU)
        before = flat_params(state.extractor)
        train_step(state, make_batch(corpora, config))
        assert torch.equal(before, flat_params(state.extractor))

    def test_projector_grads_zero_from_style_term(self, corpora):
        from caststyle.training import _discriminator_step, _generate, _generator_step

        config = tiny_config()
        state = TrainState(config, device=CPU)
        # Fill the bank so the style term is non-trivial.
        batch = make_batch(corpora, config)
        train_step(state, batch)
        contents, styles = make_batch(corpora, config, seed=9)
        z_s, z_c, i_cs, i_sc = _generate(state, contents, styles)
        _discriminator_step(state, contents, styles, i_cs, i_sc)
        _generator_step(state, contents, styles, i_cs, i_sc, z_s, z_c)
        for p in state.projector.parameters():
            assert p.grad is None or float(p.grad.abs().max()) == 0.0

    def test_joint_msp_grad_flows(self, corpora):
        from caststyle.training import _discriminator_step, _generate, _generator_step

        config = tiny_config(joint_msp_grad=True)
        state = TrainState(config, device=CPU)
        batch = make_batch(corpora, config)
        train_step(state, batch)
        contents, styles = make_batch(corpora, config, seed=9)
        z_s, z_c, i_cs, i_sc = _generate(state, contents, styles)
        _discriminator_step(state, contents, styles, i_cs, i_sc)
        _generator_step(state, contents, styles, i_cs, i_sc, z_s, z_c)
        grads = [p.grad.abs().sum() for p in state.projector.parameters() if p.grad is not None]
        assert grads and float(sum(grads)) > 0.0

    def test_bank_occupancy_tracks_steps(self, corpora):
        config = tiny_config(bank_capacity=7)
        state = TrainState(config, device=CPU)
        batch = make_batch(corpora, config)
        for s in range(1, 6):
            train_step(state, batch)
            assert len(state.bank) == min(s * config.batch, config.bank_capacity)

    def test_non_finite_loss_aborts_with_term_name(self, corpora):
        config = tiny_config(no_de=True)
        state = TrainState(config, device=CPU)
        with torch.no_grad():
            state.generator.to_rgb.weight[0, 0, 0, 0] = float("nan")
        with pytest.raises(NonFiniteLossError, match="cyc"):
            train_step(state, make_batch(corpora, config))

    def test_batch_size_mismatch_rejected(self, corpora):
        config = tiny_config(batch=2)
        state = TrainState(config, device=CPU)
        contents, styles = make_batch(corpora, config)
        with pytest.raises(ValueError):
            train_step(state, (contents[:1], styles[:1]))


class TestAblationFlags:
    def test_half_cycle_keeps_only_realistic_reconstruction(self, corpora):
        config = tiny_config(half_cycle=True)
        state = TrainState(config, device=CPU)
        batch = make_batch(corpora, config)
        expected = replay_generation(state, batch)
        report = train_step(state, batch)
        assert report.cyc == pytest.approx(expected["cyc_half"], abs=1e-6)

    def test_full_cycle_includes_both_terms(self, corpora):
        config = tiny_config()
        state = TrainState(config, device=CPU)
        batch = make_batch(corpora, config)
        expected = replay_generation(state, batch)
        report = train_step(state, batch)
        assert report.cyc == pytest.approx(expected["cyc_full"], abs=1e-6)
        assert expected["cyc_full"] > expected["cyc_half"]

    def test_one_de_drops_realistic_branch(self, corpora):
        config = tiny_config(one_de=True)
        state = TrainState(config, device=CPU)
        assert state.discriminators.realistic is None
        batch = make_batch(corpora, config)
        expected = replay_generation(state, batch)
        report = train_step(state, batch)
        assert report.cyc == pytest.approx(expected["cyc_half"], abs=1e-6)

    def test_mix_de_shares_one_discriminator(self, corpora):
        config = tiny_config(mix_de=True)
        state = TrainState(config, device=CPU)
        assert state.discriminators.realistic is state.discriminators.artistic
        report = train_step(state, make_batch(corpora, config))
        assert report.check_composition(config.weights)

    def test_gram_substitute_retargets_style_term(self, corpora):
        config = tiny_config(gram_substitute=True)
        state = TrainState(config, device=CPU)
        batch = make_batch(corpora, config)
        expected = replay_generation(state, batch)
        report = train_step(state, batch)
        assert report.contra_g == pytest.approx(expected["gram"], rel=1e-5)

    def test_flag_conflicts_rejected(self):
        with pytest.raises(ConfigError):
            tiny_config(no_de=True, mix_de=True)
        with pytest.raises(ConfigError):
            tiny_config(no_de=True, one_de=True)
        with pytest.raises(ConfigError):
            tiny_config(mix_de=True, one_de=True)

    def test_augment_both_views_runs(self, corpora):
        config = tiny_config(augment_both_views=True)
        state = TrainState(config, device=CPU)
        report = train_step(state, make_batch(corpora, config))
        assert report.check_composition(config.weights)

    def test_own_image_codes_excluded_from_negatives(self, corpora):
        from caststyle.training import _contrastive_vs_bank, _image_ids

        config = tiny_config()
        state = TrainState(config, device=CPU)
        contents, styles = make_batch(corpora, config)
        # One image repeated: the bank then holds codes of the anchor's own
        # image only, every negative is excluded, and the loss is the exact
        # N=0 value, zero.
        styles = styles[0:1].repeat(config.batch, 1, 1, 1)
        ids = _image_ids(styles)
        assert len(set(ids)) == 1
        with torch.no_grad():
            z_s = state.projector(state.extractor(styles))
        for _ in range(3):
            state.bank.push(z_s, ids)
        loss = _contrastive_vs_bank(state, z_s, z_s, ids)
        assert float(loss) == 0.0
        # Codes from other images do count as negatives.
        other = make_batch(corpora, config, seed=321)[1]
        with torch.no_grad():
            z_other = state.projector(state.extractor(other))
        state.bank.push(z_other, _image_ids(other))
        assert float(_contrastive_vs_bank(state, z_s, z_s, ids)) > 0.0

    def test_image_ids_stable_across_loads(self, corpora):
        from caststyle.training import _image_ids

        config = tiny_config()
        b1 = make_batch(corpora, config, seed=5)
        b2 = make_batch(corpora, config, seed=5)
        assert _image_ids(b1[1]) == _image_ids(b2[1])

    def test_msp_pretrain_steps(self, corpora):
        config = tiny_config(msp_pretrain_steps=2)
        state = TrainState(config, device=CPU)
        batch = make_batch(corpora, config)
        g_before = flat_params(state.generator)
        d_before = flat_params(state.discriminators)
        r1 = train_step(state, batch)
        r2 = train_step(state, batch)
        assert (r1.adv, r1.cyc, r1.contra_g) == (0.0, 0.0, 0.0)
        assert torch.equal(g_before, flat_params(state.generator))
        assert torch.equal(d_before, flat_params(state.discriminators))
        assert len(state.bank) == 2 * config.batch
        r3 = train_step(state, batch)
        assert r3.cyc > 0.0
        assert not torch.equal(g_before, flat_params(state.generator))
        assert r2.step == 1 and r3.step == 2


class TestCheckpoint:
    def test_round_trip_stylize_bit_identical(self, corpora, tmp_path):
        config = tiny_config()
        state = TrainState(config, device=CPU)
        batch = make_batch(corpora, config)
        train_step(state, batch)
        contents, styles = make_batch(corpora, config, seed=77)
        with torch.no_grad():
            code = state.projector(state.extractor(styles))
            before = state.generator(contents, code)
        state.to_bundle().save(tmp_path / "ckpt")
        restored = TrainState.from_bundle(CheckpointBundle.load(tmp_path / "ckpt"), device=CPU)
        with torch.no_grad():
            code2 = restored.projector(restored.extractor(styles))
            after = restored.generator(contents, code2)
        assert torch.equal(before, after)
        assert len(restored.bank) == len(state.bank)

    def test_resume_continues_loss_stream_exactly(self, corpora, tmp_path):
        artistic, realistic = corpora

        def run(n_steps, state):
            iterator_rng = state.data_rng
            reports = []
            for _ in range(n_steps):
                batch = next_batch(artistic, realistic, state.config.batch,
                                   iterator_rng, state.config.image_size)
                reports.append(train_step(state, batch))
            return reports

        config = tiny_config(iterations=6)
        straight = run(6, TrainState(config, device=CPU))

        state = TrainState(config, device=CPU)
        first = run(3, state)
        state.to_bundle().save(tmp_path / "mid")
        resumed_state = TrainState.from_bundle(CheckpointBundle.load(tmp_path / "mid"), device=CPU)
        rest = run(3, resumed_state)

        assert first + rest == straight
        assert rest[0].step == 3

    def test_corrupt_checkpoint_rejected(self, corpora, tmp_path):
        config = tiny_config()
        state = TrainState(config, device=CPU)
        state.to_bundle().save(tmp_path / "ckpt")
        (tmp_path / "ckpt" / "bank.pt").write_bytes(b"garbage")
        with pytest.raises(CheckpointError):
            CheckpointBundle.load(tmp_path / "ckpt")

    def test_missing_checkpoint_rejected(self, tmp_path):
        with pytest.raises(CheckpointError):
            CheckpointBundle.load(tmp_path / "nope")


class TestFit:
    def test_short_run_produces_log_and_bundle(self, corpora, tmp_path):
        artistic, realistic = corpora
        config = tiny_config(iterations=4)
        bundle = fit(config, artistic, realistic, tmp_path / "run")
        assert bundle.step == 4
        with open(tmp_path / "run" / "losses.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 4
        assert [int(r["step"]) for r in rows] == [0, 1, 2, 3]
        assert (tmp_path / "run" / "checkpoint-final" / "manifest.json").exists()

    def test_fit_resume_matches_uninterrupted(self, corpora, tmp_path):
        artistic, realistic = corpora
        config = tiny_config(iterations=4, checkpoint_every=2)
        fit(config, artistic, realistic, tmp_path / "full")
        fit(config, artistic, realistic, tmp_path / "part")
        resumed_dir = tmp_path / "resumed"
        fit(config, artistic, realistic, resumed_dir,
            resume=tmp_path / "part" / "checkpoint-00000002")
        with open(tmp_path / "full" / "losses.csv") as fh:
            full_rows = list(csv.DictReader(fh))
        with open(resumed_dir / "losses.csv") as fh:
            resumed_rows = list(csv.DictReader(fh))
        assert resumed_rows == full_rows[2:]

    def test_warm_start_bank_fills_to_capacity(self, corpora, tmp_path):
        artistic, realistic = corpora
        config = tiny_config(iterations=1, bank_capacity=20, warm_start_bank=True)
        state_dir = tmp_path / "warm"
        bundle = fit(config, artistic, realistic, state_dir)
        from caststyle.bank import StyleBank

        bank = StyleBank.from_state_dict(bundle.bank_state)
        assert len(bank) == 20


class TestTrainConfig:
    def test_toml_round_trip(self, tmp_path):
        path = tmp_path / "config.toml"
        path.write_text(
            "\n".join(
                [
                    "[train]",
                    "iterations = 100",
                    "batch = 2",
                    "image_size = 32",
                    "lambda_cyc = 3.5",
                    "temperature = 0.05",
                    "no_de = true",
                    'augment_scale = [1.0, 1.1]',
                ]
            )
        )
        config = TrainConfig.from_toml(path)
        assert config.iterations == 100
        assert config.weights.lambda_cyc == 3.5
        assert config.weights.temperature == 0.05
        assert config.no_de
        assert config.augment_scale == (1.0, 1.1)
        rebuilt = TrainConfig.from_dict(config.to_dict())
        assert rebuilt == config

    def test_unknown_field_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig.from_dict({"warp_speed": 9})

    def test_basic_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(iterations=0)
        with pytest.raises(ConfigError):
            TrainConfig(image_size=30)
        with pytest.raises(ConfigError):
            TrainConfig(batch=0)

    def test_lr_at(self):
        config = TrainConfig(iterations=100, lr=1e-3)
        assert config.lr_at(0) == 1e-3
        assert config.lr_at(50) == pytest.approx(5e-4)
