import json

import pytest
from PIL import Image

from caststyle.cli import main
from caststyle.toydata import generate_toy_corpus
from caststyle.training import TrainConfig, TrainState, fit


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Toy corpora plus a 2-step checkpoint for inference commands."""
    root = tmp_path_factory.mktemp("cli")
    artistic = generate_toy_corpus(root / "art", "artistic", 6, size=32, seed=0)
    realistic = generate_toy_corpus(root / "real", "realistic", 6, size=32, seed=1)
    config = TrainConfig(iterations=2, batch=2, image_size=32, seed=0, bank_capacity=16,
                         checkpoint_every=100, sample_every=100)
    fit(config, artistic, realistic, root / "run")
    return {
        "root": root,
        "art": root / "art",
        "real": root / "real",
        "ckpt": root / "run" / "checkpoint-final",
        "content": realistic.entries[0].path,
        "style": artistic.entries[0].path,
    }


class TestStylizeCommand:
    def test_writes_png_with_content_dimensions(self, workspace, tmp_path):
        out = tmp_path / "out.png"
        rc = main([
            "stylize", "--ckpt", str(workspace["ckpt"]),
            "--content", str(workspace["content"]), "--style", str(workspace["style"]),
            "--out", str(out), "--style-size", "32",
        ])
        assert rc == 0
        with Image.open(out) as img:
            assert img.size == (32, 32)

    def test_missing_ckpt_flag_is_usage_error(self, workspace, capsys):
        rc = main([
            "stylize", "--content", str(workspace["content"]),
            "--style", str(workspace["style"]), "--out", "x.png",
        ])
        assert rc == 1
        assert "usage" in capsys.readouterr().err

    def test_bad_content_is_runtime_error_without_partial_output(self, workspace, tmp_path):
        out = tmp_path / "never.png"
        rc = main([
            "stylize", "--ckpt", str(workspace["ckpt"]),
            "--content", str(tmp_path / "missing.png"), "--style", str(workspace["style"]),
            "--out", str(out), "--style-size", "32",
        ])
        assert rc == 2
        assert not out.exists()

    def test_unreadable_checkpoint_is_runtime_error(self, workspace, tmp_path):
        rc = main([
            "stylize", "--ckpt", str(tmp_path / "nope"),
            "--content", str(workspace["content"]), "--style", str(workspace["style"]),
            "--out", str(tmp_path / "out.png"), "--style-size", "32",
        ])
        assert rc == 2


class TestEvaluateCommand:
    def test_report_schema(self, workspace, tmp_path):
        pairs = [
            {"content": "real/scene_0000.png", "style": "art/warm_wash/warm_wash_0000.png",
             "target_label": "warm_wash"},
            {"content": "real/scene_0001.png", "style": "art/cool_stripes/cool_stripes_0001.png",
             "target_label": "cool_stripes"},
        ]
        pairs_path = workspace["root"] / "pairs.json"
        pairs_path.write_text(json.dumps(pairs))
        report_path = tmp_path / "report.json"
        rc = main([
            "evaluate", "--ckpt", str(workspace["ckpt"]), "--pairs", str(pairs_path),
            "--report", str(report_path), "--size", "32",
            "--style-corpus", str(workspace["art"]), "--classifier-epochs", "30",
        ])
        assert rc == 0
        data = json.loads(report_path.read_text())
        assert set(data) == {"content_loss", "perceptual_pair_distance", "deception_rate", "n"}
        assert data["n"] == 2
        assert data["content_loss"] > 0
        assert 0.0 <= data["deception_rate"] <= 1.0

    def test_without_classifier_rate_is_null(self, workspace, tmp_path):
        pairs_path = workspace["root"] / "pairs2.json"
        pairs_path.write_text(json.dumps(
            [{"content": "real/scene_0000.png", "style": "art/warm_wash/warm_wash_0000.png"}]
        ))
        report_path = tmp_path / "report2.json"
        rc = main([
            "evaluate", "--ckpt", str(workspace["ckpt"]), "--pairs", str(pairs_path),
            "--report", str(report_path), "--size", "32",
        ])
        assert rc == 0
        assert json.loads(report_path.read_text())["deception_rate"] is None


class TestTrainCommand:
    def test_tiny_train_run(self, workspace, tmp_path):
        config_path = tmp_path / "train.toml"
        config_path.write_text(
            "[train]\niterations = 2\nbatch = 2\nimage_size = 32\n"
            "bank_capacity = 16\ncheckpoint_every = 100\nsample_every = 100\n"
        )
        out_dir = tmp_path / "run"
        rc = main([
            "train", "--config", str(config_path), "--art-dir", str(workspace["art"]),
            "--real-dir", str(workspace["real"]), "--out-dir", str(out_dir), "--quiet",
        ])
        assert rc == 0
        assert (out_dir / "losses.csv").exists()
        assert (out_dir / "checkpoint-final" / "manifest.json").exists()

    def test_missing_corpus_is_runtime_error(self, tmp_path):
        rc = main([
            "train", "--art-dir", str(tmp_path / "nope"), "--real-dir", str(tmp_path / "nope2"),
            "--out-dir", str(tmp_path / "run"),
        ])
        assert rc == 2


class TestBankInspectCommand:
    def test_prints_occupancy(self, workspace, capsys):
        rc = main(["bank-inspect", "--ckpt", str(workspace["ckpt"])])
        assert rc == 0
        out = capsys.readouterr().out
        assert "occupancy: 4/16" in out
        assert "nearest-neighbor" in out

    def test_unknown_subcommand_is_usage_error(self, capsys):
        assert main(["paint"]) == 1
