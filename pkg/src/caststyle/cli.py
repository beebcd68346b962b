"""Command-line entry points: train, stylize, evaluate, bank-inspect.

Exit codes: 0 success, 1 usage error, 2 runtime error. Failure paths never
leave partial output files behind (all writes are atomic).
"""

import argparse
import json
import sys
from pathlib import Path

import torch
from PIL import Image

from . import evaluation
from .bank import StyleBank
from .data import CorpusManifest, load_image, save_image
from .errors import CastError, ImageDecodeError
from .networks import stylize_from_image
from .runtime import resolve_device
from .training import CheckpointBundle, TrainConfig, TrainState, fit

USAGE_EXIT = 1
RUNTIME_EXIT = 2


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; remap to the documented code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)


def _load_manifest(directory, domain: str) -> CorpusManifest:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if manifest_path.exists():
        return CorpusManifest.load(manifest_path)
    return CorpusManifest.from_directory(directory, domain)


def _load_networks(ckpt_dir, device):
    bundle = CheckpointBundle.load(ckpt_dir)
    state = TrainState.from_bundle(bundle, device=device)
    state.generator.eval()
    state.projector.eval()
    return state


def _cmd_train(args) -> int:
    config = TrainConfig.from_toml(args.config) if args.config else TrainConfig()
    overrides = {}
    if args.iterations is not None:
        overrides["iterations"] = args.iterations
    if args.image_size is not None:
        overrides["image_size"] = args.image_size
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.msp_pretrain_steps is not None:
        overrides["msp_pretrain_steps"] = args.msp_pretrain_steps
    if overrides:
        config = TrainConfig.from_dict({**config.to_dict(), **overrides})
    artistic = _load_manifest(args.art_dir, "artistic")
    realistic = _load_manifest(args.real_dir, "realistic")
    bundle = fit(
        config, artistic, realistic, args.out_dir, resume=args.resume, quiet=args.quiet
    )
    print(f"finished at step {bundle.step}; checkpoints under {args.out_dir}")
    return 0


def _cmd_stylize(args) -> int:
    device = resolve_device()
    state = _load_networks(args.ckpt, device)
    size = args.size
    if size is not None:
        content = load_image(args.content, size)
    else:
        # Preserve the content's dimensions, cropped down to multiples of 8.
        content = _load_native(args.content)
    style = load_image(args.style, args.style_size)
    with torch.no_grad():
        out = stylize_from_image(
            content.to(device), style.to(device), state.extractor, state.projector, state.generator
        )
    save_image(out, args.out)
    print(f"wrote {args.out}")
    return 0


def _load_native(path) -> torch.Tensor:
    """Load at native resolution, center-cropped to multiples of 8 per side."""
    import numpy as np

    try:
        with Image.open(path) as img:
            img.load()
            img = img.convert("RGB")
    except (OSError, SyntaxError, ValueError) as e:
        raise ImageDecodeError(f"cannot decode image {path}: {e}") from e
    t = torch.from_numpy(np.asarray(img).copy()).float().permute(2, 0, 1).unsqueeze(0) / 255.0
    h, w = t.shape[2], t.shape[3]
    ch, cw = h - h % 8, w - w % 8
    if ch < 8 or cw < 8:
        raise ValueError(f"image {path} too small to stylize")
    top, left = (h - ch) // 2, (w - cw) // 2
    return t[:, :, top : top + ch, left : left + cw] * 2.0 - 1.0


def _cmd_evaluate(args) -> int:
    device = resolve_device()
    state = _load_networks(args.ckpt, device)
    pairs_path = Path(args.pairs)
    pairs = json.loads(pairs_path.read_text())
    if not isinstance(pairs, list):
        raise ValueError("pair manifest must be a JSON list")
    base = pairs_path.parent
    for pair in pairs:
        pair["content"] = base / pair["content"]
        pair["style"] = base / pair["style"]
    classifier = None
    if args.style_corpus:
        labeled = _load_manifest(args.style_corpus, "artistic")
        clf_config = evaluation.StyleClassifierConfig(
            classes=labeled.labels, epochs=args.classifier_epochs
        )
        classifier, accuracy = evaluation.train_style_classifier(
            state.extractor, labeled, clf_config, size=args.size
        )
        print(f"style classifier held-out accuracy: {accuracy:.3f}")
    report = evaluation.evaluate_pairs(
        state.extractor, state.projector, state.generator, pairs,
        size=args.size, classifier=classifier,
    )
    report.save(args.report)
    print(json.dumps(report.to_json(), indent=2))
    return 0


def _cmd_bank_inspect(args) -> int:
    bundle = CheckpointBundle.load(args.ckpt)
    bank = StyleBank.from_state_dict(bundle.bank_state)
    print(f"bank occupancy: {len(bank)}/{bank.capacity}")
    if len(bank) >= 2:
        for layer, matrix in enumerate(bank.negatives()):
            sims = matrix @ matrix.T
            sims.fill_diagonal_(-2.0)
            i, j = divmod(int(sims.argmax()), sims.shape[1])
            print(
                f"layer {layer + 1}: dim {matrix.shape[1]}, "
                f"nearest-neighbor pair ({i}, {j}) similarity {sims[i, j]:.4f}"
            )
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="caststyle", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train on artistic/realistic corpora")
    p_train.add_argument("--config", help="TOML config file")
    p_train.add_argument("--art-dir", required=True, help="artistic corpus directory")
    p_train.add_argument("--real-dir", required=True, help="realistic corpus directory")
    p_train.add_argument("--out-dir", default="cast_run", help="output directory")
    p_train.add_argument("--resume", help="checkpoint directory to resume from")
    p_train.add_argument("--iterations", type=int)
    p_train.add_argument("--image-size", type=int)
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--msp-pretrain-steps", type=int, dest="msp_pretrain_steps")
    p_train.add_argument("--quiet", action="store_true")
    p_train.set_defaults(func=_cmd_train)

    p_sty = sub.add_parser("stylize", help="stylize one content image")
    p_sty.add_argument("--ckpt", required=True)
    p_sty.add_argument("--content", required=True)
    p_sty.add_argument("--style", required=True)
    p_sty.add_argument("--out", required=True)
    p_sty.add_argument("--size", type=int, help="force square content size")
    p_sty.add_argument("--style-size", type=int, default=256)
    p_sty.set_defaults(func=_cmd_stylize)

    p_eval = sub.add_parser("evaluate", help="metrics over a pair manifest")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--pairs", required=True, help="JSON list of {content, style, target_label?}")
    p_eval.add_argument("--report", required=True, help="output JSON path")
    p_eval.add_argument("--size", type=int, default=256)
    p_eval.add_argument("--style-corpus", help="labeled corpus to train the deception classifier")
    p_eval.add_argument("--classifier-epochs", type=int, default=200)
    p_eval.set_defaults(func=_cmd_evaluate)

    p_bank = sub.add_parser("bank-inspect", help="print memory bank statistics")
    p_bank.add_argument("--ckpt", required=True)
    p_bank.add_argument("--top", type=int, default=3)
    p_bank.set_defaults(func=_cmd_bank_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (CastError, ValueError, OSError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
