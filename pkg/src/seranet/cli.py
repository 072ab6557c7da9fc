"""Command-line interface.

Subcommands: gen-data, train, eval, sweep-blocks, compare. Exit codes:
0 success, 2 usage error (bad flags, refused overwrite), 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .dataio import DatasetReader, write_dataset
from .experiments import compare_runs, method_label, run_training, sweep_block_counts
from .kspace import build_dataset
from .network.checkpoint import load_model
from .network.models import ATTENTION_INPUTS, REG_TYPES
from .phantom import DEFAULT_TISSUES, load_tissue_table
from .seeds import derive_seed
from .training import (TrainConfig, average_dice, dice_scores,
                       format_dice_table)

MODEL_NAMES = {"seranet": "seranet", "onestep": "one_step",
               "twostep": "two_step", "joint": "joint"}
LOSS_NAMES = {"ce": "ce_final", "ce_sum": "ce_sum", "ce_l2": "ce_plus_l2"}

# Defaults for `train`; an optional JSON config file may override any of
# these, and explicitly-passed flags override the file in turn.
TRAIN_DEFAULTS = {
    "model": "seranet",
    "reg_type": "A",
    "blocks": 2,
    "T": 2,
    "loss": "ce",
    "epochs": 50,
    "batch_size": 12,
    "lr": 1e-4,
    "decay_every": 20,
    "decay_factor": 0.5,
    "l2_weight": 1.0,
    "reg_channels": 64,
    "unet_base": 32,
    "lstm_hidden": 64,
    "attention_input": "fixed_n_minus_1",
    "seed": 0,
}


class UsageError(Exception):
    """Bad flag combination; reported before any compute starts."""


def _require_empty(path: Path, force: bool, what: str = "output directory"):
    if path.exists():
        occupied = path.is_file() or any(path.iterdir())
        if occupied and not force:
            raise UsageError(f"{what} {path} already has content; "
                             "pass --force to overwrite")


def _add_common(parser):
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--force", action="store_true",
                        help="allow writing into a non-empty output location")


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    _require_empty(out, args.force)
    tissue_table = DEFAULT_TISSUES
    if args.tissues:
        tissue_table = load_tissue_table(args.tissues)
    samples = build_dataset(
        n_brains=args.brains, slices_per_brain=args.slices,
        dims=(args.height, args.width), rate=args.rate,
        center_lines=args.center_lines, noise_level=args.noise,
        seed=args.seed, n_test_brains=args.test_brains,
        tissue_table=tissue_table)
    params = {
        "brains": args.brains, "test_brains": args.test_brains,
        "slices": args.slices, "height": args.height, "width": args.width,
        "rate": args.rate, "center_lines": args.center_lines,
        "noise": args.noise, "seed": args.seed,
    }
    write_dataset(samples, out, params=params)
    n_train = sum(1 for s in samples if s.meta.split == "train")
    n_test = len(samples) - n_train
    print(f"wrote {len(samples)} records to {out}: "
          f"{n_train} training, {n_test} test")
    return 0


def _resolve_train_settings(args) -> dict:
    settings = dict(TRAIN_DEFAULTS)
    if args.config:
        cfg_path = Path(args.config)
        if not cfg_path.is_file():
            raise UsageError(f"config file {cfg_path} not found")
        file_cfg = json.loads(cfg_path.read_text())
        unknown = sorted(set(file_cfg) - set(TRAIN_DEFAULTS))
        if unknown:
            raise UsageError(f"unknown keys in {cfg_path}: {', '.join(unknown)}")
        settings.update(file_cfg)
    for key in TRAIN_DEFAULTS:  # flags win over the config file
        value = getattr(args, key)
        if value is not None:
            settings[key] = value
    return settings


def _build_configs(settings: dict):
    from .network.models import ModelConfig

    if settings["model"] not in MODEL_NAMES:
        raise UsageError(f"unknown model {settings['model']!r}; "
                         f"choose from {', '.join(MODEL_NAMES)}")
    if settings["loss"] not in LOSS_NAMES:
        raise UsageError(f"unknown loss {settings['loss']!r}; "
                         f"choose from {', '.join(LOSS_NAMES)}")
    kind = MODEL_NAMES[settings["model"]]
    try:
        model_config = ModelConfig(
            model_kind=kind,
            reg_type=settings["reg_type"],
            n_blocks=settings["blocks"],
            recurrences=settings["T"],
            reg_channels=settings["reg_channels"],
            unet_base_channels=settings["unet_base"],
            lstm_hidden_channels=settings["lstm_hidden"],
            attention_input=settings["attention_input"],
            weight_seed=derive_seed(settings["seed"], "weights"),
        )
        train_config = TrainConfig(
            loss_variant=LOSS_NAMES[settings["loss"]],
            learning_rate=settings["lr"],
            decay_factor=settings["decay_factor"],
            decay_every=settings["decay_every"],
            max_epochs=settings["epochs"],
            batch_size=settings["batch_size"],
            l2_weight=settings["l2_weight"],
            seed=settings["seed"],
        )
    except ValueError as exc:  # config invariants violated -> usage, not crash
        raise UsageError(str(exc)) from exc
    if kind == "two_step" and train_config.loss_variant == "ce_plus_l2":
        raise UsageError("twostep trains reconstruction and segmentation in "
                         "separate phases; --loss ce_l2 does not apply")
    return model_config, train_config


def cmd_train(args) -> int:
    settings = _resolve_train_settings(args)
    model_config, train_config = _build_configs(settings)
    out = Path(args.out)
    _require_empty(out, args.force)
    if not (Path(args.data) / "manifest.json").is_file():
        raise UsageError(f"no dataset at {args.data}")
    result = run_training(args.data, out, model_config, train_config, echo=True)
    rows = [("train", result.train_dice)]
    if result.test_dice is not None:
        rows.append(("test", result.test_dice))
    print(format_dice_table(rows))
    print(f"run artifacts in {out}")
    return 0


# Overlay colors for the dumped segmentations, one per foreground class.
CLASS_COLORS = {1: (170, 80, 220), 2: (245, 160, 40), 3: (255, 255, 255)}


def _to_uint8(img: np.ndarray) -> np.ndarray:
    peak = float(img.max())
    if peak <= 0:
        return np.zeros(img.shape, dtype=np.uint8)
    return np.clip(img / peak * 255.0, 0, 255).astype(np.uint8)


def _dump_images(out_dir: Path, record_id: str, x: np.ndarray, labels: np.ndarray):
    from PIL import Image

    magnitude = np.hypot(x[0], x[1])
    gray = _to_uint8(magnitude)
    Image.fromarray(gray, mode="L").save(out_dir / f"{record_id}_recon.png")
    overlay = np.stack([gray, gray, gray], axis=-1)
    for cls, color in CLASS_COLORS.items():
        overlay[labels == cls] = color
    Image.fromarray(overlay, mode="RGB").save(out_dir / f"{record_id}_seg.png")


def _check_checkpoint_flags(args, config) -> None:
    """Flags passed to eval must agree with what the checkpoint stores."""
    expectations = []
    if args.model is not None:
        expectations.append(("model_kind", MODEL_NAMES.get(args.model, args.model),
                             config.model_kind))
    if args.blocks is not None:
        expectations.append(("n_blocks", args.blocks, config.n_blocks))
    if args.T is not None:
        expectations.append(("recurrences", args.T, config.recurrences))
    if args.reg_type is not None:
        expectations.append(("reg_type", args.reg_type, config.reg_type))
    mismatched = [f"{name} (flag {flag!r}, checkpoint {stored!r})"
                  for name, flag, stored in expectations if flag != stored]
    if mismatched:
        raise UsageError("checkpoint disagrees with flags: " + "; ".join(mismatched))


def cmd_eval(args) -> int:
    import torch

    ckpt_path = Path(args.checkpoint)
    if ckpt_path.is_dir():
        ckpt_path = ckpt_path / "checkpoint.bin"
    if not ckpt_path.is_file():
        raise UsageError(f"no checkpoint at {ckpt_path}")
    config, model = load_model(ckpt_path)
    _check_checkpoint_flags(args, config)

    reader = DatasetReader(args.data, split=args.split, load_x_full=False)
    samples = reader.load_all()
    if not samples:
        raise UsageError(f"dataset {args.data} has no records in "
                         f"split {args.split!r}")

    per_slice = []
    dumped = 0
    out = Path(args.out) if args.out else None
    image_dir = None
    if args.dump_images:
        if out is None:
            raise UsageError("--dump-images needs --out")
        image_dir = out / "images"
    if out is not None:
        _require_empty(out, args.force)
        out.mkdir(parents=True, exist_ok=True)
    if image_dir is not None:
        image_dir.mkdir(parents=True, exist_ok=True)

    with torch.no_grad():
        for sample in samples:
            y = torch.from_numpy(sample.y).unsqueeze(0)
            mask = torch.from_numpy(
                sample.mask.kept_lines.astype(np.float32))[None, None, None, :]
            outputs = model(y, mask)
            s = outputs["s_list"][-1][0]
            per_slice.append(dice_scores(s, sample.labels))
            if image_dir is not None:
                pred = np.argmax(s.numpy(), axis=0).astype(np.uint8)
                x = outputs["x_list"][-1][0].numpy()
                _dump_images(image_dir, sample.meta.record_id, x, pred)
                dumped += 1

    dice = average_dice(per_slice)
    label = f"{method_label(config)} [{args.split}]"
    table = format_dice_table([(label, dice)])
    print(table)
    if out is not None:
        (out / "dice_table.txt").write_text(table + "\n")
        (out / "metrics.json").write_text(json.dumps({
            "checkpoint": str(ckpt_path), "split": args.split,
            "n_slices": len(samples), "dice": dice.as_dict(),
        }, indent=2, sort_keys=True) + "\n")
    if dumped:
        print(f"wrote {dumped} image pairs to {image_dir}")
    return 0


def cmd_sweep_blocks(args) -> int:
    out = Path(args.out)
    _require_empty(out, args.force)
    if not (Path(args.data) / "manifest.json").is_file():
        raise UsageError(f"no dataset at {args.data}")
    reg_types = tuple(t.strip() for t in args.reg_types.split(",") if t.strip())
    for t in reg_types:
        if t not in REG_TYPES:
            raise UsageError(f"unknown reg type {t!r}")
    from .network.models import ModelConfig

    try:
        base_model = ModelConfig(
            model_kind="seranet", reg_type=reg_types[0], n_blocks=2,
            recurrences=args.T, reg_channels=args.reg_channels,
            unet_base_channels=args.unet_base,
            lstm_hidden_channels=args.lstm_hidden)
        train_config = TrainConfig(
            loss_variant=LOSS_NAMES[args.loss], learning_rate=args.lr,
            max_epochs=args.epochs, batch_size=args.batch_size, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    table_path = sweep_block_counts(args.data, out, args.max_blocks,
                                    train_config, base_model,
                                    reg_types=reg_types, echo=True)
    print(f"sweep table: {table_path}")
    print(table_path.read_text().rstrip("\n"))
    return 0


def cmd_compare(args) -> int:
    out = Path(args.out)
    _require_empty(out, args.force, what="output file")
    text = compare_runs(args.runs, out, mode=args.mode)
    print(text.rstrip("\n"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seranet",
        description="Brain tissue segmentation from under-sampled k-space: "
                    "data synthesis, training, evaluation and comparisons.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthesize a phantom k-space dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--brains", type=int, default=17,
                   help="number of training brains")
    p.add_argument("--test-brains", type=int, default=3)
    p.add_argument("--slices", type=int, default=57, help="slices per brain")
    p.add_argument("--height", type=int, default=180)
    p.add_argument("--width", type=int, default=216)
    p.add_argument("--rate", type=float, default=0.3,
                   help="fraction of phase-encode lines kept")
    p.add_argument("--center-lines", type=int, default=16)
    p.add_argument("--noise", type=float, default=0.1,
                   help="noise level relative to k-space RMS")
    p.add_argument("--tissues", default=None,
                   help="JSON tissue table overriding the built-in T1/T2/PD values")
    _add_common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None,
                   help="JSON file with defaults; explicit flags win")
    p.add_argument("--model", choices=sorted(MODEL_NAMES), default=None)
    p.add_argument("--reg-type", dest="reg_type", choices=REG_TYPES, default=None)
    p.add_argument("--blocks", type=int, default=None,
                   help="number of reconstruction blocks N")
    p.add_argument("--T", type=int, default=None,
                   help="number of attention recurrences")
    p.add_argument("--loss", choices=sorted(LOSS_NAMES), default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--decay-every", dest="decay_every", type=int, default=None)
    p.add_argument("--decay-factor", dest="decay_factor", type=float, default=None)
    p.add_argument("--l2-weight", dest="l2_weight", type=float, default=None)
    p.add_argument("--reg-channels", dest="reg_channels", type=int, default=None)
    p.add_argument("--unet-base", dest="unet_base", type=int, default=None)
    p.add_argument("--lstm-hidden", dest="lstm_hidden", type=int, default=None)
    p.add_argument("--attention-input", dest="attention_input",
                   choices=ATTENTION_INPUTS, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True,
                   help="checkpoint file or run directory")
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--out", default=None,
                   help="directory for the metrics table (optional)")
    p.add_argument("--dump-images", action="store_true",
                   help="write magnitude and colorized segmentation PNGs")
    p.add_argument("--model", choices=sorted(MODEL_NAMES), default=None,
                   help="assert the checkpoint holds this model kind")
    p.add_argument("--blocks", type=int, default=None)
    p.add_argument("--T", type=int, default=None)
    p.add_argument("--reg-type", dest="reg_type", choices=REG_TYPES, default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-blocks",
                       help="train over a grid of block counts and plot Dice vs N")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-blocks", dest="max_blocks", type=int, default=4)
    p.add_argument("--reg-types", dest="reg_types", default="A,B",
                   help="comma-separated subset of A,B")
    p.add_argument("--T", type=int, default=2)
    p.add_argument("--loss", choices=sorted(LOSS_NAMES), default="ce")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=12)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--reg-channels", dest="reg_channels", type=int, default=64)
    p.add_argument("--unet-base", dest="unet_base", type=int, default=32)
    p.add_argument("--lstm-hidden", dest="lstm_hidden", type=int, default=64)
    _add_common(p)
    p.set_defaults(func=cmd_sweep_blocks)

    p = sub.add_parser("compare", help="tabulate completed runs side by side")
    p.add_argument("--runs", nargs="+", required=True,
                   help="run directories containing metrics.json")
    p.add_argument("--mode", choices=("methods", "loss"), default="methods")
    p.add_argument("--out", required=True, help="path of the emitted table")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the usage message
        code = exc.code
        return code if isinstance(code, int) else 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        raise
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
