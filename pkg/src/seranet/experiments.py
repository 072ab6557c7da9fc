"""Experiment orchestration: single runs, block-count sweeps, comparisons."""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

from .dataio import DatasetReader
from .network.checkpoint import save_checkpoint
from .network.models import ModelConfig
from .seeds import derive_seed
from .training import (DiceResult, TrainConfig, TrainResult, format_dice_table,
                       needs_x_full, train_model)

LOSS_ROW_LABELS = {"ce_plus_l2": "ce_l2", "ce_sum": "ce_sum", "ce_final": "ce"}

# Average Dice at 10% noise reported by the original publications of the
# respective methods, at full training scale (20 simulated brains). They mark
# where the methods land with far more data and compute than this package's
# toy runs use; none of them are reproduced here.
PUBLISHED_REFERENCE_BLOCK = """\
published reference values (paper-reported, not reproduced here)
  noise 10%  SERANet-7   average Dice 0.8876
  noise 10%  SegNetMRI   average Dice 0.8563
"""


def method_label(config: ModelConfig) -> str:
    if config.model_kind == "seranet":
        return f"SERANet-{config.n_blocks}"
    if config.model_kind == "one_step":
        return "One-step"
    if config.model_kind == "two_step":
        return f"Two-step-{config.n_blocks}"
    return f"Joint-{config.n_blocks}"


def run_training(data_dir, out_dir, model_config: ModelConfig,
                 train_config: TrainConfig, echo: bool = False) -> TrainResult:
    """Train one model on a dataset directory; write checkpoint, metrics, log.

    The run directory ends up with checkpoint.bin, metrics.json, dice_table.txt
    and train.log. metrics.json records which ground-truth image files were
    read, so the no-reconstruction-target property of the cross-entropy
    variants is checkable from the artifact alone.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    want_x_full = needs_x_full(model_config, train_config)
    reader = DatasetReader(data_dir, split="train", load_x_full=want_x_full)
    train_samples = reader.load_all()
    test_reader = DatasetReader(data_dir, split="test", load_x_full=False)
    test_samples = test_reader.load_all()

    log_lines: list[str] = []

    def log(msg: str):
        log_lines.append(msg)
        if echo:
            print(msg)

    log(f"dataset {Path(data_dir)}: {len(train_samples)} train / "
        f"{len(test_samples)} test records, dims {reader.dims}")
    log(f"model: {method_label(model_config)} reg_type={model_config.reg_type} "
        f"T={model_config.recurrences} loss={train_config.loss_variant}")

    result = train_model(model_config, train_config, train_samples,
                         test_samples or None, log=log)

    save_checkpoint(out / "checkpoint.bin", model_config, result.model)
    metrics = result.metrics_dict()
    metrics["dataset"] = {
        "path": str(Path(data_dir)),
        "noise_level": reader.manifest["noise_level"],
        "n_train": len(train_samples),
        "n_test": len(test_samples),
    }
    metrics["x_full_files_read"] = sorted(reader.x_full_files_read())
    metrics["method"] = method_label(model_config)
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    rows = [("train", result.train_dice)]
    if result.test_dice is not None:
        rows.append(("test", result.test_dice))
    (out / "dice_table.txt").write_text(format_dice_table(rows) + "\n")
    (out / "train.log").write_text("\n".join(log_lines) + "\n")
    return result


def sweep_block_counts(data_dir, out_dir, max_blocks: int,
                       train_config: TrainConfig, model_config: ModelConfig,
                       reg_types=("A", "B"), echo: bool = False) -> Path:
    """Average Dice as a function of reconstruction depth.

    SERANet needs at least two blocks (the attention stage consumes the
    next-to-last estimate), so its grid starts at N=2 while Two-step and
    Joint start at N=1. Emits a TSV (the artifact of record) and a line plot.
    """
    if max_blocks < 2:
        raise ValueError("max_blocks must be at least 2, got "
                         f"{max_blocks}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = []
    for reg_type in reg_types:
        for kind, start in (("two_step", 1), ("joint", 1), ("seranet", 2)):
            for n in range(start, max_blocks + 1):
                grid.append((kind, reg_type, n))

    rows = []
    for kind, reg_type, n in grid:
        run_seed = derive_seed(train_config.seed, "sweep", kind, reg_type, n)
        mc = replace(model_config, model_kind=kind, reg_type=reg_type, n_blocks=n,
                     weight_seed=run_seed)
        tc = replace(train_config, seed=run_seed)
        if kind == "two_step" and tc.loss_variant == "ce_plus_l2":
            tc = replace(tc, loss_variant="ce_final")
        run_dir = out / f"{kind}_{reg_type}_n{n}"
        if echo:
            print(f"sweep: {kind} reg_type={reg_type} n_blocks={n} -> {run_dir}")
        result = run_training(data_dir, run_dir, mc, tc, echo=False)
        dice = result.test_dice if result.test_dice is not None else result.train_dice
        rows.append({"model": kind, "reg_type": reg_type, "n_blocks": n,
                     "seed": run_seed, "dice": dice})

    table_path = out / "sweep.tsv"
    header = "model\treg_type\tn_blocks\tseed\tcsf\tgm\twm\tmean"
    lines = [header]
    for row in rows:
        d: DiceResult = row["dice"]
        lines.append(f"{row['model']}\t{row['reg_type']}\t{row['n_blocks']}\t"
                     f"{row['seed']}\t{d.csf:.6f}\t{d.gm:.6f}\t{d.wm:.6f}\t"
                     f"{d.mean:.6f}")
    table_path.write_text("\n".join(lines) + "\n")
    _plot_sweep(rows, out / "sweep.png")
    return table_path


def _plot_sweep(rows: list[dict], path: Path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    series: dict[tuple, list] = {}
    for row in rows:
        series.setdefault((row["model"], row["reg_type"]), []).append(
            (row["n_blocks"], row["dice"].mean))
    for (model, reg_type), points in sorted(series.items()):
        points.sort()
        ax.plot([p[0] for p in points], [p[1] for p in points],
                marker="o", label=f"{model} ({reg_type})")
    ax.set_xlabel("reconstruction blocks")
    ax.set_ylabel("average Dice")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def _load_run_metrics(run_dir: Path) -> dict | None:
    path = run_dir / "metrics.json"
    if not path.is_file():
        return None
    return json.loads(path.read_text())


def _metrics_dice(metrics: dict) -> DiceResult:
    block = metrics.get("test_dice") or metrics["train_dice"]
    return DiceResult(csf=block["csf"], gm=block["gm"], wm=block["wm"])


def compare_runs(run_dirs: list, out_path, mode: str = "methods") -> str:
    """Assemble completed runs into one table, grouped by noise level.

    mode="loss" labels rows by loss variant (the ablation layout:
    ce_l2 / ce_sum / ce); mode="methods" labels rows by method. Runs whose
    metrics are missing are listed above the table rather than failing the
    whole command. The published-reference block is a fixed string appended
    verbatim, so it is byte-stable no matter which runs exist.
    """
    if mode not in ("methods", "loss"):
        raise ValueError(f"unknown compare mode {mode!r}")
    missing = []
    by_noise: dict[float, list] = {}
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        metrics = _load_run_metrics(run_dir)
        if metrics is None:
            missing.append(str(run_dir))
            continue
        if mode == "loss":
            label = LOSS_ROW_LABELS[metrics["train_config"]["loss_variant"]]
        else:
            label = metrics.get("method", run_dir.name)
        noise = metrics.get("dataset", {}).get("noise_level", 0.0)
        by_noise.setdefault(noise, []).append((label, _metrics_dice(metrics)))

    sections = []
    if missing:
        sections.append("missing runs (no metrics.json):\n"
                        + "\n".join(f"  {m}" for m in missing))
    for noise in sorted(by_noise):
        title = f"noise level {noise:g}"
        sections.append(format_dice_table(by_noise[noise], title=title))
    sections.append(PUBLISHED_REFERENCE_BLOCK.rstrip("\n"))
    text = "\n\n".join(sections) + "\n"
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(text)
    return text
