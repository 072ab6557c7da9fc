"""Loss functions, the Dice metric and the training/evaluation loops."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .kspace import KSpaceSample
from .network.models import ModelConfig, build_model
from .phantom import CSF, GM, WM
from .seeds import derive_seed

LOSS_VARIANTS = ("ce_final", "ce_sum", "ce_plus_l2")

PROB_FLOOR = 1e-8


@dataclass
class TrainConfig:
    """Optimization schedule and loss selection."""

    loss_variant: str = "ce_final"
    learning_rate: float = 1e-4
    decay_factor: float = 0.5
    decay_every: int = 20
    max_epochs: int = 50
    batch_size: int = 12
    l2_weight: float = 1.0  # weight of the reconstruction term in ce_plus_l2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.loss_variant not in LOSS_VARIANTS:
            raise ValueError(f"unknown loss_variant {self.loss_variant!r}, "
                             f"expected one of {LOSS_VARIANTS}")
        for name in ("learning_rate", "decay_factor", "decay_every", "max_epochs",
                     "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    def lr_at(self, epoch: int) -> float:
        return self.learning_rate * self.decay_factor ** (epoch // self.decay_every)


def cross_entropy_loss(s: torch.Tensor, s_gt: torch.Tensor) -> torch.Tensor:
    """Pixel-mean cross entropy between predicted probabilities and one-hot truth.

    Probabilities are clipped to [1e-8, 1] before the log, so a perfect
    prediction scores (numerically) zero.
    """
    if s.shape != s_gt.shape:
        raise ValueError(f"shape mismatch: {tuple(s.shape)} vs {tuple(s_gt.shape)}")
    logp = torch.log(s.clamp(PROB_FLOOR, 1.0))
    return -(s_gt * logp).sum(dim=-3).mean()


def l2_loss(x: torch.Tensor, x_gt: torch.Tensor) -> torch.Tensor:
    """Euclidean norm of the stacked 2-channel difference."""
    if x.shape != x_gt.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_gt.shape)}")
    return torch.linalg.vector_norm(x - x_gt)


def _batch_l2(x: torch.Tensor, x_gt: torch.Tensor) -> torch.Tensor:
    """Mean over the batch of per-sample image norms."""
    diff = (x - x_gt).reshape(x.shape[0], -1)
    return torch.linalg.vector_norm(diff, dim=1).mean()


def composite_loss(outputs: dict, targets: dict, variant: str,
                   l2_weight: float = 1.0) -> torch.Tensor:
    """Assemble the training objective from a model's forward outputs.

    ce_final only looks at the last segmentation; ce_sum adds the cross
    entropy of every intermediate estimate; ce_plus_l2 adds a weighted
    reconstruction error of the final image against the fully-sampled one.
    """
    s_list = outputs["s_list"]
    seg_gt = targets["seg_gt"]
    if variant == "ce_final":
        return cross_entropy_loss(s_list[-1], seg_gt)
    if variant == "ce_sum":
        total = cross_entropy_loss(s_list[0], seg_gt)
        for s in s_list[1:]:
            total = total + cross_entropy_loss(s, seg_gt)
        return total
    if variant == "ce_plus_l2":
        x_full = targets.get("x_full")
        if x_full is None:
            raise ValueError("loss variant ce_plus_l2 needs the fully-sampled image; "
                             "the dataset was loaded without it")
        x_final = outputs["x_list"][-1]
        if x_final.ndim == 3:
            recon_term = l2_loss(x_final, x_full)
        else:
            recon_term = _batch_l2(x_final, x_full)
        return cross_entropy_loss(s_list[-1], seg_gt) + l2_weight * recon_term
    raise ValueError(f"unknown loss variant {variant!r}")


@dataclass
class DiceResult:
    csf: float
    gm: float
    wm: float

    @property
    def mean(self) -> float:
        return (self.csf + self.gm + self.wm) / 3.0

    def as_dict(self) -> dict:
        return {"csf": self.csf, "gm": self.gm, "wm": self.wm, "mean": self.mean}


def _to_labels(arr) -> np.ndarray:
    if isinstance(arr, torch.Tensor):
        arr = arr.detach().cpu().numpy()
    arr = np.asarray(arr)
    if arr.ndim == 3:  # probability or one-hot channels; argmax ties -> lowest class
        return np.argmax(arr, axis=0)
    return arr


def dice_scores(pred, gt) -> DiceResult:
    """Per-class Dice of the hard segmentation against the ground truth.

    Accepts probability maps, one-hot masks or label grids. Convention for
    empty classes: 1.0 when the class is absent from both, 0.0 when absent
    from exactly one.
    """
    pred_labels = _to_labels(pred)
    gt_labels = _to_labels(gt)
    if pred_labels.shape != gt_labels.shape:
        raise ValueError(f"shape mismatch: {pred_labels.shape} vs {gt_labels.shape}")
    scores = {}
    for cls in (CSF, GM, WM):
        a = pred_labels == cls
        b = gt_labels == cls
        denom = int(a.sum()) + int(b.sum())
        scores[cls] = 1.0 if denom == 0 else 2.0 * int((a & b).sum()) / denom
    return DiceResult(csf=scores[CSF], gm=scores[GM], wm=scores[WM])


def average_dice(results: list[DiceResult]) -> DiceResult:
    if not results:
        raise ValueError("no Dice results to average")
    return DiceResult(csf=float(np.mean([r.csf for r in results])),
                      gm=float(np.mean([r.gm for r in results])),
                      wm=float(np.mean([r.wm for r in results])))


def _stack_inputs(samples: list[KSpaceSample], need_x_full: bool):
    y = torch.from_numpy(np.stack([s.y for s in samples]))
    mask = torch.from_numpy(np.stack([s.mask.kept_lines.astype(np.float32)
                                      for s in samples]))
    mask = mask[:, None, None, :]  # broadcast over (channel, H) dims
    seg = torch.from_numpy(np.stack([s.seg_gt for s in samples]))
    x_full = None
    if need_x_full:
        if any(s.x_full is None for s in samples):
            raise ValueError("this run needs the fully-sampled images but the "
                             "dataset was loaded without them")
        x_full = torch.from_numpy(np.stack([s.x_full for s in samples]))
    return y, mask, seg, x_full


@dataclass
class TrainResult:
    model: torch.nn.Module
    model_config: ModelConfig
    train_config: TrainConfig
    loss_history: list[dict]
    train_dice: DiceResult
    test_dice: DiceResult | None
    x_full_used: bool

    def metrics_dict(self) -> dict:
        out = {
            "model_config": asdict(self.model_config),
            "train_config": asdict(self.train_config),
            "loss_history": self.loss_history,
            "train_dice": self.train_dice.as_dict(),
            "x_full_used": self.x_full_used,
        }
        if self.test_dice is not None:
            out["test_dice"] = self.test_dice.as_dict()
        return out


def needs_x_full(model_config: ModelConfig, train_config: TrainConfig) -> bool:
    """Whether training will read the fully-sampled images at all."""
    return (train_config.loss_variant == "ce_plus_l2"
            or model_config.model_kind == "two_step")


def evaluate_model(model, samples: list[KSpaceSample], batch_size: int = 8) -> DiceResult:
    """Per-slice Dice, averaged over the set."""
    if not samples:
        raise ValueError("empty evaluation set")
    model.eval()
    results = []
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = samples[start:start + batch_size]
            y, mask, seg, _ = _stack_inputs(chunk, need_x_full=False)
            s = model(y, mask)["s_list"][-1]
            for i, sample in enumerate(chunk):
                results.append(dice_scores(s[i], sample.labels))
    return average_dice(results)


def _run_epochs(model, params, samples, x_full_tensor, loss_fn, config: TrainConfig,
                phase: str, log, epoch_seed_tag: str):
    """One optimization phase over its own Adam instance and LR schedule."""
    optimizer = torch.optim.Adam(params, lr=config.learning_rate,
                                 betas=(config.beta1, config.beta2), eps=config.eps)
    n = len(samples)
    need_x = x_full_tensor is not None
    y, mask, seg, _ = _stack_inputs(samples, need_x_full=False)
    history = []
    for epoch in range(config.max_epochs):
        lr = config.lr_at(epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = np.random.default_rng(
            derive_seed(config.seed, epoch_seed_tag, epoch)).permutation(n)
        losses = []
        model.train()
        for start in range(0, n, config.batch_size):
            idx = torch.from_numpy(order[start:start + config.batch_size].copy())
            outputs = model(y[idx], mask[idx])
            targets = {"seg_gt": seg[idx]}
            if need_x:
                targets["x_full"] = x_full_tensor[idx]
            loss = loss_fn(outputs, targets)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))
        mean_loss = float(np.mean(losses))
        history.append({"phase": phase, "epoch": epoch, "lr": lr, "loss": mean_loss})
        if log:
            log(f"[{phase}] epoch {epoch + 1}/{config.max_epochs} "
                f"lr={lr:.2e} loss={mean_loss:.6f}")
    return history


def train_model(model_config: ModelConfig, train_config: TrainConfig,
                train_samples: list[KSpaceSample],
                test_samples: list[KSpaceSample] | None = None,
                log=None) -> TrainResult:
    """Train one model on pre-built records and evaluate it.

    The two_step kind runs two phases: the reconstruction blocks are fitted
    against the fully-sampled images first, then frozen while the segmenter
    trains on cross entropy. Every other kind trains end to end with the
    configured composite loss. ce_final and ce_sum never touch x_full.
    """
    if not train_samples:
        raise ValueError("empty training set")
    if model_config.model_kind == "two_step" and train_config.loss_variant == "ce_plus_l2":
        raise ValueError("two_step trains its reconstruction separately; "
                         "use ce_final or ce_sum for its segmentation phase")

    use_x_full = needs_x_full(model_config, train_config)
    x_full_tensor = None
    if use_x_full:
        *_, x_full_tensor = _stack_inputs(train_samples, need_x_full=True)

    model = build_model(model_config)
    history = []

    if model_config.model_kind == "two_step":
        if log:
            log("=== phase 1/2: reconstruction ===")
        recon_loss = lambda outputs, targets: _batch_l2(outputs["x_list"][-1],
                                                        targets["x_full"])
        history += _run_epochs(model, model.recon.parameters(), train_samples,
                               x_full_tensor, recon_loss, train_config,
                               "reconstruction", log, "shuffle-recon")
        for p in model.recon.parameters():
            p.requires_grad_(False)
        if log:
            log("=== phase 2/2: segmentation (reconstruction frozen) ===")
        seg_loss = lambda outputs, targets: composite_loss(
            outputs, targets, "ce_final")
        history += _run_epochs(model, model.segmenter.parameters(), train_samples,
                               None, seg_loss, train_config, "segmentation", log,
                               "shuffle-seg")
        for p in model.recon.parameters():
            p.requires_grad_(True)
    else:
        loss_fn = lambda outputs, targets: composite_loss(
            outputs, targets, train_config.loss_variant, train_config.l2_weight)
        history += _run_epochs(model, model.parameters(), train_samples,
                               x_full_tensor, loss_fn, train_config, "train", log,
                               "shuffle")

    train_dice = evaluate_model(model, train_samples)
    test_dice = evaluate_model(model, test_samples) if test_samples else None
    return TrainResult(model=model, model_config=model_config,
                       train_config=train_config, loss_history=history,
                       train_dice=train_dice, test_dice=test_dice,
                       x_full_used=use_x_full)


DICE_COLUMNS = ("CSF", "GM", "WM", "Aver.")


def format_dice_table(rows: list[tuple[str, DiceResult]], title: str = "") -> str:
    """Fixed-width table with one row per entry, columns CSF / GM / WM / Aver."""
    name_width = max([len(name) for name, _ in rows] + [len("method")])
    lines = []
    if title:
        lines.append(title)
    header = "method".ljust(name_width) + "".join(c.rjust(9) for c in DICE_COLUMNS)
    lines.append(header)
    lines.append("-" * len(header))
    for name, dice in rows:
        cells = (dice.csf, dice.gm, dice.wm, dice.mean)
        lines.append(name.ljust(name_width) + "".join(f"{c:9.4f}" for c in cells))
    return "\n".join(lines)


def write_metrics(result: TrainResult, out_dir) -> Path:
    """Emit metrics.json plus a plain-text Dice table for one run."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.json"
    metrics_path.write_text(json.dumps(result.metrics_dict(), indent=2, sort_keys=True) + "\n")
    rows = [("train", result.train_dice)]
    if result.test_dice is not None:
        rows.append(("test", result.test_dice))
    (out / "dice_table.txt").write_text(format_dice_table(rows) + "\n")
    return metrics_path
