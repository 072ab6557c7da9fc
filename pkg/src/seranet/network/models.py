"""Model assemblies: unrolled reconstruction, recurrent attention
segmentation and the baseline variants, plus deterministic weight
initialization.

Submodules keep stable names (``recon``, ``attreg``, ``segmenter``) and the
initializer seeds every parameter from (weight_seed, parameter name), so
two models built with the same seed share bit-identical weights on their
common submodules. That makes "same weights" comparisons across model
kinds exact rather than approximate.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from ..kspace import data_consistency, zero_fill
from .blocks import make_reg_block
from .segmenter import PaddedSegmenter, RecurrentUNet

MODEL_KINDS = ("seranet", "one_step", "two_step", "joint")
REG_TYPES = ("A", "B")
ATTENTION_INPUTS = ("fixed_n_minus_1", "previous_x")

NORMALIZATION_TOL = 1e-3


@dataclass
class ModelConfig:
    """Architecture choices for one model instance."""

    model_kind: str = "seranet"
    reg_type: str = "A"
    n_blocks: int = 2
    recurrences: int = 2  # T: extra segmentation passes after the initial one
    reg_channels: int = 64
    unet_base_channels: int = 32
    lstm_hidden_channels: int = 64
    classes: int = 4
    attention_input: str = "fixed_n_minus_1"
    weight_seed: int = 0

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"unknown model_kind {self.model_kind!r}, "
                             f"expected one of {MODEL_KINDS}")
        if self.reg_type not in REG_TYPES:
            raise ValueError(f"unknown reg_type {self.reg_type!r}, expected 'A' or 'B'")
        if self.attention_input not in ATTENTION_INPUTS:
            raise ValueError(f"unknown attention_input {self.attention_input!r}")
        if self.n_blocks < 1:
            raise ValueError(f"n_blocks must be >= 1, got {self.n_blocks}")
        if self.model_kind == "seranet" and self.n_blocks < 2:
            raise ValueError("seranet needs n_blocks >= 2: the attention module "
                             "consumes the output of block N-1")
        if self.recurrences < 0:
            raise ValueError(f"recurrences must be >= 0, got {self.recurrences}")


def attention_combine(x: torch.Tensor, s: torch.Tensor) -> torch.Tensor:
    """Weight a 2-channel image by each class probability map.

    Returns 8 channels ordered group-major: (s1*re, s1*im, s2*re, s2*im, ...).
    Because the class maps sum to one per pixel, the pairwise sum of the
    four groups reconstructs the input exactly.
    """
    if x.shape[-2:] != s.shape[-2:]:
        raise ValueError(f"image {tuple(x.shape)} and segmentation {tuple(s.shape)} "
                         f"spatial dims disagree")
    deviation = (s.sum(dim=-3) - 1.0).abs().max()
    if deviation > NORMALIZATION_TOL:
        raise ValueError(f"segmentation maps are not softmax-normalized: "
                         f"per-pixel channel sums deviate from 1 by {deviation:.3e}")
    groups = s.unsqueeze(-3) * x.unsqueeze(-4)  # (..., classes, 2, H, W)
    return groups.reshape(*x.shape[:-3], -1, *x.shape[-2:])


class ReconNet(nn.Module):
    """Unrolled reconstruction: N regularization blocks, each followed by
    hard data consistency.

    ``forward`` returns the images after block N-1 and after block N (both
    post-DC); for N == 1 the first element is the zero-filling input.
    """

    def __init__(self, n_blocks: int, reg_type: str, reg_channels: int):
        super().__init__()
        if n_blocks < 1:
            raise ValueError(f"need at least one block, got {n_blocks}")
        self.blocks = nn.ModuleList(
            make_reg_block(reg_type, 2, reg_channels) for _ in range(n_blocks))

    def forward(self, y, mask):
        x = zero_fill(y)
        x_prev = x
        for i, block in enumerate(self.blocks):
            if i == len(self.blocks) - 1:
                x_prev = x
            x = data_consistency(block(x), y, mask)
        return x_prev, x


class SERANet(nn.Module):
    """Segmentation from k-space with recurrent, segmentation-driven attention.

    One forward: unrolled reconstruction produces an initial image and an
    initial segmentation; each of the T recurrences weights the image
    features by the previous class maps, extracts new features through the
    8-channel attention block plus data consistency, and re-segments with
    the shared recurrent segmenter.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        if config.n_blocks < 2:
            raise ValueError("seranet needs n_blocks >= 2")
        self.config = config
        self.recurrences = config.recurrences
        self.attention_input = config.attention_input
        self.recon = ReconNet(config.n_blocks, config.reg_type, config.reg_channels)
        self.attreg = make_reg_block(config.reg_type, 2 * config.classes,
                                     config.reg_channels)
        self.segmenter = PaddedSegmenter(RecurrentUNet(
            2, config.classes, config.unet_base_channels, config.lstm_hidden_channels))

    def attention_refine(self, x_base, s_prev, y, mask):
        """One attention pass: combine, regularize, project onto the data."""
        x_att = attention_combine(x_base, s_prev)
        return data_consistency(self.attreg(x_att), y, mask)

    def forward(self, y, mask):
        x_prev, x0 = self.recon(y, mask)
        s, state = self.segmenter(x0, None)
        s_list = [s]
        x_list = [x0]
        x_base = x_prev
        for _ in range(self.recurrences):
            x_t = self.attention_refine(x_base, s_list[-1], y, mask)
            s, state = self.segmenter(x_t, state)
            s_list.append(s)
            x_list.append(x_t)
            if self.attention_input == "previous_x":
                x_base = x_t
        return {"s_list": s_list, "x_list": x_list, "x_prev": x_prev}


class OneStepNet(nn.Module):
    """Direct segmentation of the zero-filling image, no reconstruction."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.segmenter = PaddedSegmenter(RecurrentUNet(
            2, config.classes, config.unet_base_channels, config.lstm_hidden_channels))

    def forward(self, y, mask):
        x0 = zero_fill(y)
        s, _ = self.segmenter(x0, None)
        return {"s_list": [s], "x_list": [x0]}


class JointNet(nn.Module):
    """Unrolled reconstruction followed by one segmentation pass.

    Same graph for the jointly-trained baseline and the two-phase baseline;
    only the training procedure differs.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.recon = ReconNet(config.n_blocks, config.reg_type, config.reg_channels)
        self.segmenter = PaddedSegmenter(RecurrentUNet(
            2, config.classes, config.unet_base_channels, config.lstm_hidden_channels))

    def forward(self, y, mask):
        x_prev, x = self.recon(y, mask)
        s, _ = self.segmenter(x, None)
        return {"s_list": [s], "x_list": [x], "x_prev": x_prev}


def _param_seed(weight_seed: int, name: str) -> int:
    digest = hashlib.blake2b(f"{weight_seed}:{name}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") & ((1 << 63) - 1)


def init_parameters(module: nn.Module, weight_seed: int) -> None:
    """Fan-in-scaled uniform init, seeded per parameter name.

    Weights are drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases start
    at zero. Seeding by name makes the init independent of construction
    order and identical for equally-named submodules across model kinds.
    """
    for name, param in sorted(module.named_parameters(), key=lambda kv: kv[0]):
        with torch.no_grad():
            if param.ndim <= 1:
                param.zero_()
                continue
            fan_in = int(param.shape[1]) * int(param[0, 0].numel())
            bound = 1.0 / math.sqrt(fan_in)
            gen = torch.Generator().manual_seed(_param_seed(weight_seed, name))
            values = torch.empty(param.shape, dtype=torch.float32)
            values.uniform_(-bound, bound, generator=gen)
            param.copy_(values.to(param.dtype))


def build_model(config: ModelConfig) -> nn.Module:
    """Construct and deterministically initialize the configured model."""
    if config.model_kind == "seranet":
        model = SERANet(config)
    elif config.model_kind == "one_step":
        model = OneStepNet(config)
    elif config.model_kind in ("joint", "two_step"):
        model = JointNet(config)
    else:  # pragma: no cover - ModelConfig already validates
        raise ValueError(f"unknown model_kind {config.model_kind!r}")
    init_parameters(model, config.weight_seed)
    return model


def zero_parameters(module: nn.Module) -> None:
    """Zero every learnable weight; reduces all blocks to their residual paths."""
    with torch.no_grad():
        for param in module.parameters():
            param.zero_()
