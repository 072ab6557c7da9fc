"""Learnable building blocks: regularization blocks and the ConvLSTM cell."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

IMAGE_CHANNELS = 2  # real + imaginary


class CascadeRegBlock(nn.Module):
    """Type A regularization block: a plain cascade of 3x3 convolutions.

    Five conv layers with ReLU in between, the last one mapping back to two
    channels, plus a residual connection carrying the input image. For
    attention-weighted inputs the residual sums the per-class copies, which
    restores the unmodulated image because the class maps sum to one.
    """

    def __init__(self, in_channels: int = 2, channels: int = 64, n_layers: int = 5):
        super().__init__()
        self.in_channels = in_channels
        layers = []
        prev = in_channels
        for _ in range(n_layers - 1):
            layers.append(nn.Conv2d(prev, channels, 3, padding=1))
            prev = channels
        layers.append(nn.Conv2d(prev, IMAGE_CHANNELS, 3, padding=1))
        self.convs = nn.ModuleList(layers)

    def forward(self, x):
        _check_channels(x, self.in_channels)
        h = x
        for conv in self.convs[:-1]:
            h = F.relu(conv(h))
        return self.convs[-1](h) + _image_residual(x)


class AutoencoderRegBlock(nn.Module):
    """Type B regularization block: 3-scale encoder/decoder with skips.

    Two 2x downsamplings, symmetric upsampling with skip concatenation,
    two-channel output and the same residual rule as Type A.
    """

    def __init__(self, in_channels: int = 2, channels: int = 64):
        super().__init__()
        self.in_channels = in_channels
        c = channels
        self.enc1 = nn.Conv2d(in_channels, c, 3, padding=1)
        self.enc2 = nn.Conv2d(c, 2 * c, 3, padding=1)
        self.bottom = nn.Conv2d(2 * c, 2 * c, 3, padding=1)
        self.dec2 = nn.Conv2d(4 * c, c, 3, padding=1)
        self.dec1 = nn.Conv2d(2 * c, c, 3, padding=1)
        self.out = nn.Conv2d(c, IMAGE_CHANNELS, 3, padding=1)

    def forward(self, x):
        _check_channels(x, self.in_channels)
        e1 = F.relu(self.enc1(x))
        e2 = F.relu(self.enc2(F.avg_pool2d(e1, 2)))
        b = F.relu(self.bottom(F.avg_pool2d(e2, 2)))
        d2 = F.relu(self.dec2(torch.cat((_upsample_to(b, e2), e2), dim=1)))
        d1 = F.relu(self.dec1(torch.cat((_upsample_to(d2, e1), e1), dim=1)))
        return self.out(d1) + _image_residual(x)


def make_reg_block(reg_type: str, in_channels: int, channels: int) -> nn.Module:
    if reg_type == "A":
        return CascadeRegBlock(in_channels, channels)
    if reg_type == "B":
        return AutoencoderRegBlock(in_channels, channels)
    raise ValueError(f"unknown reg block type {reg_type!r}, expected 'A' or 'B'")


class ConvLSTMCell(nn.Module):
    """Single convolutional LSTM cell with 3x3 gate convolutions."""

    def __init__(self, in_channels: int, hidden_channels: int):
        super().__init__()
        self.hidden_channels = hidden_channels
        self.gates = nn.Conv2d(in_channels + hidden_channels, 4 * hidden_channels,
                               3, padding=1)

    def init_state(self, x: torch.Tensor):
        """Zero state matching the spatial dims of an input feature map."""
        b, _, h, w = x.shape
        zeros = x.new_zeros((b, self.hidden_channels, h, w))
        return zeros, zeros.clone()

    def forward(self, x, state):
        h_cur, c_cur = state
        gi, gf, go, gg = torch.split(self.gates(torch.cat((x, h_cur), dim=1)),
                                     self.hidden_channels, dim=1)
        i = torch.sigmoid(gi)
        f = torch.sigmoid(gf)
        o = torch.sigmoid(go)
        g = torch.tanh(gg)
        c_next = f * c_cur + i * g
        h_next = o * torch.tanh(c_next)
        return h_next, c_next


def _check_channels(x, expected):
    if x.ndim != 4 or x.shape[1] != expected:
        raise ValueError(f"expected input of shape (B, {expected}, H, W), "
                         f"got {tuple(x.shape)}")


def _image_residual(x):
    """Two-channel residual: the input itself, or the sum of its class copies."""
    if x.shape[1] == IMAGE_CHANNELS:
        return x
    b, c, h, w = x.shape
    return x.reshape(b, c // IMAGE_CHANNELS, IMAGE_CHANNELS, h, w).sum(dim=1)


def _upsample_to(x, ref):
    return F.interpolate(x, size=ref.shape[-2:], mode="nearest")
