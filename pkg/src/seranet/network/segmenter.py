"""Recurrent UNet segmenter: 4 resolution levels with a ConvLSTM bottleneck.

The ConvLSTM carries spatial state across the repeated segmentation passes
of one forward; state is zero-initialized per input sample and never
shared across samples.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import ConvLSTMCell, _upsample_to

DOWNSAMPLE_FACTOR = 16  # 4 pooling stages


class _DoubleConv(nn.Module):
    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)

    def forward(self, x):
        return F.relu(self.conv2(F.relu(self.conv1(x))))


class RecurrentUNet(nn.Module):
    """UNet over (B, 2, H, W) images with a ConvLSTM cell at the bottleneck.

    Requires H and W divisible by 16; use ``PaddedSegmenter`` for arbitrary
    sizes. Output is a per-pixel softmax over the tissue classes.
    """

    def __init__(self, in_channels: int = 2, classes: int = 4,
                 base_channels: int = 32, lstm_hidden_channels: int = 64):
        super().__init__()
        b = base_channels
        self.enc1 = _DoubleConv(in_channels, b)
        self.enc2 = _DoubleConv(b, 2 * b)
        self.enc3 = _DoubleConv(2 * b, 4 * b)
        self.enc4 = _DoubleConv(4 * b, 8 * b)
        self.lstm = ConvLSTMCell(8 * b, lstm_hidden_channels)
        self.dec4 = nn.Conv2d(lstm_hidden_channels + 8 * b, 4 * b, 3, padding=1)
        self.dec3 = nn.Conv2d(4 * b + 4 * b, 2 * b, 3, padding=1)
        self.dec2 = nn.Conv2d(2 * b + 2 * b, b, 3, padding=1)
        self.dec1 = nn.Conv2d(b + b, b, 3, padding=1)
        self.head = nn.Conv2d(b, classes, 1)

    def init_state(self, x: torch.Tensor):
        b, _, h, w = x.shape
        if h % DOWNSAMPLE_FACTOR or w % DOWNSAMPLE_FACTOR:
            raise ValueError(f"input dims must be divisible by {DOWNSAMPLE_FACTOR}, "
                             f"got {h}x{w}")
        hb, wb = h // DOWNSAMPLE_FACTOR, w // DOWNSAMPLE_FACTOR
        zeros = x.new_zeros((b, self.lstm.hidden_channels, hb, wb))
        return zeros, zeros.clone()

    def forward(self, x, state=None):
        h, w = x.shape[-2:]
        if h % DOWNSAMPLE_FACTOR or w % DOWNSAMPLE_FACTOR:
            raise ValueError(f"input dims must be divisible by {DOWNSAMPLE_FACTOR}, "
                             f"got {h}x{w}")
        if state is None:
            state = self.init_state(x)

        e1 = self.enc1(x)
        e2 = self.enc2(F.max_pool2d(e1, 2))
        e3 = self.enc3(F.max_pool2d(e2, 2))
        e4 = self.enc4(F.max_pool2d(e3, 2))
        h_next, c_next = self.lstm(F.max_pool2d(e4, 2), state)

        d4 = F.relu(self.dec4(torch.cat((_upsample_to(h_next, e4), e4), dim=1)))
        d3 = F.relu(self.dec3(torch.cat((_upsample_to(d4, e3), e3), dim=1)))
        d2 = F.relu(self.dec2(torch.cat((_upsample_to(d3, e2), e2), dim=1)))
        d1 = F.relu(self.dec1(torch.cat((_upsample_to(d2, e1), e1), dim=1)))
        s = torch.softmax(self.head(d1), dim=1)
        return s, (h_next, c_next)


def _pad_amounts(h, w, multiple=DOWNSAMPLE_FACTOR):
    pad_h = (-h) % multiple
    pad_w = (-w) % multiple
    # (left, right, top, bottom) as F.pad expects for the last two dims
    return (pad_w // 2, pad_w - pad_w // 2, pad_h // 2, pad_h - pad_h // 2)


class PaddedSegmenter(nn.Module):
    """Reflect-pads inputs to the next 16-divisible size and crops outputs.

    The ConvLSTM state lives at the padded resolution, which is constant
    across the passes of one forward since the input size never changes.
    """

    def __init__(self, unet: RecurrentUNet):
        super().__init__()
        self.unet = unet

    def forward(self, x, state=None):
        h, w = x.shape[-2:]
        pads = _pad_amounts(h, w)
        if any(pads):
            x = F.pad(x, pads, mode="reflect")
        s, state = self.unet(x, state)
        if any(pads):
            left, _, top, _ = pads
            s = s[..., top:top + h, left:left + w]
        return s, state
