"""Convolutional-recurrent discriminator with spectral normalization.

Six spectrally-normalized conv blocks encode the magnitude grid (stride 2
on frequency, causal on time), a bidirectional LSTM models context, two
fully-connected layers compress each timestep to a scalar, and an
adaptive average pool over timesteps yields one realness score per
utterance regardless of its length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import InvalidInputError
from .generator import _as_b1tf, _causal_time_pad
from .nnutil import init_params

SIGMA_FLOOR = 1e-12


@dataclass(frozen=True)
class DiscriminatorConfig:
    conv_channels: tuple = (16, 16, 32, 32, 64, 64)
    kernel: tuple = (2, 5)
    stride: tuple = (1, 2)
    blstm_units: int = 128
    fc_units: tuple = (16, 1)
    sn_power_iters: int = 1
    f_bins: int = 161
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "kernel", tuple(self.kernel))
        object.__setattr__(self, "stride", tuple(self.stride))
        object.__setattr__(self, "fc_units", tuple(int(u) for u in self.fc_units))
        if len(self.conv_channels) != 6:
            raise InvalidInputError(
                f"exactly 6 conv blocks required, got {len(self.conv_channels)}"
            )
        if self.fc_units[-1] != 1:
            raise InvalidInputError(f"final FC width must be 1, got {self.fc_units[-1]}")
        if self.sn_power_iters < 1:
            raise InvalidInputError("sn_power_iters must be >= 1")


def _l2norm(x: torch.Tensor) -> torch.Tensor:
    return x / torch.clamp(x.norm(), min=SIGMA_FLOOR)


def spectral_normalize(weight, u, iters: int = 1):
    """Divide a 2-D weight view by its power-iteration top singular value.

    Returns ``(weight / max(sigma, 1e-12), updated_u)``. A zero weight
    matrix leaves the weight unchanged (sigma hits the floor).
    """
    w = torch.as_tensor(np.asarray(weight, dtype=np.float64)) \
        if not isinstance(weight, torch.Tensor) else weight
    uv = torch.as_tensor(np.asarray(u, dtype=np.float64)) \
        if not isinstance(u, torch.Tensor) else u
    if w.dim() != 2:
        raise InvalidInputError(f"weight must be a 2-D view, got {tuple(w.shape)}")
    if iters < 1:
        raise InvalidInputError("need at least one power iteration")
    with torch.no_grad():
        for _ in range(iters):
            v = _l2norm(w.t() @ uv)
            uv = _l2norm(w @ v)
        sigma = torch.dot(uv, w @ v)
    return w / torch.clamp(sigma, min=SIGMA_FLOOR), uv


class SNConv2d(nn.Module):
    """Conv2d whose kernel is spectrally normalized at every forward.

    In training mode the stored power-iteration vector ``u`` is advanced
    ``power_iters`` times per call (warm start); in eval mode the
    normalization is a pure function of the parameters and the frozen
    ``u``, which keeps finite differencing consistent.
    """

    def __init__(self, in_ch, out_ch, kernel, stride, power_iters=1):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(out_ch, in_ch, *kernel))
        self.bias = nn.Parameter(torch.zeros(out_ch))
        self.stride = tuple(stride)
        self.power_iters = power_iters
        u0 = torch.randn(out_ch, generator=torch.Generator().manual_seed(0))
        self.register_buffer("u", F.normalize(u0, dim=0))

    def normalized_weight(self) -> torch.Tensor:
        w2d = self.weight.view(self.weight.shape[0], -1)
        if self.training:
            with torch.no_grad():
                u = self.u
                for _ in range(self.power_iters):
                    v = _l2norm(w2d.t() @ u)
                    u = _l2norm(w2d @ v)
                self.u.copy_(u)
        else:
            with torch.no_grad():
                v = _l2norm(w2d.t() @ self.u)
                u = self.u
        sigma = torch.sum(u.detach().to(w2d.dtype) * (w2d @ v.detach().to(w2d.dtype)))
        return self.weight / torch.clamp(sigma, min=SIGMA_FLOOR)

    def forward(self, x):
        return F.conv2d(x, self.normalized_weight().to(x.dtype), self.bias.to(x.dtype),
                        stride=self.stride)


class Discriminator(nn.Module):
    """Magnitude spectrogram -> scalar realness score."""

    MIN_FRAMES = 7

    def __init__(self, config: DiscriminatorConfig = DiscriminatorConfig()):
        super().__init__()
        self.config = config
        kt, kf = config.kernel
        blocks = []
        in_ch = 1
        for ch in config.conv_channels:
            blocks.append(SNConv2d(in_ch, ch, (kt, kf), config.stride, config.sn_power_iters))
            in_ch = ch
        self.blocks = nn.ModuleList(blocks)
        feat = config.conv_channels[-1] * self.width_chain(config.f_bins)[-1]
        self.blstm = nn.LSTM(feat, config.blstm_units, batch_first=True, bidirectional=True)
        self.fc1 = nn.Linear(2 * config.blstm_units, config.fc_units[0])
        self.fc2 = nn.Linear(config.fc_units[0], config.fc_units[1])
        init_params(self, config.seed)
        with torch.no_grad():  # re-seed u buffers deterministically
            gen = torch.Generator().manual_seed(config.seed + 1)
            for blk in self.blocks:
                blk.u.copy_(F.normalize(torch.randn(blk.u.shape[0], generator=gen), dim=0))

    def width_chain(self, f_bins: int) -> list:
        """Frequency widths after each of the 6 blocks (ceil halving)."""
        kf, sf = self.config.kernel[1], self.config.stride[1]
        pad = (kf - 1) // 2
        widths = [f_bins]
        for _ in self.config.conv_channels:
            widths.append((widths[-1] + 2 * pad - kf) // sf + 1)
        return widths

    def forward(self, mag, lengths=None) -> torch.Tensor:
        """Scores of shape (batch,). ``lengths`` restricts the recurrent
        pass and the timestep pooling to real frames of a padded batch."""
        x = _as_b1tf(mag)
        if x.shape[3] != self.config.f_bins:
            raise InvalidInputError(
                f"expected {self.config.f_bins} frequency bins, got {x.shape[3]}"
            )
        if x.shape[2] < self.MIN_FRAMES:
            x = F.pad(x, (0, 0, 0, self.MIN_FRAMES - x.shape[2]))
        fpad = (self.config.kernel[1] - 1) // 2
        for blk in self.blocks:
            x = F.elu(blk(F.pad(x, (fpad, fpad, 1, 0))))
        b, c, t, w = x.shape
        seq = x.permute(0, 2, 1, 3).reshape(b, t, c * w)
        if lengths is not None:
            lens = torch.as_tensor(
                [max(int(l), 1) for l in lengths], dtype=torch.int64)
            packed = nn.utils.rnn.pack_padded_sequence(
                seq, lens, batch_first=True, enforce_sorted=False)
            out, _ = self.blstm(packed)
            seq, _ = nn.utils.rnn.pad_packed_sequence(out, batch_first=True, total_length=t)
            mask = (torch.arange(t)[None, :] < lens[:, None]).to(seq.dtype)
        else:
            seq, _ = self.blstm(seq)
            mask = torch.ones(b, t, dtype=seq.dtype)
        scores = self.fc2(F.elu(self.fc1(seq))).squeeze(-1)
        return (scores * mask).sum(dim=1) / mask.sum(dim=1)


def discriminator_forward(mag, disc: Discriminator) -> float:
    """Single-utterance realness score."""
    disc.eval()
    with torch.no_grad():
        return float(disc(mag)[0])
