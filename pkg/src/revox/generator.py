"""Recursive dynamic-attention generator.

The generator maps a noisy magnitude spectrogram to a sequence of Q
successively refined magnitude estimates. Each stage runs three
sub-networks:

* a stage-recurrent memory (conv-GRU) carrying a hidden feature map
  between stages,
* an attention network emitting per-layer sigmoid gates from the noisy
  input and the previous estimate,
* a gated convolutional encoder/decoder (the noise-removal network)
  producing the stage's magnitude estimate through a softplus head.

Stage 1 bootstraps with the noisy magnitude as the previous estimate and
a zero memory. All convolutions are causal along time. Supervision is
applied to the final stage only (see :mod:`revox.training`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import InvalidInputError
from .nnutil import init_params


@dataclass(frozen=True)
class GeneratorConfig:
    num_stages: int = 3
    feature_channels: tuple = (16, 32, 64, 64, 64)
    attention_channels: tuple = (16, 16, 32)
    srnn_hidden: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.num_stages < 1:
            raise InvalidInputError(f"num_stages must be >= 1, got {self.num_stages}")
        for name in ("feature_channels", "attention_channels"):
            chans = getattr(self, name)
            object.__setattr__(self, name, tuple(int(c) for c in chans))
            if not chans or any(c < 1 for c in chans):
                raise InvalidInputError(f"{name} must be nonempty positive, got {chans}")
        if self.srnn_hidden < 1:
            raise InvalidInputError(f"srnn_hidden must be >= 1, got {self.srnn_hidden}")


@dataclass
class StageState:
    """SRNN memory carried between stages; h is (batch, hidden, T, F)."""

    h: torch.Tensor

    def zeros_like(self) -> "StageState":
        return StageState(torch.zeros_like(self.h))


@dataclass
class AttentionVector:
    """One sigmoid gate map per gated noise-removal layer.

    Each entry has shape (batch, layer_channels, T, 1) and is broadcast
    over frequency when applied.
    """

    gates: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.gates)

    def __len__(self):
        return len(self.gates)


def _causal_time_pad(x: torch.Tensor) -> torch.Tensor:
    # one past frame for the (2, .) kernels; keeps T and causality
    return F.pad(x, (0, 0, 1, 0))


class StageMemory(nn.Module):
    """Convolutional GRU over stages (not over time)."""

    def __init__(self, hidden: int):
        super().__init__()
        self.hidden = hidden
        self.in_proj = nn.Conv2d(2, hidden, (1, 3), padding=(0, 1))
        self.gate_conv = nn.Conv2d(2 * hidden, 2 * hidden, (1, 3), padding=(0, 1))
        self.cand_conv = nn.Conv2d(2 * hidden, hidden, (1, 3), padding=(0, 1))

    def forward(self, noisy, prev_est, h):
        x = self.in_proj(torch.cat([noisy, prev_est], dim=1))
        zr = torch.sigmoid(self.gate_conv(torch.cat([x, h], dim=1)))
        z, r = zr.chunk(2, dim=1)
        cand = torch.tanh(self.cand_conv(torch.cat([x, r * h], dim=1)))
        return (1.0 - z) * h + z * cand

    def initial_state(self, batch, t, f, dtype, device) -> StageState:
        return StageState(torch.zeros(batch, self.hidden, t, f, dtype=dtype, device=device))


class AttentionGates(nn.Module):
    """Strided conv trunk + per-layer point-wise convs and sigmoids.

    The trunk downsamples frequency; its output is mean-pooled over
    frequency so each head emits a per-channel, per-frame gate.
    """

    def __init__(self, trunk_channels, gate_channels):
        super().__init__()
        trunk = []
        in_ch = 2
        for ch in trunk_channels:
            trunk.append(nn.Conv2d(in_ch, ch, (2, 3), stride=(1, 2), padding=(0, 1)))
            in_ch = ch
        self.trunk = nn.ModuleList(trunk)
        self.heads = nn.ModuleList(
            nn.Conv2d(in_ch, ch, kernel_size=1) for ch in gate_channels
        )

    def forward(self, noisy, prev_est) -> AttentionVector:
        x = torch.cat([noisy, prev_est], dim=1)
        for conv in self.trunk:
            x = F.elu(conv(_causal_time_pad(x)))
        pooled = x.mean(dim=3, keepdim=True)
        return AttentionVector([torch.sigmoid(head(pooled)) for head in self.heads])


class NoiseRemoval(nn.Module):
    """Gated conv encoder/decoder over the T x F magnitude grid.

    Mirrored blocks with skip connections; frequency is halved per
    encoder block (ceil division) and restored by transposed convs.
    The 1x1 softplus head keeps outputs nonnegative.
    """

    def __init__(self, channels, srnn_hidden: int):
        super().__init__()
        self.channels = tuple(channels)
        in_ch = 2 + srnn_hidden
        self.encoder = nn.ModuleList()
        for ch in self.channels:
            self.encoder.append(nn.Conv2d(in_ch, ch, (2, 3), stride=(1, 2), padding=(0, 1)))
            in_ch = ch
        # decoder mirrors the encoder: block i consumes the running
        # features concatenated with the matching-width encoder output
        dec_out = list(self.channels[-2::-1]) + [self.channels[0]]
        self.decoder = nn.ModuleList()
        run_ch = self.channels[-1]
        for i, out_ch in enumerate(dec_out):
            skip_ch = 0 if i == 0 else self.channels[-1 - i]
            self.decoder.append(
                nn.ConvTranspose2d(run_ch + skip_ch, out_ch, (2, 3), stride=(1, 2), padding=(0, 1))
            )
            run_ch = out_ch
        self.head = nn.Conv2d(run_ch, 1, kernel_size=1)

    @property
    def num_gated_layers(self) -> int:
        return 2 * len(self.channels)

    def gate_channels(self) -> list:
        dec_out = list(self.channels[-2::-1]) + [self.channels[0]]
        return list(self.channels) + dec_out

    @staticmethod
    def width_chain(f_bins: int, n_blocks: int) -> list:
        widths = [f_bins]
        for _ in range(n_blocks):
            widths.append((widths[-1] + 1) // 2)
        return widths

    def forward(self, noisy, prev_est, h, gates: AttentionVector):
        if len(gates) != self.num_gated_layers:
            raise InvalidInputError(
                f"expected {self.num_gated_layers} gate maps, got {len(gates)}"
            )
        t_frames = noisy.shape[2]
        widths = self.width_chain(noisy.shape[3], len(self.channels))
        x = torch.cat([noisy, prev_est, h], dim=1)
        skips = []
        gate_iter = iter(gates)
        for conv in self.encoder:
            x = F.elu(conv(_causal_time_pad(x))) * next(gate_iter)
            skips.append(x)
        for i, deconv in enumerate(self.decoder):
            if i > 0:
                x = torch.cat([x, skips[-1 - i]], dim=1)
            x = deconv(x)[:, :, :t_frames, :]
            target_w = widths[len(self.decoder) - 1 - i]
            if x.shape[3] > target_w:
                x = x[:, :, :, :target_w]
            elif x.shape[3] < target_w:
                x = F.pad(x, (0, target_w - x.shape[3]))
            x = F.elu(x) * next(gate_iter)
        return F.softplus(self.head(x))


class Generator(nn.Module):
    """Full recursive generator; parameters are addressed by layer path."""

    def __init__(self, config: GeneratorConfig = GeneratorConfig()):
        super().__init__()
        self.config = config
        self.srnn = StageMemory(config.srnn_hidden)
        self.nrm = NoiseRemoval(config.feature_channels, config.srnn_hidden)
        self.agm = AttentionGates(config.attention_channels, self.nrm.gate_channels())
        init_params(self, config.seed)

    def forward(self, noisy: torch.Tensor) -> list:
        """Run all stages; returns the Q magnitude estimates (B, 1, T, F)."""
        b, _, t, f = noisy.shape
        state = self.srnn.initial_state(b, t, f, noisy.dtype, noisy.device)
        prev = noisy
        estimates = []
        for _ in range(self.config.num_stages):
            state = StageState(self.srnn(noisy, prev, state.h))
            gates = self.agm(noisy, prev)
            est = self.nrm(noisy, prev, state.h, gates)
            estimates.append(est)
            prev = est
        return estimates


def _as_b1tf(mag, dtype=None, device=None) -> torch.Tensor:
    if isinstance(mag, torch.Tensor):
        x = mag
    else:
        x = torch.as_tensor(np.asarray(mag, dtype=np.float32))
    if x.dim() == 2:
        x = x[None, None]
    elif x.dim() == 3:
        x = x[:, None]
    if x.dim() != 4:
        raise InvalidInputError(f"expected (T,F) or (B,T,F) magnitudes, got {tuple(mag.shape)}")
    if dtype is not None:
        x = x.to(dtype)
    if device is not None:
        x = x.to(device)
    return x


def _check_same_shape(noisy, prev_est):
    if noisy.shape != prev_est.shape:
        raise InvalidInputError(
            f"shape mismatch: noisy {tuple(noisy.shape)} vs previous estimate "
            f"{tuple(prev_est.shape)}"
        )


def srnn_step(noisy_mag, prev_est, prev_state: StageState, gen: Generator) -> StageState:
    """One memory update. At stage 1 pass prev_est = noisy_mag and a zero state."""
    noisy = _as_b1tf(noisy_mag)
    prev = _as_b1tf(prev_est, dtype=noisy.dtype)
    _check_same_shape(noisy, prev)
    expect = (noisy.shape[0], gen.config.srnn_hidden, noisy.shape[2], noisy.shape[3])
    if tuple(prev_state.h.shape) != expect:
        raise InvalidInputError(
            f"state shape {tuple(prev_state.h.shape)} does not match input, expected {expect}"
        )
    with torch.no_grad():
        return StageState(gen.srnn(noisy, prev, prev_state.h))


def attention_forward(noisy_mag, prev_est, gen: Generator) -> AttentionVector:
    """Gates in (0,1), one map per gated noise-removal layer."""
    noisy = _as_b1tf(noisy_mag)
    prev = _as_b1tf(prev_est, dtype=noisy.dtype)
    _check_same_shape(noisy, prev)
    with torch.no_grad():
        return gen.agm(noisy, prev)


def nrm_forward(noisy_mag, prev_est, state: StageState, gates: AttentionVector,
                gen: Generator) -> np.ndarray:
    """One noise-removal pass; returns a T x F nonnegative array."""
    noisy = _as_b1tf(noisy_mag)
    prev = _as_b1tf(prev_est, dtype=noisy.dtype)
    _check_same_shape(noisy, prev)
    with torch.no_grad():
        out = gen.nrm(noisy, prev, state.h, gates)
    return out[0, 0].cpu().numpy()


def generator_forward(noisy_mag, gen: Generator) -> list:
    """All Q stage estimates for one utterance, each T x F (numpy)."""
    noisy = _as_b1tf(noisy_mag)
    with torch.no_grad():
        ests = gen(noisy)
    return [e[0, 0].cpu().numpy() for e in ests]


def initial_state(gen: Generator, t_frames: int, f_bins: int, batch: int = 1,
                  dtype=torch.float32) -> StageState:
    return gen.srnn.initial_state(batch, t_frames, f_bins, dtype, "cpu")
