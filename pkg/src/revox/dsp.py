"""Short-time Fourier analysis/synthesis and WAV file I/O.

This is the time-frequency front end shared by every other module. All
audio is mono, 16 kHz, amplitudes in [-1, 1]. The default analysis uses a
20 ms periodic Hamming window with 50% overlap and a 320-point FFT, which
yields 161 frequency bins per frame.

Conventions (fixed here, consumed everywhere else):

* Before framing, the signal is reflect-padded by ``win_length // 2``
  samples on both ends, so every sample is covered by a full window and
  the frame count depends only on length and hop.
* Synthesis is weighted overlap-add with synthesis window
  ``w[n] / sum_k w[n - k*hop]^2``, which reconstructs exactly at 50%
  overlap; the reflect padding is trimmed symmetrically.
* Where a magnitude is <= 1e-12 the phase is taken to be zero
  (unit phasor ``1+0j``).
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InvalidInputError

SAMPLE_RATE = 16000

#: Magnitudes at or below this are treated as zero for phase purposes.
EPS_MAG = 1e-12

_PCM_FULL_SCALE = 32767.0


def _hamming_periodic(n: int) -> np.ndarray:
    # periodic (DFT-even) variant, required for clean overlap-add at hop = n/2
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * np.arange(n) / n)


_WINDOWS = {"hamming": _hamming_periodic}


@dataclass(frozen=True)
class StftConfig:
    """Analysis/synthesis parameters. The defaults give F = 161 bins."""

    win_length: int = 320
    hop_length: int = 160
    fft_size: int = 320
    window: str = "hamming"

    def __post_init__(self):
        if self.hop_length * 2 != self.win_length:
            raise InvalidInputError(
                f"hop_length must be win_length/2 (50% overlap), "
                f"got win={self.win_length} hop={self.hop_length}"
            )
        if self.fft_size < self.win_length:
            raise InvalidInputError(
                f"fft_size {self.fft_size} < win_length {self.win_length}"
            )
        if self.window not in _WINDOWS:
            raise InvalidInputError(f"unknown window {self.window!r}")

    @property
    def freq_bins(self) -> int:
        return self.fft_size // 2 + 1

    def window_values(self) -> np.ndarray:
        return _WINDOWS[self.window](self.win_length)


DEFAULT_STFT = StftConfig()


@dataclass
class Waveform:
    """Mono audio samples at 16 kHz."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise InvalidInputError(
                f"waveform must be 1-D (mono), got shape {self.samples.shape}"
            )
        if self.sample_rate != SAMPLE_RATE:
            raise InvalidInputError(
                f"sample rate must be {SAMPLE_RATE} Hz, got {self.sample_rate}"
            )
        if not np.all(np.isfinite(self.samples)):
            raise InvalidInputError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return len(self.samples)

    def __array__(self, dtype=None):
        return self.samples if dtype is None else self.samples.astype(dtype)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class ComplexSpectrogram:
    """T x F grid of complex time-frequency coefficients."""

    data: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim != 2:
            raise InvalidInputError(f"spectrogram must be T x F, got {self.data.shape}")
        if self.data.shape[1] != self.config.freq_bins:
            raise InvalidInputError(
                f"expected {self.config.freq_bins} frequency bins, "
                f"got {self.data.shape[1]}"
            )
        if not np.all(np.isfinite(self.data)):
            raise InvalidInputError("spectrogram contains non-finite entries")

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    def __array__(self, dtype=None):
        return self.data if dtype is None else self.data.astype(dtype)


@dataclass
class MagnitudeSpectrogram:
    """T x F grid of nonnegative real magnitudes."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise InvalidInputError(f"magnitudes must be T x F, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise InvalidInputError("magnitudes contain non-finite entries")
        if np.any(self.data < 0):
            raise InvalidInputError("magnitudes must be nonnegative")

    def __array__(self, dtype=None):
        return self.data if dtype is None else self.data.astype(dtype)


def _frame_signal(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Reflect-pad then slice into overlapping frames, shape (T, win)."""
    if len(x) < cfg.win_length:
        x = np.pad(x, (0, cfg.win_length - len(x)))
    pad = cfg.win_length // 2
    xp = np.pad(x, (pad, pad), mode="reflect")
    n_frames = (len(xp) - cfg.win_length) // cfg.hop_length + 1
    view = np.lib.stride_tricks.sliding_window_view(xp, cfg.win_length)
    return view[:: cfg.hop_length][:n_frames]


def stft(wave_in, cfg: StftConfig = DEFAULT_STFT) -> ComplexSpectrogram:
    """Analyze a waveform into a T x F complex spectrogram.

    Inputs shorter than one window are zero-padded up to one window. The
    frame count is ``floor((len + win) - win) / hop) + 1`` after reflect
    padding, i.e. ``len // hop + 1`` for inputs of at least one window.
    """
    x = np.asarray(wave_in, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidInputError(f"expected mono signal, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("input contains non-finite samples")
    frames = _frame_signal(x, cfg)
    spec = np.fft.rfft(frames * cfg.window_values(), n=cfg.fft_size, axis=1)
    return ComplexSpectrogram(spec, cfg)


def _istft_bounds(n_frames: int, cfg: StftConfig) -> tuple[int, int]:
    """Valid target_len range for a spectrogram with ``n_frames`` frames."""
    nominal = (n_frames - 1) * cfg.hop_length
    lo = max(1, nominal - cfg.win_length)
    hi = nominal + cfg.win_length // 2  # cap: samples actually reconstructable
    return lo, hi


def istft(spec, cfg: StftConfig | None = None, target_len: int | None = None) -> Waveform:
    """Synthesize a waveform of ``target_len`` samples from a spectrogram.

    Weighted overlap-add with the window-squared normalization; the
    reflect padding applied by :func:`stft` is trimmed symmetrically.
    ``target_len`` must agree with the frame count to within one window.

    Spectrograms too short to have come from the analysis path (fewer
    than 3 frames, e.g. hand-built single frames) are resynthesized
    without edge trimming.
    """
    if isinstance(spec, ComplexSpectrogram):
        cfg = spec.config if cfg is None else cfg
        data = spec.data
    else:
        cfg = DEFAULT_STFT if cfg is None else cfg
        data = np.asarray(spec, dtype=np.complex128)
    n_frames, n_bins = data.shape
    if n_bins != cfg.freq_bins:
        raise InvalidInputError(
            f"expected {cfg.freq_bins} frequency bins, got {n_bins}"
        )
    win = cfg.win_length
    hop = cfg.hop_length
    pad = win // 2
    plen = (n_frames - 1) * hop + win
    if target_len is None:
        target_len = (n_frames - 1) * hop if n_frames >= 3 else plen

    trimmed = n_frames >= 3
    if trimmed:
        lo, hi = _istft_bounds(n_frames, cfg)
        if not lo <= target_len <= hi:
            raise InvalidInputError(
                f"target_len {target_len} inconsistent with {n_frames} frames "
                f"(valid range [{lo}, {hi}])"
            )
    elif not 1 <= target_len <= plen:
        raise InvalidInputError(
            f"target_len {target_len} out of range [1, {plen}] for "
            f"{n_frames} frames"
        )

    w = cfg.window_values()
    frames = np.fft.irfft(data, n=cfg.fft_size, axis=1)[:, :win]
    num = np.zeros(plen)
    den = np.zeros(plen)
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    np.add.at(num, idx, frames * w)
    np.add.at(den, idx, np.broadcast_to(w * w, (n_frames, win)))
    y = num / np.maximum(den, EPS_MAG)
    start = pad if trimmed else 0
    return Waveform(y[start : start + target_len])


def split_mag_phase(spec) -> tuple[MagnitudeSpectrogram, ComplexSpectrogram]:
    """Split a complex spectrogram into magnitude and unit-modulus phasors.

    ``magnitude * phasors`` reconstructs the input. Where the magnitude is
    <= 1e-12 the phasor is exactly ``1+0j`` (zero-phase convention).
    """
    if isinstance(spec, ComplexSpectrogram):
        data, cfg = spec.data, spec.config
    else:
        data = np.asarray(spec, dtype=np.complex128)
        cfg = StftConfig(
            win_length=2 * (data.shape[1] - 1),
            hop_length=data.shape[1] - 1,
            fft_size=2 * (data.shape[1] - 1),
        )
    mag = np.abs(data)
    phasor = np.where(mag > EPS_MAG, data / np.where(mag > EPS_MAG, mag, 1.0), 1.0 + 0.0j)
    return MagnitudeSpectrogram(mag), ComplexSpectrogram(phasor, cfg)


def read_wav(path) -> Waveform:
    """Read a mono 16 kHz 16-bit PCM RIFF file.

    Anything else (other rates, channel counts, sample widths or
    encodings) raises :class:`FormatError` naming the offending property;
    there is no silent resampling.
    """
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            rate = wf.getframerate()
            width = wf.getsampwidth()
            comp = wf.getcomptype()
            if n_channels != 1:
                raise FormatError(
                    f"{path}: expected 1 channel (mono), got {n_channels}"
                )
            if rate != SAMPLE_RATE:
                raise FormatError(
                    f"{path}: expected sample rate {SAMPLE_RATE} Hz, got {rate}"
                )
            if comp != "NONE":
                raise FormatError(f"{path}: expected PCM encoding, got {comp!r}")
            if width != 2:
                raise FormatError(
                    f"{path}: expected 16-bit samples, got {8 * width}-bit"
                )
            raw = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        raise FormatError(f"{path}: not a readable RIFF/PCM file ({exc})") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / _PCM_FULL_SCALE
    return Waveform(samples)


def write_wav(path, wave_out: Waveform) -> None:
    """Write 16-bit PCM mono at 16 kHz. Samples are clipped to [-1, 1]."""
    x = np.clip(np.asarray(wave_out, dtype=np.float64), -1.0, 1.0)
    pcm = np.round(x * _PCM_FULL_SCALE).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(SAMPLE_RATE)
        wf.writeframes(pcm.tobytes())
