import numpy as np
import pytest

from revox import dsp
from revox.errors import FormatError, InvalidInputError


def naive_stft(x, cfg):
    """Per-frame windowed DFT summation, no FFT. Oracle for dsp.stft."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) < cfg.win_length:
        x = np.pad(x, (0, cfg.win_length - len(x)))
    pad = cfg.win_length // 2
    xp = np.pad(x, (pad, pad), mode="reflect")
    w = cfg.window_values()
    n_frames = (len(xp) - cfg.win_length) // cfg.hop_length + 1
    out = np.zeros((n_frames, cfg.freq_bins), dtype=np.complex128)
    for t in range(n_frames):
        seg = xp[t * cfg.hop_length : t * cfg.hop_length + cfg.win_length] * w
        for k in range(cfg.freq_bins):
            acc = 0.0 + 0.0j
            for n in range(cfg.win_length):
                acc += seg[n] * np.exp(-2j * np.pi * k * n / cfg.fft_size)
            out[t, k] = acc
    return out


class TestStft:
    def test_default_config_gives_161_bins(self):
        rng = np.random.default_rng(0)
        wave = dsp.Waveform(rng.uniform(-0.5, 0.5, 16000))
        spec = dsp.stft(wave)
        assert spec.data.shape[1] == 161

    @pytest.mark.parametrize("length", [1, 100, 320, 480, 1000, 16000])
    def test_shape_contract_any_length(self, length):
        rng = np.random.default_rng(length)
        spec = dsp.stft(rng.uniform(-1, 1, length))
        assert spec.data.shape[1] == 161
        expected_t = max(length, 320) // 160 + 1
        assert spec.data.shape[0] == expected_t

    def test_zero_wave_gives_zero_spectrogram(self):
        spec = dsp.stft(np.zeros(1234))
        assert np.all(spec.data == 0)

    def test_matches_naive_dft_oracle(self):
        rng = np.random.default_rng(42)
        x = rng.uniform(-1, 1, 480)
        got = dsp.stft(x).data
        want = naive_stft(x, dsp.DEFAULT_STFT)
        assert got.shape == want.shape
        assert np.max(np.abs(got - want)) < 1e-9

    def test_linearity(self):
        rng = np.random.default_rng(7)
        x = rng.uniform(-1, 1, 2000)
        y = rng.uniform(-1, 1, 2000)
        lhs = dsp.stft(0.3 * x + 1.7 * y).data
        rhs = 0.3 * dsp.stft(x).data + 1.7 * dsp.stft(y).data
        assert np.max(np.abs(lhs - rhs)) < 1e-9

    def test_rejects_non_finite(self):
        x = np.zeros(1000)
        x[10] = np.nan
        with pytest.raises(InvalidInputError):
            dsp.stft(x)

    def test_rejects_non_mono(self):
        with pytest.raises(InvalidInputError):
            dsp.stft(np.zeros((2, 1000)))


class TestIstft:
    def test_zero_spectrogram_gives_zero_wave(self):
        spec = dsp.ComplexSpectrogram(np.zeros((12, 161)))
        wave = dsp.istft(spec, target_len=1600)
        assert np.all(wave.samples == 0)
        assert len(wave) == 1600

    def test_roundtrip_4800(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(-1, 1, 4800)
        back = dsp.istft(dsp.stft(x), target_len=4800)
        assert np.max(np.abs(back.samples - x)) < 1e-6

    @pytest.mark.parametrize("length", [960, 1001, 4800, 4801, 16000, 159, 321])
    def test_roundtrip_various_lengths(self, length):
        rng = np.random.default_rng(length)
        x = rng.uniform(-1, 1, length)
        back = dsp.istft(dsp.stft(x), target_len=length)
        assert np.max(np.abs(back.samples - x)) < 1e-6

    def test_single_frame_analytic_inverse(self):
        # one hand-built frame: spectrum of a windowed sinusoid recovers
        # the original 320 samples (no edge trimming possible here)
        cfg = dsp.DEFAULT_STFT
        n = np.arange(320)
        s = 0.8 * np.sin(2 * np.pi * 1000.0 * n / 16000.0)
        frame = np.fft.rfft(s * cfg.window_values(), n=320)
        wave = dsp.istft(frame[None, :], cfg, target_len=320)
        assert np.max(np.abs(wave.samples - s)) < 1e-6

    def test_inconsistent_target_len_rejected(self):
        spec = dsp.stft(np.zeros(4800))
        n_frames = spec.num_frames
        bad = (n_frames - 1) * 160 + 321
        with pytest.raises(InvalidInputError):
            dsp.istft(spec, target_len=bad)
        with pytest.raises(InvalidInputError):
            dsp.istft(spec, target_len=(n_frames - 1) * 160 - 321)


class TestSplitMagPhase:
    def test_pythagorean_entry(self):
        spec = np.full((3, 161), 3.0 + 4.0j)
        mag, phasor = dsp.split_mag_phase(spec)
        assert np.allclose(mag.data, 5.0)
        assert np.allclose(phasor.data, 0.6 + 0.8j)

    def test_zero_entry_convention(self):
        spec = np.zeros((2, 161), dtype=complex)
        mag, phasor = dsp.split_mag_phase(spec)
        assert np.all(mag.data == 0)
        assert np.all(phasor.data == 1.0 + 0.0j)

    def test_recombination_exact(self):
        rng = np.random.default_rng(11)
        spec = rng.normal(size=(50, 161)) + 1j * rng.normal(size=(50, 161))
        mag, phasor = dsp.split_mag_phase(spec)
        err = np.abs(mag.data * phasor.data - spec)
        assert np.max(err) < 1e-12
        live = np.abs(spec) > dsp.EPS_MAG
        assert np.allclose(np.abs(phasor.data[live]), 1.0, atol=1e-12)


class TestWavIO:
    def test_roundtrip_quantization_bound(self, tmp_path):
        rng = np.random.default_rng(5)
        wave = dsp.Waveform(rng.uniform(-1, 1, 8000))
        path = tmp_path / "x.wav"
        dsp.write_wav(path, wave)
        back = dsp.read_wav(path)
        assert len(back) == len(wave)
        assert np.max(np.abs(back.samples - wave.samples)) < 1.0 / 32767

    def test_stereo_rejected(self, tmp_path):
        import wave as wavemod

        path = tmp_path / "stereo.wav"
        with wavemod.open(str(path), "wb") as wf:
            wf.setnchannels(2)
            wf.setsampwidth(2)
            wf.setframerate(16000)
            wf.writeframes(b"\x00\x00" * 200)
        with pytest.raises(FormatError, match="channel"):
            dsp.read_wav(path)

    def test_wrong_rate_rejected(self, tmp_path):
        import wave as wavemod

        path = tmp_path / "48k.wav"
        with wavemod.open(str(path), "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(2)
            wf.setframerate(48000)
            wf.writeframes(b"\x00\x00" * 100)
        with pytest.raises(FormatError, match="sample rate"):
            dsp.read_wav(path)

    def test_wrong_width_rejected(self, tmp_path):
        import wave as wavemod

        path = tmp_path / "8bit.wav"
        with wavemod.open(str(path), "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(1)
            wf.setframerate(16000)
            wf.writeframes(b"\x00" * 100)
        with pytest.raises(FormatError, match="16-bit"):
            dsp.read_wav(path)

    def test_garbage_file_rejected(self, tmp_path):
        path = tmp_path / "noise.wav"
        path.write_bytes(b"definitely not riff data")
        with pytest.raises(FormatError):
            dsp.read_wav(path)


class TestTypes:
    def test_waveform_rejects_wrong_rate(self):
        with pytest.raises(InvalidInputError):
            dsp.Waveform(np.zeros(10), sample_rate=8000)

    def test_magnitude_rejects_negative(self):
        with pytest.raises(InvalidInputError):
            dsp.MagnitudeSpectrogram(np.full((2, 3), -1.0))

    def test_stft_config_invariants(self):
        with pytest.raises(InvalidInputError):
            dsp.StftConfig(win_length=320, hop_length=100)
        with pytest.raises(InvalidInputError):
            dsp.StftConfig(fft_size=256)
        assert dsp.StftConfig().freq_bins == 161
