"""Variable-Q spectrogram frontend.

Filterbank: 480 log-spaced bins (60 per octave, 8 octaves from A0 = 27.5 Hz),
each a Hann-windowed complex exponential whose bandwidth follows the
variable-Q rule B_k = alpha * f_k + gamma with gamma = 20 Hz, so low bins
stay time-bounded.  Frames are centered at n * hop (hop = 160 at 16 kHz)
with reflect padding, giving exactly ceil(num_samples / hop) frames; the
output is the plain magnitude (log compression is the model's business).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import AudioFormatError, VocabularyError

SAMPLE_RATE = 16000
HOP = 160
BINS_PER_OCTAVE = 60
OCTAVES = 8
N_BINS = BINS_PER_OCTAVE * OCTAVES
GAMMA = 20.0
F_MIN = 27.5
KERNEL_TRUNCATE = 1e-4


@dataclass(frozen=True)
class VqtConfig:
    sample_rate: int = SAMPLE_RATE
    hop: int = HOP
    bins_per_octave: int = BINS_PER_OCTAVE
    octaves: int = OCTAVES
    gamma: float = GAMMA
    f_min: float = F_MIN

    @property
    def n_bins(self) -> int:
        return self.bins_per_octave * self.octaves


def bin_frequency(b: int, config: VqtConfig = VqtConfig()) -> float:
    """Center frequency of bin b: f_min * 2^(b / bins_per_octave)."""
    if not 0 <= b < config.n_bins:
        raise VocabularyError(f"bin {b} outside 0..{config.n_bins - 1}")
    return config.f_min * 2.0 ** (b / config.bins_per_octave)


@dataclass
class Spectrogram:
    """T x F magnitude matrix with its acquisition parameters."""

    data: np.ndarray  # (T, F) float32, magnitudes >= 0
    sample_rate: int = SAMPLE_RATE
    hop: int = HOP
    bins_per_octave: int = BINS_PER_OCTAVE
    octaves: int = OCTAVES
    gamma: float = GAMMA
    f_min: float = F_MIN

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def bins(self) -> int:
        return self.data.shape[1]


class VqtTransform:
    """Precomputed filterbank; immutable and shareable across threads.

    Correlation runs in the frequency domain against one-sided (analytic)
    kernel spectra, so a steady tone's per-frame magnitude is free of the
    beating a real-signal time correlation picks up from the negative
    frequency image of the very short low bins.
    """

    def __init__(self, config: VqtConfig = VqtConfig()):
        self.config = config
        sr = config.sample_rate
        # Relative bandwidth per bin for geometric spacing.
        ratio = 2.0 ** (2.0 / config.bins_per_octave)
        alpha = (ratio - 1.0) / (ratio + 1.0)
        freqs = np.array([bin_frequency(b, config) for b in range(config.n_bins)])
        nyquist = sr / 2
        if freqs[-1] >= nyquist:
            raise AudioFormatError(
                f"top bin {freqs[-1]:.1f} Hz reaches Nyquist {nyquist:.1f} Hz")
        lengths = sr / (alpha * freqs + config.gamma)
        self.kernel_length = int(math.ceil(lengths.max()))
        # Frames span twice the longest kernel: the per-frame analytic
        # operator then sees enough context around the kernel support that
        # near-DC bins are not biased by frame-edge truncation.
        self.frame_width = 2 * self.kernel_length
        self._build_kernels(freqs, lengths, sr)

    def _build_kernels(self, freqs, lengths, sr):
        width = self.frame_width
        kernels = np.zeros((len(freqs), width), dtype=np.complex128)
        for k, (f, raw_len) in enumerate(zip(freqs, lengths)):
            n = max(int(round(raw_len)), 4)
            window = np.hanning(n)
            keep = window >= KERNEL_TRUNCATE * window.max()
            window = window[keep]
            n = len(window)
            t = (np.arange(n) - (n - 1) / 2) / sr
            norm = window / window.sum()
            start = (width - n) // 2
            kernels[k, start:start + n] = norm * np.exp(2j * np.pi * f * t)
        self._n_fft = 1 << (width - 1).bit_length()
        spectra = np.fft.fft(kernels, n=self._n_fft, axis=1)
        half = spectra[:, : self._n_fft // 2 + 1]
        # Analytic-signal weights: double interior bins, keep DC/Nyquist.
        weights = np.full(self._n_fft // 2 + 1, 2.0)
        weights[0] = weights[-1] = 1.0
        # 0.5 restores the real-correlation peak convention (|X| ~ a/2).
        self._spectral = 0.5 * weights * np.conj(half) / self._n_fft

    def __call__(self, samples: np.ndarray) -> Spectrogram:
        cfg = self.config
        x = np.asarray(samples, dtype=np.float64)
        if x.ndim != 1:
            raise AudioFormatError(f"expected mono audio, got shape {x.shape}")
        n = len(x)
        frames = math.ceil(n / cfg.hop)
        if frames == 0:
            return Spectrogram(np.zeros((0, cfg.n_bins), dtype=np.float32),
                               cfg.sample_rate, cfg.hop, cfg.bins_per_octave,
                               cfg.octaves, cfg.gamma, cfg.f_min)
        width = self.frame_width
        pad = width // 2
        mode = "reflect" if n > pad else "constant"
        padded = np.pad(x, (pad, pad + cfg.hop + width), mode=mode)
        windows = np.lib.stride_tricks.sliding_window_view(padded, width)
        frame_view = windows[:: cfg.hop][:frames]
        frame_spec = np.fft.rfft(frame_view, n=self._n_fft, axis=1)
        response = frame_spec @ self._spectral.T
        mag = np.abs(response).astype(np.float32)
        return Spectrogram(mag, cfg.sample_rate, cfg.hop, cfg.bins_per_octave,
                           cfg.octaves, cfg.gamma, cfg.f_min)


@lru_cache(maxsize=4)
def _transform_for(config: VqtConfig) -> VqtTransform:
    return VqtTransform(config)


def vqt(samples: np.ndarray, config: VqtConfig = VqtConfig()) -> Spectrogram:
    """Magnitude VQT of 16 kHz mono audio (T = ceil(len / hop) frames)."""
    return _transform_for(config)(samples)


def read_wav(path) -> np.ndarray:
    """Load a 16 kHz mono WAV (PCM 16-bit or float32) as float64 in [-1, 1]."""
    try:
        sr, data = wavfile.read(path)
    except Exception as exc:
        raise AudioFormatError(f"cannot read WAV {path}: {exc}") from exc
    if sr != SAMPLE_RATE:
        raise AudioFormatError(f"sample rate {sr} != required {SAMPLE_RATE} (no resampling)")
    if data.ndim != 1:
        raise AudioFormatError(f"expected mono audio, got {data.ndim} channels")
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.int32:
        return data.astype(np.float64) / 2147483648.0
    if data.dtype in (np.float32, np.float64):
        return data.astype(np.float64)
    if data.dtype == np.uint8:
        return (data.astype(np.float64) - 128.0) / 128.0
    raise AudioFormatError(f"unsupported WAV sample format {data.dtype}")


def write_wav(path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE):
    wavfile.write(path, sample_rate, np.asarray(samples, dtype=np.float32))


def save_spectrogram(spec: Spectrogram, prefix) -> tuple[Path, Path]:
    """Write `<prefix>.json` header plus `<prefix>.bin` row-major f32 payload."""
    prefix = Path(prefix)
    header = {
        "rows": int(spec.data.shape[0]),
        "cols": int(spec.data.shape[1]),
        "dtype": "f32",
        "layout": "row-major",
        "sr": spec.sample_rate,
        "hop": spec.hop,
        "bins_per_octave": spec.bins_per_octave,
        "octaves": spec.octaves,
        "f_min": spec.f_min,
        "gamma": spec.gamma,
    }
    header_path = prefix.with_suffix(".json")
    payload_path = prefix.with_suffix(".bin")
    with open(header_path, "w", encoding="utf-8") as f:
        json.dump(header, f, sort_keys=True, indent=1)
        f.write("\n")
    with open(payload_path, "wb") as f:
        f.write(np.ascontiguousarray(spec.data, dtype="<f4").tobytes())
    return header_path, payload_path


def load_spectrogram(prefix) -> Spectrogram:
    prefix = Path(prefix)
    with open(prefix.with_suffix(".json"), "r", encoding="utf-8") as f:
        header = json.load(f)
    if header.get("dtype") != "f32" or header.get("layout") != "row-major":
        raise AudioFormatError(f"unsupported spectrogram container {header}")
    raw = np.fromfile(prefix.with_suffix(".bin"), dtype="<f4")
    rows, cols = header["rows"], header["cols"]
    if raw.size != rows * cols:
        raise AudioFormatError(
            f"payload holds {raw.size} values, header says {rows}x{cols}")
    data = raw.reshape(rows, cols)
    return Spectrogram(data, header["sr"], header["hop"],
                       header.get("bins_per_octave", BINS_PER_OCTAVE),
                       header.get("octaves", OCTAVES),
                       header["gamma"], header["f_min"])
