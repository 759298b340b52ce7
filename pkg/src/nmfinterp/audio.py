"""Signal front-end: WAV I/O, STFT/iSTFT, log-magnitude and log-mel features, soft masking."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.io import wavfile

MASK_EPS = 1e-8


class AudioError(Exception):
    pass


class WavReadError(AudioError):
    """The file is missing or is not a parseable RIFF/WAVE file."""


class UnsupportedEncodingError(AudioError):
    """The WAV sample format is neither PCM16 nor IEEE float32."""


class WavWriteError(AudioError):
    pass


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=np.float32).reshape(-1)
        object.__setattr__(self, "samples", samples)
        if self.sample_rate <= 0:
            raise AudioError(f"sample_rate must be positive, got {self.sample_rate}")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class FrameParams:
    fft_size: int = 1024
    hop: int = 512
    window: str = "hann"

    def __post_init__(self):
        if self.fft_size < 2 or self.fft_size & (self.fft_size - 1):
            raise AudioError(f"fft_size must be a power of two, got {self.fft_size}")
        if not 1 <= self.hop <= self.fft_size:
            raise AudioError(f"hop must be in [1, fft_size], got {self.hop}")
        if self.window != "hann":
            raise AudioError(f"unsupported window {self.window!r}")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        return 1 + n_samples // self.hop


@dataclass(frozen=True)
class Spectrogram:
    """Log-magnitude ``log(1 + |S|)`` and phase ``arg(S)`` of a centered STFT."""

    log_mag: np.ndarray
    phase: np.ndarray
    frame_params: FrameParams = field(default_factory=FrameParams)
    sample_rate: int = 44100
    n_samples: int | None = None

    def __post_init__(self):
        if self.log_mag.shape != self.phase.shape:
            raise AudioError(f"log_mag {self.log_mag.shape} and phase {self.phase.shape} differ")
        if self.log_mag.ndim != 2 or self.log_mag.shape[0] != self.frame_params.n_bins:
            raise AudioError(f"expected {self.frame_params.n_bins} frequency rows, got shape {self.log_mag.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.log_mag.shape

    def with_log_mag(self, log_mag: np.ndarray) -> "Spectrogram":
        return Spectrogram(np.asarray(log_mag), self.phase, self.frame_params, self.sample_rate, self.n_samples)


@dataclass(frozen=True)
class MelSpectrogram:
    values: np.ndarray

    @property
    def mel_bands(self) -> int:
        return self.values.shape[0]


# ---------------------------------------------------------------------------
# WAV I/O


def load_wav(path: str | os.PathLike) -> Waveform:
    """Read a PCM16 or float32 WAV, averaging stereo channels to mono."""
    try:
        rate, data = wavfile.read(os.fspath(path))
    except FileNotFoundError as exc:
        raise WavReadError(f"{path}: no such file") from exc
    except (ValueError, OSError) as exc:
        text = str(exc)
        if text.startswith(("Unknown wave file format", "Unsupported bit depth")):
            raise UnsupportedEncodingError(f"{path}: {text}") from exc
        raise WavReadError(f"{path}: {text}") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise UnsupportedEncodingError(f"{path}: sample type {data.dtype} (need PCM16 or float32)")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return Waveform(samples, int(rate))


def save_wav(w: Waveform, path: str | os.PathLike) -> None:
    """Write ``w`` as a mono IEEE float32 WAV."""
    if not np.all(np.isfinite(w.samples)):
        raise WavWriteError("waveform contains non-finite samples")
    try:
        wavfile.write(os.fspath(path), int(w.sample_rate), w.samples.astype(np.float32))
    except OSError as exc:
        raise WavWriteError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# STFT


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def check_cola(cfg: FrameParams, tol: float = 1e-10) -> None:
    win = hann(cfg.fft_size)
    acc = np.zeros(cfg.hop)
    for start in range(0, cfg.fft_size, cfg.hop):
        seg = win[start:start + cfg.hop]
        acc[: len(seg)] += seg
    if np.ptp(acc) > tol * acc.max():
        raise AudioError(f"hann window with fft_size={cfg.fft_size}, hop={cfg.hop} is not constant-overlap-add")


def stft_complex(samples: np.ndarray, cfg: FrameParams) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if len(x) < cfg.fft_size:
        raise AudioError(f"waveform of {len(x)} samples is shorter than one frame ({cfg.fft_size})")
    pad = cfg.fft_size // 2
    xp = np.pad(x, (pad, pad))
    n_frames = cfg.n_frames(len(x))
    idx = np.arange(cfg.fft_size)[None, :] + cfg.hop * np.arange(n_frames)[:, None]
    frames = xp[idx] * hann(cfg.fft_size)
    return np.fft.rfft(frames, axis=1).T


def stft(w: Waveform, cfg: FrameParams = FrameParams()) -> Spectrogram:
    s = stft_complex(w.samples, cfg)
    return Spectrogram(
        log_mag=np.log1p(np.abs(s)).astype(np.float32),
        phase=np.angle(s).astype(np.float32),
        frame_params=cfg,
        sample_rate=w.sample_rate,
        n_samples=len(w.samples),
    )


def istft_complex(s: np.ndarray, cfg: FrameParams, n_samples: int | None = None) -> np.ndarray:
    check_cola(cfg)
    win = hann(cfg.fft_size)
    n_frames = s.shape[1]
    frames = np.fft.irfft(s.T, n=cfg.fft_size, axis=1) * win
    total = cfg.fft_size + cfg.hop * (n_frames - 1)
    out = np.zeros(total)
    env = np.zeros(total)
    for t in range(n_frames):
        lo = t * cfg.hop
        out[lo:lo + cfg.fft_size] += frames[t]
        env[lo:lo + cfg.fft_size] += win * win
    nz = env > 1e-10
    out[nz] /= env[nz]
    pad = cfg.fft_size // 2
    if n_samples is None:
        n_samples = cfg.hop * (n_frames - 1)
    out = out[pad:pad + n_samples]
    if len(out) < n_samples:
        out = np.pad(out, (0, n_samples - len(out)))
    return out


def istft(spec: Spectrogram) -> Waveform:
    """Invert a (possibly modified) log-magnitude spectrogram using its stored phase.

    Magnitude is ``exp(X) - 1`` clamped at zero; frames are overlap-added with
    the squared-window envelope as normalization.
    """
    X = np.asarray(spec.log_mag, dtype=np.float64)
    if np.any(X < 0):
        raise AudioError("log-magnitude spectrogram has negative entries")
    mag = np.maximum(np.expm1(X), 0.0)
    s = mag * np.exp(1j * np.asarray(spec.phase, dtype=np.float64))
    return Waveform(istft_complex(s, spec.frame_params, spec.n_samples), spec.sample_rate)


# ---------------------------------------------------------------------------
# mel features


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_bins: int, bands: int, sample_rate: int) -> np.ndarray:
    """(bands, n_bins) triangular filters equally spaced on the mel scale from 0 Hz to Nyquist."""
    if bands < 1:
        raise AudioError("bands must be >= 1")
    if bands > n_bins:
        raise AudioError(f"bands={bands} exceeds the number of frequency bins {n_bins}")
    fft_freqs = np.linspace(0.0, sample_rate / 2.0, n_bins)
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), bands + 2))
    fb = np.zeros((bands, n_bins))
    for b in range(bands):
        lo, center, hi = edges[b], edges[b + 1], edges[b + 2]
        rising = (fft_freqs - lo) / (center - lo)
        falling = (hi - fft_freqs) / (hi - center)
        fb[b] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


def log_mel(spec: Spectrogram, bands: int = 128) -> MelSpectrogram:
    fb = mel_filterbank(spec.log_mag.shape[0], bands, spec.sample_rate)
    mag = np.expm1(np.asarray(spec.log_mag, dtype=np.float64))
    return MelSpectrogram(np.log1p(fb @ mag).astype(np.float32))


# ---------------------------------------------------------------------------
# soft masking and interpretation audio


def _check_factors(spec: Spectrogram, W: np.ndarray, H: np.ndarray, components: Iterable[int]) -> list[int]:
    F, T = spec.shape
    if W.ndim != 2 or H.ndim != 2 or W.shape[0] != F or H.shape[1] != T or W.shape[1] != H.shape[0]:
        raise AudioError(f"dimension mismatch: spectrogram {spec.shape}, W {W.shape}, H {H.shape}")
    selected = sorted(set(int(k) for k in components))
    if any(k < 0 or k >= W.shape[1] for k in selected):
        raise AudioError(f"component indices {selected} outside 0..{W.shape[1] - 1}")
    return selected


def soft_masks(W: np.ndarray, H: np.ndarray, eps: float = MASK_EPS) -> np.ndarray:
    """(K, F, T) Wiener-like masks ``w_k h_k^T / sum_l w_l h_l^T``; zero where the sum is below ``eps``."""
    W = np.asarray(W, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    parts = W.T[:, :, None] * H[:, None, :]
    total = parts.sum(axis=0)
    active = total >= eps
    inv = np.where(active, 1.0 / np.where(active, total, 1.0), 0.0)
    return parts * inv


def soft_mask_components(
    spec: Spectrogram, W: np.ndarray, H: np.ndarray, components: Iterable[int]
) -> tuple[dict[int, np.ndarray], np.ndarray]:
    """Masked log-magnitude for each selected component and their sum."""
    selected = _check_factors(spec, W, H, components)
    masks = soft_masks(W, H)
    X = np.asarray(spec.log_mag, dtype=np.float64)
    per_component = {k: masks[k] * X for k in selected}
    combined = np.zeros_like(X)
    for k in selected:
        combined += per_component[k]
    return per_component, combined


def generate_interpretation_audio(
    spec: Spectrogram, W: np.ndarray, H: np.ndarray, components: Iterable[int]
) -> tuple[dict[int, Waveform], Waveform]:
    per_component, combined = soft_mask_components(spec, W, H, components)
    audio = {k: istft(spec.with_log_mag(m)) for k, m in per_component.items()}
    return audio, istft(spec.with_log_mag(combined))
