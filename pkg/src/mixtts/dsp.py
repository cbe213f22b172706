"""Waveform I/O, resampling, log-mel features and Griffin-Lim inversion."""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

SAMPLE_RATE = 22050
MEL_MAGIC = b"MELC"
MEL_VERSION = 1
_HEADER = struct.Struct("<4sIII")


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"waveform must be 1-D, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class MelConfig:
    sample_rate: int = SAMPLE_RATE
    n_fft: int = 1024
    hop: int = 256
    win: int = 1024
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-5

    def __post_init__(self):
        if not (0 < self.hop <= self.win <= self.n_fft):
            raise ValueError("need 0 < hop <= win <= n_fft")
        if not (0 <= self.fmin < self.fmax <= self.sample_rate / 2):
            raise ValueError("need 0 <= fmin < fmax <= sample_rate / 2")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")

    def n_frames(self, n_samples: int) -> int:
        return n_samples // self.hop + 1


@dataclass
class MelSpectrogram:
    values: np.ndarray
    config: MelConfig = field(default_factory=MelConfig)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2 or self.values.shape[0] != self.config.n_mels:
            raise ValueError(f"expected ({self.config.n_mels}, T) values, got {self.values.shape}")
        if self.values.shape[1] < 1:
            raise ValueError("mel spectrogram has no frames")

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


# -- WAV ---------------------------------------------------------------------


def read_wav(path: str | Path) -> Waveform:
    """Read 16-bit PCM; multichannel input is averaged to mono."""
    with wave.open(str(path), "rb") as fh:
        if fh.getsampwidth() != 2:
            raise ValueError(f"{path}: only 16-bit PCM is supported")
        rate = fh.getframerate()
        channels = fh.getnchannels()
        raw = fh.readframes(fh.getnframes())
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if channels > 1:
        data = data.reshape(-1, channels).mean(axis=1)
    return Waveform(data, rate)


def write_wav(path: str | Path, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(w.sample_rate))
        fh.writeframes(pcm.tobytes())


# -- binary matrix cache -----------------------------------------------------


def write_mel_cache(path: str | Path, values: np.ndarray) -> None:
    """16-byte header (magic, version, rows, cols) then float32 LE row-major."""
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError("mel cache holds 2-D matrices only")
    rows, cols = values.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MEL_MAGIC, MEL_VERSION, rows, cols))
        fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def read_mel_cache(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, version, rows, cols = _HEADER.unpack(head)
        if magic != MEL_MAGIC or version != MEL_VERSION:
            raise ValueError(f"{path}: not a mel cache file (magic={magic!r}, version={version})")
        body = fh.read()
    if len(body) != rows * cols * 4:
        raise ValueError(f"{path}: expected {rows * cols} values, found {len(body) // 4}")
    return np.frombuffer(body, dtype="<f4").reshape(rows, cols).astype(np.float32)


# -- resampling --------------------------------------------------------------


def resample(w: Waveform, target_rate: int) -> Waveform:
    if target_rate <= 0:
        raise ValueError("target rate must be positive")
    if target_rate == w.sample_rate:
        return Waveform(w.samples.copy(), w.sample_rate)
    ratio = Fraction(int(target_rate), int(w.sample_rate))
    out = resample_poly(w.samples, ratio.numerator, ratio.denominator)
    return Waveform(out, int(target_rate))


# -- STFT --------------------------------------------------------------------


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def _padded_window(n_fft: int, win: int) -> np.ndarray:
    window = np.zeros(n_fft)
    start = (n_fft - win) // 2
    window[start : start + win] = hann(win)
    return window


def stft(x: np.ndarray, n_fft: int, hop: int, win: int, center: bool = True) -> np.ndarray:
    """Complex STFT of shape (n_fft // 2 + 1, frames)."""
    x = np.asarray(x, dtype=np.float64)
    if center:
        x = np.pad(x, n_fft // 2, mode="reflect")
    if len(x) < n_fft:
        raise ValueError("signal shorter than one FFT frame")
    n_frames = 1 + (len(x) - n_fft) // hop
    frames = np.lib.stride_tricks.sliding_window_view(x, n_fft)[::hop][:n_frames]
    return np.fft.rfft(frames * _padded_window(n_fft, win), axis=1).T


def istft(spec: np.ndarray, hop: int, win: int, length: int | None = None, center: bool = True) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`."""
    n_fft = 2 * (spec.shape[0] - 1)
    window = _padded_window(n_fft, win)
    frames = np.fft.irfft(spec.T, n=n_fft, axis=1) * window
    n_frames = frames.shape[0]
    total = n_fft + hop * (n_frames - 1)
    out = np.zeros(total)
    norm = np.zeros(total)
    for i in range(n_frames):
        out[i * hop : i * hop + n_fft] += frames[i]
        norm[i * hop : i * hop + n_fft] += window**2
    nz = norm > 1e-11
    out[nz] /= norm[nz]
    if center:
        out = out[n_fft // 2 :]
        if length is None:
            length = hop * (n_frames - 1)
    if length is not None:
        out = out[:length] if len(out) >= length else np.pad(out, (0, length - len(out)))
    return out


# -- mel scale (Slaney) ------------------------------------------------------

_F_SP = 200.0 / 3
_MIN_LOG_HZ = 1000.0
_MIN_LOG_MEL = _MIN_LOG_HZ / _F_SP
_LOGSTEP = np.log(6.4) / 27.0


def hz_to_mel(f):
    f = np.asarray(f, dtype=np.float64)
    lin = f / _F_SP
    log = _MIN_LOG_MEL + np.log(np.maximum(f, _MIN_LOG_HZ) / _MIN_LOG_HZ) / _LOGSTEP
    return np.where(f >= _MIN_LOG_HZ, log, lin)


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    lin = _F_SP * m
    log = _MIN_LOG_HZ * np.exp(_LOGSTEP * (m - _MIN_LOG_MEL))
    return np.where(m >= _MIN_LOG_MEL, log, lin)


def mel_band_edges(cfg: MelConfig) -> np.ndarray:
    """n_mels + 2 frequencies: band k spans edges[k]..edges[k+2], peaking at edges[k+1]."""
    return mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))


_FILTERBANKS: dict[MelConfig, np.ndarray] = {}


def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """Area-normalized triangular filters, shape (n_mels, n_fft // 2 + 1)."""
    fb = _FILTERBANKS.get(cfg)
    if fb is not None:
        return fb
    freqs = np.linspace(0, cfg.sample_rate / 2, cfg.n_fft // 2 + 1)
    edges = mel_band_edges(cfg)
    widths = np.diff(edges)
    ramps = edges[:, None] - freqs[None, :]
    lower = -ramps[:-2] / widths[:-1, None]
    upper = ramps[2:] / widths[1:, None]
    fb = np.maximum(0, np.minimum(lower, upper))
    fb *= (2.0 / (edges[2:] - edges[:-2]))[:, None]
    fb.setflags(write=False)
    _FILTERBANKS[cfg] = fb
    return fb


def melspectrogram(w: Waveform, cfg: MelConfig = MelConfig()) -> MelSpectrogram:
    if w.sample_rate != cfg.sample_rate:
        raise ValueError(f"waveform rate {w.sample_rate} != mel config rate {cfg.sample_rate}")
    if len(w) < cfg.win:
        raise ValueError(f"waveform of {len(w)} samples is shorter than one window ({cfg.win})")
    mag = np.abs(stft(w.samples, cfg.n_fft, cfg.hop, cfg.win))
    mel = mel_filterbank(cfg) @ mag
    return MelSpectrogram(np.log(np.maximum(mel, cfg.log_floor)), cfg)


def griffin_lim_invert(m: MelSpectrogram, iterations: int = 32, seed: int = 0) -> Waveform:
    """Mel -> linear magnitude by pseudo-inverse, then Griffin-Lim phase recovery."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    values = np.asarray(m.values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("mel spectrogram contains non-finite values")
    cfg = m.config
    mag = np.maximum(np.linalg.pinv(mel_filterbank(cfg)) @ np.exp(values), 0.0)
    length = (m.n_frames - 1) * cfg.hop
    # very short inputs are run on a window-long buffer, then trimmed
    work = max(length, cfg.n_fft)
    n_work = work // cfg.hop + 1
    if n_work > mag.shape[1]:
        mag = np.pad(mag, ((0, 0), (0, n_work - mag.shape[1])))
    rng = np.random.default_rng(seed)
    angles = np.exp(2j * np.pi * rng.random(mag.shape))
    x = istft(mag * angles, cfg.hop, cfg.win, length=work)
    for _ in range(iterations):
        angles = np.exp(1j * np.angle(stft(x, cfg.n_fft, cfg.hop, cfg.win)))
        x = istft(mag * angles, cfg.hop, cfg.win, length=work)
    return Waveform(np.clip(x[:length], -1.0, 1.0), cfg.sample_rate)
